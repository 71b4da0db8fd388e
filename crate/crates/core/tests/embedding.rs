mod common;

use common::*;
use proptest::prelude::*;
use stdn_core::graph::{spatial_embedding, SpatialEmbeddingParams};
use stdn_core::model::{
    calendar_one_hot, fuse, initial_temporal_embedding, refine_temporal_embedding, temporal_embedding,
    TemporalEmbeddingParams,
};
use stdn_core::params::ParamStore;
use stdn_core::Error;
use stdn_tensor::{Tape, Tensor};

const SPD: usize = 6;
const D: usize = 4;

fn temporal(store: &mut ParamStore<f64>, seed: u64) -> TemporalEmbeddingParams {
    let mut r = rng(seed);
    TemporalEmbeddingParams {
        w_in: param(store, &mut r, "w_in", &[SPD + 7, D], 1.0),
        w1: param(store, &mut r, "w1", &[D, D], 1.0),
        w2: param(store, &mut r, "w2", &[D, D], 1.0),
        steps_per_day: SPD,
    }
}

#[test]
fn one_hot_rows_have_two_ones_and_match_the_gather() {
    let (tod, dow) = ([0, 5, 3], [6, 0, 2]);
    let oh = calendar_one_hot::<f64>(&tod, &dow, SPD).unwrap();
    assert_eq!(oh.shape(), &[3, SPD + 7]);
    for row in oh.data().chunks(SPD + 7) {
        assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(row.iter().sum::<f64>(), 2.0);
    }
    let mut store = ParamStore::new();
    let p = temporal(&mut store, 1);
    let (_, gathered) = eval(&store, &|t, b| initial_temporal_embedding(t, &p, b, &tod, &dow).unwrap());
    let dense: Vec<f64> = mm(oh.data(), store.get(p.w_in).data(), 3, SPD + 7, D).into_iter().map(relu).collect();
    assert!(max_abs_diff(&gathered, &dense) < 1e-15);
}

#[test]
fn initial_embedding_zero_and_all_ones() {
    let mut store = ParamStore::new();
    let p = temporal(&mut store, 2);
    store.get_mut(p.w_in).data_mut().fill(0.0);
    let (_, z) = eval(&store, &|t, b| initial_temporal_embedding(t, &p, b, &[1, 2], &[3, 4]).unwrap());
    assert!(z.iter().all(|&v| v == 0.0));
    store.get_mut(p.w_in).data_mut().fill(1.0);
    let (shape, z) = eval(&store, &|t, b| initial_temporal_embedding(t, &p, b, &[1, 2], &[3, 4]).unwrap());
    assert_eq!(shape, vec![2, D]);
    assert!(z.iter().all(|&v| v == 2.0));
}

#[test]
fn calendar_indices_out_of_range() {
    let mut store = ParamStore::new();
    let p = temporal(&mut store, 3);
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    assert!(matches!(
        initial_temporal_embedding(&mut tape, &p, &b, &[SPD], &[0]),
        Err(Error::Index { what: "time-of-day", .. })
    ));
    assert!(matches!(
        initial_temporal_embedding(&mut tape, &p, &b, &[0], &[7]),
        Err(Error::Index { what: "day-of-week", .. })
    ));
    assert!(calendar_one_hot::<f64>(&[0, 1], &[0], SPD).is_err());
}

#[test]
fn zero_refinement_is_one_half() {
    let mut store = ParamStore::new();
    let p = temporal(&mut store, 4);
    store.get_mut(p.w1).data_mut().fill(0.0);
    store.get_mut(p.w2).data_mut().fill(0.0);
    let (_, m) = eval(&store, &|t, b| temporal_embedding(t, &p, b, &[0, 1, 2], &[0, 0, 0]).unwrap());
    assert!(m.iter().all(|&v| v == 0.5));
}

#[test]
fn refinement_gradient_matches_finite_differences() {
    let mut store = ParamStore::new();
    let p = temporal(&mut store, 5);
    let mut r = rng(55);
    let z = random_tensor(&mut r, &[3, D], 1.0);
    let err = gradient_error(&store, &[p.w1, p.w2], 56, |t, b| {
        let zv = t.constant(z.clone());
        refine_temporal_embedding(t, &p, b, zv).unwrap()
    });
    assert!(err < 1e-5, "{err:e}");
    let err = gradient_error(&store, &[p.w_in, p.w1, p.w2], 57, |t, b| {
        temporal_embedding(t, &p, b, &[5, 0, 1], &[2, 3, 3]).unwrap()
    });
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn same_calendar_gives_same_embedding() {
    let mut store = ParamStore::new();
    let p = temporal(&mut store, 6);
    let (_, a) = eval(&store, &|t, b| temporal_embedding(t, &p, b, &[4, 5, 0, 4, 5, 0], &[1, 1, 2, 1, 1, 2]).unwrap());
    assert_eq!(a[..3 * D], a[3 * D..]);
}

fn spatial(store: &mut ParamStore<f64>, seed: u64, k: usize, hidden: usize) -> SpatialEmbeddingParams {
    let mut r = rng(seed);
    SpatialEmbeddingParams { w1: param(store, &mut r, "s1", &[k, hidden], 1.0), w2: param(store, &mut r, "s2", &[hidden, D], 1.0) }
}

#[test]
fn spatial_embedding_cases() {
    let mut store = ParamStore::new();
    let p = spatial(&mut store, 7, 3, D);
    let mut r = rng(70);
    let basis = random_tensor(&mut r, &[5, 3], 1.0);

    let zero = Tensor::<f64>::zeros([5, 3]);
    let (_, out) = eval(&store, &|t, b| {
        let z = t.constant(zero.clone());
        spatial_embedding(t, &p, b, z).unwrap()
    });
    assert!(out.iter().all(|&v| v == 0.0));

    let (shape, out) = eval(&store, &|t, b| {
        let z = t.constant(basis.clone());
        spatial_embedding(t, &p, b, z).unwrap()
    });
    assert_eq!(shape, vec![5, D]);
    let hidden: Vec<f64> = mm(basis.data(), store.get(p.w1).data(), 5, 3, D).into_iter().map(relu).collect();
    assert!(max_abs_diff(&out, &mm(&hidden, store.get(p.w2).data(), 5, D, D)) < 1e-14);

    let err = gradient_error(&store, &[p.w1, p.w2], 71, |t, b| {
        let z = t.constant(basis.clone());
        spatial_embedding(t, &p, b, z).unwrap()
    });
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn fuse_zero_and_non_positive_spatial() {
    let mut tape = Tape::<f64>::new();
    let mt = tape.constant(Tensor::zeros([3, D]));
    let ms = tape.constant(Tensor::zeros([2, D]));
    let m = fuse(&mut tape, mt, ms, None).unwrap();
    assert_eq!(tape.shape(m), &[3, 2, D]);
    assert!(tape.data(m).iter().all(|&v| v == 0.0));

    let mut r = rng(8);
    let mt_data = random_tensor(&mut r, &[3, D], 1.0);
    let ms_data: Vec<f64> = random_vec(&mut r, 2 * D, 1.0).iter().map(|v| -v.abs()).collect();
    let mt = tape.constant(mt_data.clone());
    let ms = tape.constant(Tensor::new([2, D], ms_data).unwrap());
    let m = fuse(&mut tape, mt, ms, None).unwrap();
    let out = tape.data(m);
    for t in 0..3 {
        let sines: Vec<f64> = mt_data.data()[t * D..(t + 1) * D].iter().map(|v| v.sin()).collect();
        for n in 0..2 {
            assert_eq!(&out[(t * 2 + n) * D..(t * 2 + n + 1) * D], &sines[..]);
        }
    }
}

#[test]
fn fuse_half_alpha_is_half_of_each_term() {
    let mut r = rng(9);
    let mt_data = random_tensor(&mut r, &[2, 3, D], 1.0);
    let ms_data = random_tensor(&mut r, &[4, D], 1.0);
    let mut tape = Tape::<f64>::new();
    let mt = tape.constant(mt_data.clone());
    let ms = tape.constant(ms_data.clone());
    let alpha = tape.param(Tensor::scalar(0.5));
    let mixed = fuse(&mut tape, mt, ms, Some(alpha)).unwrap();
    assert_eq!(tape.shape(mixed), &[2, 3, 4, D]);
    let out = tape.data(mixed);
    for (i, v) in out.iter().enumerate() {
        let (b, t, n, d) = (i / (3 * 4 * D), i / (4 * D) % 3, i / D % 4, i % D);
        let sin = mt_data.data()[(b * 3 + t) * D + d].sin();
        let rel = relu(ms_data.data()[n * D + d]);
        assert!((v - (0.5 * sin + 0.5 * rel)).abs() < 1e-15);
    }
}

#[test]
fn fuse_width_mismatch() {
    let mut tape = Tape::<f64>::new();
    let mt = tape.constant(Tensor::zeros([3, D]));
    let ms = tape.constant(Tensor::zeros([2, D + 1]));
    assert!(matches!(fuse(&mut tape, mt, ms, None), Err(Error::Size(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fused_embedding_range_and_broadcast_structure(seed in 0u64..10_000, nodes in 1usize..5) {
        let mut store = ParamStore::new();
        let p = temporal(&mut store, seed);
        let mut r = rng(seed ^ 1);
        let ms_data = random_tensor(&mut r, &[nodes, D], 2.0);
        let tod = [seed as usize % SPD, (seed as usize + 1) % SPD];
        let dow = [seed as usize % 7, seed as usize % 7];
        let mut tape = Tape::new();
        let b = store.bind_frozen(&mut tape);
        let mt = temporal_embedding(&mut tape, &p, &b, &tod, &dow).unwrap();
        let mt_vals = tape.data(mt).to_vec();
        prop_assert!(mt_vals.iter().all(|&v| v > 0.0 && v < 1.0));
        let ms = tape.constant(ms_data.clone());
        let m = fuse(&mut tape, mt, ms, None).unwrap();
        let out = tape.data(m);
        for t in 0..2 {
            for n in 0..nodes {
                for d in 0..D {
                    let v = out[(t * nodes + n) * D + d];
                    prop_assert!(v > -1.0);
                    let sin = v - relu(ms_data.data()[n * D + d]);
                    prop_assert!(sin > 0.0 && sin < 1f64.sin() + 1e-12);
                    // the sine part does not depend on n, the relu part not on t
                    prop_assert!((sin - mt_vals[t * D + d].sin()).abs() < 1e-12);
                }
            }
        }
    }
}
