mod common;

use common::*;
use proptest::prelude::*;
use stdn_core::model::{adjacency_logits, dynamic_adjacency, dynamic_graph_conv, graph_conv_with, DynamicGraphParams};
use stdn_core::params::ParamStore;
use stdn_core::Error;
use stdn_tensor::{Tape, Tensor};

fn params(store: &mut ParamStore<f64>, seed: u64, n: usize, c: usize, d: usize, g: usize, slots: usize, hops: usize) -> DynamicGraphParams {
    let mut r = rng(seed);
    DynamicGraphParams {
        e_t: param(store, &mut r, "e_t", &[slots, g], 1.0),
        e_s: param(store, &mut r, "e_s", &[n, g], 1.0),
        e_e: param(store, &mut r, "e_e", &[n, g], 1.0),
        k: param(store, &mut r, "k", &[g, g, g], 1.0),
        w_in: param(store, &mut r, "w_in", &[c, d], 1.0),
        w_hops: (0..=hops).map(|l| param(store, &mut r, &format!("w{l}"), &[d, d], 0.5)).collect(),
        slots,
        embed_dim: g,
    }
}

/// Direct four-index sum for one slot.
fn brute_force_logits(store: &ParamStore<f64>, p: &DynamicGraphParams, n: usize, slot: usize) -> Vec<f64> {
    let g = p.embed_dim;
    let (k, et, ee, es) = (store.get(p.k).data(), store.get(p.e_t).data(), store.get(p.e_e).data(), store.get(p.e_s).data());
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for o in 0..g {
                for q in 0..g {
                    for r in 0..g {
                        s += k[(o * g + q) * g + r] * et[slot * g + o] * ee[i * g + q] * es[j * g + r];
                    }
                }
            }
            a[i * n + j] = s;
        }
    }
    a
}

#[test]
fn scalar_contraction_hand_value() {
    let mut store = ParamStore::<f64>::new();
    let p = DynamicGraphParams {
        e_t: store.insert("e_t", Tensor::from_f64([1, 1], &[3.0]).unwrap()).unwrap(),
        e_s: store.insert("e_s", Tensor::from_f64([1, 1], &[7.0]).unwrap()).unwrap(),
        e_e: store.insert("e_e", Tensor::from_f64([1, 1], &[5.0]).unwrap()).unwrap(),
        k: store.insert("k", Tensor::from_f64([1, 1, 1], &[2.0]).unwrap()).unwrap(),
        w_in: store.insert("w_in", Tensor::zeros([1, 1])).unwrap(),
        w_hops: vec![],
        slots: 1,
        embed_dim: 1,
    };
    let (_, a) = eval(&store, &|t, b| adjacency_logits(t, &p, b, &[0]).unwrap());
    assert_eq!(a, vec![210.0]);
}

#[test]
fn zero_core_gives_uniform_rows() {
    let mut store = ParamStore::new();
    let p = params(&mut store, 1, 5, 1, 2, 3, 4, 1);
    store.get_mut(p.k).data_mut().fill(0.0);
    let (shape, a) = eval(&store, &|t, b| dynamic_adjacency(t, &p, b, &[0, 3]).unwrap());
    assert_eq!(shape, vec![2, 5, 5]);
    assert!(a.iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn staged_contraction_matches_brute_force() {
    let (n, g, slots) = (4, 3, 5);
    let mut store = ParamStore::new();
    let p = params(&mut store, 2, n, 1, 2, g, slots, 1);
    let all: Vec<usize> = (0..slots).collect();
    let (_, staged) = eval(&store, &|t, b| adjacency_logits(t, &p, b, &all).unwrap());
    for s in 0..slots {
        let brute = brute_force_logits(&store, &p, n, s);
        assert!(max_abs_diff(&staged[s * n * n..(s + 1) * n * n], &brute) < 1e-10);
    }
}

#[test]
fn slot_out_of_range_is_an_index_error() {
    let mut store = ParamStore::new();
    let p = params(&mut store, 3, 3, 1, 2, 2, 4, 1);
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let err = dynamic_adjacency(&mut tape, &p, &b, &[4]).unwrap_err();
    assert!(matches!(err, Error::Index { index: 4, len: 4, .. }));
}

#[test]
fn same_slot_gives_identical_adjacency() {
    let mut store = ParamStore::new();
    let p = params(&mut store, 4, 4, 1, 2, 2, 6, 1);
    let (_, a) = eval(&store, &|t, b| dynamic_adjacency(t, &p, b, &[2, 5, 2]).unwrap());
    assert_eq!(a[..16], a[32..]);
    assert_ne!(a[..16], a[16..32]);
}

#[test]
fn zero_hops_is_a_plain_projection() {
    let (n, c, d) = (3, 2, 4);
    let mut store = ParamStore::new();
    let p = params(&mut store, 5, n, c, d, 2, 4, 0);
    let mut r = rng(50);
    let x = random_tensor(&mut r, &[2, n, c], 1.0);
    let (_, out) = eval(&store, &|t, b| {
        let xv = t.constant(x.clone());
        dynamic_graph_conv(t, &p, b, xv, &[1, 3]).unwrap()
    });
    let proj = mm(&mm(x.data(), store.get(p.w_in).data(), 2 * n, c, d), store.get(p.w_hops[0]).data(), 2 * n, d, d);
    assert_eq!(out, proj);
}

#[test]
fn identity_graph_with_identity_maps_triples_the_input() {
    let (n, d) = (3, 4);
    let mut store = ParamStore::new();
    let p = params(&mut store, 6, n, d, d, 2, 4, 2);
    for id in std::iter::once(p.w_in).chain(p.w_hops.iter().copied()) {
        *store.get_mut(id) = Tensor::eye(d);
    }
    let mut r = rng(60);
    let x = random_tensor(&mut r, &[2, n, d], 1.0);
    let (_, out) = eval(&store, &|t, b| {
        let xv = t.constant(x.clone());
        let eye = t.constant(Tensor::eye(n));
        let a = t.broadcast_to(eye, &[2, n, n]).unwrap();
        graph_conv_with(t, &p, b, xv, a).unwrap()
    });
    let expect: Vec<f64> = x.data().iter().map(|v| 3.0 * v).collect();
    assert!(max_abs_diff(&out, &expect) < 1e-15);
}

#[test]
fn graph_conv_matches_explicit_matrix_powers() {
    let (n, t_len, c, d, hops) = (3, 2, 1, 4, 2);
    let mut store = ParamStore::new();
    let p = params(&mut store, 7, n, c, d, 2, 5, hops);
    let mut r = rng(70);
    let x = random_tensor(&mut r, &[t_len, n, c], 1.0);
    let tod = [4, 1];
    let (_, adj) = eval(&store, &|t, b| dynamic_adjacency(t, &p, b, &tod).unwrap());
    let (shape, out) = eval(&store, &|t, b| {
        let xv = t.constant(x.clone());
        dynamic_graph_conv(t, &p, b, xv, &tod).unwrap()
    });
    assert_eq!(shape, vec![t_len, n, d]);

    for step in 0..t_len {
        let a = &adj[step * n * n..(step + 1) * n * n];
        let xw = mm(&x.data()[step * n * c..(step + 1) * n * c], store.get(p.w_in).data(), n, c, d);
        let mut power: Vec<f64> = Tensor::<f64>::eye(n).into_data();
        let mut expect = vec![0.0; n * d];
        for l in 0..=hops {
            let term = mm(&mm(&power, &xw, n, n, d), store.get(p.w_hops[l]).data(), n, d, d);
            expect.iter_mut().zip(&term).for_each(|(e, v)| *e += v);
            power = mm(&power, a, n, n, n);
        }
        assert!(max_abs_diff(&out[step * n * d..(step + 1) * n * d], &expect) < 1e-10);
    }
}

#[test]
fn graph_conv_gradients_match_finite_differences() {
    let (n, t_len, c, d) = (3, 2, 2, 4);
    let mut store = ParamStore::new();
    let p = params(&mut store, 8, n, c, d, 2, 3, 2);
    let mut r = rng(80);
    let x = random_tensor(&mut r, &[t_len, n, c], 1.0);
    let ids: Vec<_> = store.ids().collect();
    let err = gradient_error(&store, &ids, 81, |t, b| {
        let xv = t.constant(x.clone());
        dynamic_graph_conv(t, &p, b, xv, &[2, 0]).unwrap()
    });
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn input_shape_mismatch_is_rejected() {
    let mut store = ParamStore::new();
    let p = params(&mut store, 9, 3, 1, 2, 2, 3, 1);
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let x = tape.constant(Tensor::zeros([2, 3, 1]));
    assert!(matches!(dynamic_graph_conv(&mut tape, &p, &b, x, &[0]), Err(Error::Size(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_rows_are_stochastic(seed in 0u64..10_000, n in 1usize..7, g in 1usize..5) {
        let mut store = ParamStore::new();
        let p = params(&mut store, seed, n, 1, 2, g, 3, 1);
        for id in [p.e_t, p.e_s, p.e_e, p.k] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= 3.0);
        }
        let (_, a) = eval(&store, &|t, b| dynamic_adjacency(t, &p, b, &[0, 1, 2]).unwrap());
        for row in a.chunks(n) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
