#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdn_core::params::{Bound, ParamId, ParamStore};
use stdn_tensor::gradcheck::{max_relative_error, numeric_gradient};
use stdn_tensor::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n, scale)).unwrap()
}

/// Adds a random parameter to `store`.
pub fn param(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, name: &str, shape: &[usize], scale: f64) -> ParamId {
    store.insert(name, random_tensor(rng, shape, scale)).unwrap()
}

/// Row-major `m×k · k×n`.
pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// In-place softmax of every `width`-long row.
pub fn softmax_rows(v: &mut [f64], width: usize) {
    for row in v.chunks_mut(width) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            s += *x;
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
}

/// Values of `build` evaluated with frozen parameters.
pub fn eval(store: &ParamStore<f64>, build: &impl Fn(&mut Tape<f64>, &Bound) -> Var) -> (Vec<usize>, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let y = build(&mut tape, &bound);
    (tape.shape(y).to_vec(), tape.data(y).to_vec())
}

/// Compares analytic and central-difference gradients of
/// `sum(w ⊙ build(params))` for a fixed random `w`, for every id in `ids`.
/// Returns the worst relative error.
pub fn gradient_error(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    seed: u64,
    build: impl Fn(&mut Tape<f64>, &Bound) -> Var,
) -> f64 {
    let (shape, out) = eval(store, &build);
    let mut r = rng(seed);
    let w = random_vec(&mut r, out.len(), 1.0);
    let loss_of = |s: &ParamStore<f64>| -> f64 {
        let (_, y) = eval(s, &build);
        y.iter().zip(&w).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let y = build(&mut tape, &bound);
    let wv = tape.constant(Tensor::new(shape, w.clone()).unwrap());
    let prod = tape.mul(y, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.get(id).numel();
        let analytic = tape.grad(bound[id]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let numeric = numeric_gradient(
            |x| {
                let mut s = store.clone();
                s.get_mut(id).data_mut().copy_from_slice(x);
                loss_of(&s)
            },
            store.get(id).data(),
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric, 1e-8);
        assert!(err.is_finite(), "{}: non-finite error", store.name(id));
        worst = worst.max(err);
    }
    worst
}
