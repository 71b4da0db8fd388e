use stdn_tensor::{Scalar, Tape};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let zeros: Vec<Vec<S>> = store.ids().map(|id| vec![S::zero(); store.get(id).numel()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated on `tape` for
    /// parameters bound with `bound`.
    pub fn step(&mut self, store: &mut ParamStore<S>, tape: &Tape<S>, bound: &Bound) -> Result<()> {
        let grads = store
            .ids()
            .map(|id| tape.grad(bound[id]).ok_or_else(|| Error::MissingGradient(store.name(id).to_string())))
            .collect::<Result<Vec<_>>>()?;
        self.apply(store, &grads)
    }

    /// Update from explicit gradients, one slice per parameter in store order.
    pub fn apply(&mut self, store: &mut ParamStore<S>, grads: &[&[S]]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let c1 = S::lit(1.0 - self.beta1.powi(t));
        let c2 = S::lit(1.0 - self.beta2.powi(t));
        let lr = S::lit(self.lr);
        let eps = S::lit(self.eps);
        let one = S::one();
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i];
            let numel = store.get(id).numel();
            if g.len() != numel {
                return Err(Error::Contract(format!(
                    "gradient for `{}` has {} elements, parameter has {numel}",
                    store.name(id),
                    g.len()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = store.get_mut(id).data_mut();
            for k in 0..data.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
