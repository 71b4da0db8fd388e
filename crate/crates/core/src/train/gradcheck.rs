//! End-to-end finite-difference check of every parameter on a tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdn_tensor::gradcheck::relative_error;
use stdn_tensor::Tape;

use crate::data::{Edge, Normalizer, SampleWindow};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyMode, GraphSpec};
use crate::model::{Batch, MixMode, Model, ModelConfig};
use crate::params::ParamStore;
use crate::train::metrics::l1_loss;

/// Forward/backward slope mismatch, relative to the slope, that flags a kink.
const KINK_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSettings {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for relative errors of near-zero gradients.
    pub floor: f64,
    pub trainable_mixing: bool,
    pub samples: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { step: 1e-5, tolerance: 1e-4, floor: 1e-6, trainable_mixing: false, samples: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub seed: u64,
    pub name: String,
    pub elements: usize,
    /// Elements next to a kink, differenced from one side only.
    pub one_sided: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// N=3, T=T'=3, D=8 (2 heads of 4), D_g=2, one block, a 24-slot day.
pub fn tiny_config(trainable_mixing: bool) -> ModelConfig {
    let mix = if trainable_mixing { MixMode::Trainable } else { MixMode::Fixed };
    ModelConfig {
        input_len: 3,
        output_len: 3,
        heads: 2,
        head_dim: 4,
        blocks: 1,
        spectral_k: 2,
        graph_embed_dim: 2,
        graph_hops: 2,
        alpha_mode: mix,
        beta_mode: mix,
        ..ModelConfig::for_data(3, 1, 24)
    }
}

fn tiny_problem(seed: u64, settings: &GradCheckSettings) -> Result<(Model<f64>, Batch<f64>)> {
    let config = tiny_config(settings.trainable_mixing);
    let edges = vec![Edge { from: 0, to: 1, cost: 1.0 }, Edge { from: 1, to: 2, cost: 1.0 }];
    let graph = GraphSpec::new(config.nodes, edges, AdjacencyMode::Binary)?;
    let basis = graph.spectral_basis(config.spectral_k);
    let normalizer = Normalizer::identity(1);
    let model = Model::new(config.clone(), &basis.matrix, normalizer, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let (t, tp, n) = (config.input_len, config.output_len, config.nodes);
    let spd = config.steps_per_day;
    let windows: Vec<SampleWindow> = (0..settings.samples)
        .map(|i| {
            let slot = rng.random_range(0..spd);
            let day = rng.random_range(0..7);
            let cal = |k: usize| ((slot + k) % spd, (day + (slot + k) / spd) % 7);
            SampleWindow {
                start: i,
                nodes: n,
                channels: 1,
                x: (0..t * n).map(|_| rng.random_range(-1.5f32..1.5)).collect(),
                y: (0..tp * n).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
                tod_in: (0..t).map(|k| cal(k).0).collect(),
                dow_in: (0..t).map(|k| cal(k).1).collect(),
                tod_out: (t..t + tp).map(|k| cal(k).0).collect(),
                dow_out: (t..t + tp).map(|k| cal(k).1).collect(),
            }
        })
        .collect();
    Ok((model, Batch::from_windows(&windows)?))
}

fn loss_with(model: &Model<f64>, params: &ParamStore<f64>, batch: &Batch<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let out = model.forward(&mut tape, &bound, batch)?;
    let y = tape.constant(batch.y.clone());
    let loss = l1_loss(&mut tape, out.prediction, y)?;
    Ok(tape.data(loss)[0])
}

/// Compares the analytic gradient of the mean L1 loss against central
/// differences for every element of every parameter. Errors are
/// `|a − n| / max(|a|, |n|, floor)`; the floor sits above the roundoff of a
/// central difference (about `1e-11` here), so gradients smaller than it are
/// compared in absolute terms.
pub fn grad_check(seed: u64, settings: &GradCheckSettings) -> Result<Vec<ParamCheck>> {
    let (model, batch) = tiny_problem(seed, settings)?;
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &bound, &batch)?;
    let y = tape.constant(batch.y.clone());
    let loss = l1_loss(&mut tape, out.prediction, y)?;
    tape.backward(loss).map_err(|source| Error::Tensor { module: "grad_check", source })?;

    let base = loss_with(&model, model.params(), &batch)?;
    let mut probe = model.params().clone();
    let mut report = Vec::with_capacity(probe.len());
    for id in model.params().ids() {
        let name = model.params().name(id).to_string();
        let analytic = tape.grad(bound[id]).ok_or_else(|| Error::MissingGradient(name.clone()))?.to_vec();
        let mut worst = 0.0f64;
        let mut one_sided = 0;
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe.get(id).data()[k];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[k] = orig + offset;
                loss_with(&model, &probe, &batch)
            };
            let (numeric, kinked) = derivative(&mut at, base, settings)?;
            probe.get_mut(id).data_mut()[k] = orig;
            one_sided += kinked as usize;
            let err = relative_error(a, numeric, settings.floor);
            worst = if err.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(err) };
        }
        report.push(ParamCheck {
            seed,
            name,
            elements: analytic.len(),
            one_sided,
            max_rel_error: worst,
            passed: worst < settings.tolerance,
        });
    }
    Ok(report)
}

/// Central difference, unless the forward and backward slopes disagree,
/// which means a ReLU kink lies within one step. Then the side whose slope is
/// stable under halving the step is used, Richardson-extrapolated.
fn derivative(f: &mut impl FnMut(f64) -> Result<f64>, f0: f64, s: &GradCheckSettings) -> Result<(f64, bool)> {
    let h = s.step;
    let (fp, fm) = (f(h)?, f(-h)?);
    let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
    let scale = fwd.abs().max(bwd.abs()).max(s.floor);
    if (fwd - bwd).abs() <= KINK_RATIO * scale {
        return Ok(((fp - fm) / (2.0 * h), false));
    }
    let fwd_half = (f(h / 2.0)? - f0) / (h / 2.0);
    let bwd_half = (f0 - f(-h / 2.0)?) / (h / 2.0);
    let estimate = if (fwd - fwd_half).abs() <= (bwd - bwd_half).abs() {
        2.0 * fwd_half - fwd
    } else {
        2.0 * bwd_half - bwd
    };
    Ok((estimate, true))
}

pub const GRAD_CHECK_HEADER: &str = "seed,parameter,elements,one_sided,max_rel_error,status";

pub fn grad_check_csv(rows: &[ParamCheck]) -> String {
    let mut out = String::from(GRAD_CHECK_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{}\n",
            r.seed,
            r.name,
            r.elements,
            r.one_sided,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}
