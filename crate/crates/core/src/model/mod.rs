//! The forecasting network: dynamic graph convolution, calendar and spatial
//! embeddings, masked decomposition, two GRU encoders and the bottleneck decoder.

mod config;
pub mod decompose;
pub mod dyngraph;
pub mod embedding;
pub mod encoder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdn_tensor::{Scalar, Tape, Tensor, Var};

pub use config::{MixMode, ModelConfig};
pub use decompose::{decompose, decompose_with, DecomposedStates, DecompositionMode};
pub use dyngraph::{adjacency_logits, dynamic_adjacency, dynamic_graph_conv, graph_conv_with, DynamicGraphParams};
pub use embedding::{
    calendar_one_hot, fuse, initial_temporal_embedding, refine_temporal_embedding, temporal_embedding,
    TemporalEmbeddingParams,
};
pub use encoder::{
    bt_block, combine_streams, gru_encode, mhsa, mhsa_with_weights, output_projection, BtBlockParams, GruParams,
    MhsaParams,
};

use crate::data::{Normalizer, SampleWindow};
use crate::error::{Error, InModule, Result};
use crate::graph::{spatial_embedding, Matrix, SpatialEmbeddingParams};
use crate::params::{uniform, Bound, ParamId, ParamStore};

/// Parameter handles for every sub-module.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dyn_graph: DynamicGraphParams,
    pub temporal: TemporalEmbeddingParams,
    pub spatial: SpatialEmbeddingParams,
    pub alpha: Option<ParamId>,
    pub gru_trend: GruParams,
    pub gru_seasonal: GruParams,
    pub beta: Option<ParamId>,
    pub blocks: Vec<BtBlockParams>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

struct Builder<'a, S: Scalar> {
    store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn add(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = uniform(&mut self.rng, shape, bound);
        self.store.insert(name, t)
    }

    /// Dense map with the usual `±1/√fan_in` range.
    fn map(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, &[rows, cols], 1.0 / (rows as f64).sqrt())
    }

    fn fixed(&mut self, name: &str, value: f64) -> Result<ParamId> {
        self.store.insert(name, Tensor::scalar(S::lit(value)))
    }

    fn gru(&mut self, prefix: &str, d: usize) -> Result<GruParams> {
        let b = 1.0 / (d as f64).sqrt();
        Ok(GruParams {
            w_z: self.map(&format!("{prefix}.w_z"), d, d)?,
            u_z: self.map(&format!("{prefix}.u_z"), d, d)?,
            b_z: self.add(&format!("{prefix}.b_z"), &[d], b)?,
            w_r: self.map(&format!("{prefix}.w_r"), d, d)?,
            u_r: self.map(&format!("{prefix}.u_r"), d, d)?,
            b_r: self.add(&format!("{prefix}.b_r"), &[d], b)?,
            w_n: self.map(&format!("{prefix}.w_n"), d, d)?,
            u_n: self.map(&format!("{prefix}.u_n"), d, d)?,
            b_n: self.add(&format!("{prefix}.b_n"), &[d], b)?,
        })
    }

    fn mhsa(&mut self, prefix: &str, width: usize, heads: usize) -> Result<MhsaParams> {
        let head_dim = width / heads;
        let inner = heads * head_dim;
        Ok(MhsaParams {
            w_q: self.map(&format!("{prefix}.w_q"), width, inner)?,
            w_k: self.map(&format!("{prefix}.w_k"), width, inner)?,
            w_v: self.map(&format!("{prefix}.w_v"), width, inner)?,
            w_o: self.map(&format!("{prefix}.w_o"), inner, width)?,
            heads,
            head_dim,
        })
    }
}

fn build_layout<S: Scalar>(config: &ModelConfig, store: &mut ParamStore<S>, seed: u64) -> Result<Layout> {
    let d = config.model_dim();
    let g = config.graph_embed_dim;
    let n = config.nodes;
    let mut b = Builder { store, rng: ChaCha8Rng::seed_from_u64(seed) };
    let emb = 0.5 / (g as f64).sqrt();

    let dyn_graph = DynamicGraphParams {
        e_t: b.add("dyn_graph.e_t", &[config.steps_per_day, g], emb)?,
        e_s: b.add("dyn_graph.e_s", &[n, g], emb)?,
        e_e: b.add("dyn_graph.e_e", &[n, g], emb)?,
        k: b.add("dyn_graph.k", &[g, g, g], emb)?,
        w_in: b.map("dyn_graph.w_in", config.channels, d)?,
        w_hops: (0..=config.graph_hops)
            .map(|l| b.map(&format!("dyn_graph.w_hop{l}"), d, d))
            .collect::<Result<_>>()?,
        slots: config.steps_per_day,
        embed_dim: g,
    };
    let temporal = TemporalEmbeddingParams {
        w_in: b.map("temporal.w_in", config.steps_per_day + 7, d)?,
        w1: b.map("temporal.w1", d, d)?,
        w2: b.map("temporal.w2", d, d)?,
        steps_per_day: config.steps_per_day,
    };
    let hidden = config.spatial_hidden.unwrap_or(d);
    let spatial = SpatialEmbeddingParams {
        w1: b.map("spatial.w1", config.spectral_k, hidden)?,
        w2: b.map("spatial.w2", hidden, d)?,
    };
    let alpha = match config.alpha_mode {
        MixMode::Fixed => None,
        MixMode::Trainable => Some(b.fixed("fuse.alpha", 0.5)?),
    };
    let gru_trend = b.gru("gru_trend", d)?;
    let gru_seasonal = b.gru("gru_seasonal", d)?;
    let beta = match config.beta_mode {
        MixMode::Fixed => None,
        MixMode::Trainable => Some(b.fixed("combine.beta", 0.5)?),
    };
    let blocks = (0..config.blocks)
        .map(|i| {
            Ok(BtBlockParams {
                it: b.add(&format!("block{i}.it"), &[config.output_len, 3 * d], 1.0 / ((3 * d) as f64).sqrt())?,
                stage1: b.mhsa(&format!("block{i}.attn1"), 3 * d, config.heads)?,
                stage2: b.mhsa(&format!("block{i}.attn2"), 3 * d, config.heads)?,
                out_proj: b.map(&format!("block{i}.out_proj"), 3 * d, d)?,
            })
        })
        .collect::<Result<_>>()?;
    let out_w = b.map("output.w", d, config.channels)?;
    let out_b = b.add("output.b", &[config.channels], 1.0 / (d as f64).sqrt())?;
    Ok(Layout { dyn_graph, temporal, spatial, alpha, gru_trend, gru_seasonal, beta, blocks, out_w, out_b })
}

/// A stacked mini-batch of windows.
#[derive(Debug, Clone)]
pub struct Batch<S: Scalar> {
    /// `[B, T, N, C]`, normalized.
    pub x: Tensor<S>,
    /// `[B, T', N, C]`, raw scale.
    pub y: Tensor<S>,
    pub tod_in: Vec<usize>,
    pub dow_in: Vec<usize>,
    pub tod_out: Vec<usize>,
    pub dow_out: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a SampleWindow>) -> Result<Self> {
        let windows: Vec<&SampleWindow> = windows.into_iter().collect();
        let first = windows.first().ok_or_else(|| Error::Size("empty batch".into()))?;
        let (t, tp, n, c) = (first.input_len(), first.output_len(), first.nodes, first.channels);
        let mut batch = Batch {
            x: Tensor::zeros([1]),
            y: Tensor::zeros([1]),
            tod_in: Vec::with_capacity(windows.len() * t),
            dow_in: Vec::with_capacity(windows.len() * t),
            tod_out: Vec::with_capacity(windows.len() * tp),
            dow_out: Vec::with_capacity(windows.len() * tp),
        };
        let mut x = Vec::with_capacity(windows.len() * t * n * c);
        let mut y = Vec::with_capacity(windows.len() * tp * n * c);
        for w in &windows {
            if (w.input_len(), w.output_len(), w.nodes, w.channels) != (t, tp, n, c) {
                return Err(Error::Size(format!("window starting at {} has a different shape", w.start)));
            }
            x.extend(w.x.iter().map(|v| S::lit(*v as f64)));
            y.extend(w.y.iter().map(|v| S::lit(*v as f64)));
            batch.tod_in.extend(&w.tod_in);
            batch.dow_in.extend(&w.dow_in);
            batch.tod_out.extend(&w.tod_out);
            batch.dow_out.extend(&w.dow_out);
        }
        let b = windows.len();
        batch.x = Tensor::new([b, t, n, c], x).in_module("batch")?;
        batch.y = Tensor::new([b, tp, n, c], y).in_module("batch")?;
        Ok(batch)
    }

    pub fn size(&self) -> usize {
        self.x.shape()[0]
    }
}

/// Tape handles for the prediction and the intermediate states worth inspecting.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[B, T', N, C]`, raw scale.
    pub prediction: Var,
    /// `[B, T', N, C]`, before denormalization.
    pub normalized: Var,
    pub hidden: Var,
    pub fused: Var,
    pub trend: Var,
    pub seasonal: Var,
}

#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    params: ParamStore<S>,
    layout: Layout,
    spectral: Tensor<S>,
    normalizer: Normalizer,
}

impl<S: Scalar> Model<S> {
    /// Builds a freshly initialized model. `spectral` is the `N × k_r` basis
    /// from the road graph; `normalizer` maps outputs back to raw scale.
    pub fn new(config: ModelConfig, spectral: &Matrix, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if spectral.rows() != config.nodes || spectral.cols() != config.spectral_k {
            return Err(Error::Size(format!(
                "spectral basis is {}x{}, model expects {}x{}",
                spectral.rows(),
                spectral.cols(),
                config.nodes,
                config.spectral_k
            )));
        }
        if normalizer.channels() != config.channels {
            return Err(Error::Size(format!(
                "normalizer has {} channels, model expects {}",
                normalizer.channels(),
                config.channels
            )));
        }
        let mut params = ParamStore::new();
        let layout = build_layout(&config, &mut params, seed)?;
        let spectral = Tensor::from_f64([spectral.rows(), spectral.cols()], spectral.data()).in_module("model")?;
        Ok(Model { config, params, layout, spectral, normalizer })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn spectral(&self) -> &Tensor<S> {
        &self.spectral
    }

    /// Records the full forward pass on `tape` using `bound` parameters.
    pub fn forward(&self, tape: &mut Tape<S>, bound: &Bound, batch: &Batch<S>) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let l = &self.layout;
        let xs = batch.x.shape();
        let expect = [xs[0], cfg.input_len, cfg.nodes, cfg.channels];
        if xs != expect || batch.tod_out.len() != xs[0] * cfg.output_len {
            return Err(Error::Size(format!(
                "batch input {xs:?} does not fit model (expected {expect:?}, horizon {})",
                cfg.output_len
            )));
        }
        let b = xs[0];
        let d = cfg.model_dim();

        let x = tape.constant(batch.x.clone());
        let hidden = dynamic_graph_conv(tape, &l.dyn_graph, bound, x, &batch.tod_in)?;

        let mt_h = temporal_embedding(tape, &l.temporal, bound, &batch.tod_in, &batch.dow_in)?;
        let mt_h = tape.reshape(mt_h, &[b, cfg.input_len, d]).in_module("model")?;
        let mt_p = temporal_embedding(tape, &l.temporal, bound, &batch.tod_out, &batch.dow_out)?;
        let mt_p = tape.reshape(mt_p, &[b, cfg.output_len, d]).in_module("model")?;

        let zs = tape.constant(self.spectral.clone());
        let ms = spatial_embedding(tape, &l.spatial, bound, zs)?;
        let fused = fuse(tape, mt_h, ms, l.alpha.map(|a| bound[a]))?;
        let parts = decompose_with(tape, cfg.decomposition, hidden, fused)?;

        let yt = gru_encode(tape, &l.gru_trend, bound, parts.trend)?;
        let ys = gru_encode(tape, &l.gru_seasonal, bound, parts.seasonal)?;
        let mut z = combine_streams(tape, yt, ys, l.beta.map(|v| bound[v]))?;
        for (i, block) in l.blocks.iter().enumerate() {
            let mt = if i == 0 { mt_h } else { mt_p };
            z = bt_block(tape, block, bound, z, mt, ms)?;
        }
        let normalized = output_projection(tape, z, bound[l.out_w], bound[l.out_b])?;
        let c = cfg.channels;
        let std = tape.constant(Tensor::from_f64([c], &self.normalizer.std).in_module("model")?);
        let mean = tape.constant(Tensor::from_f64([c], &self.normalizer.mean).in_module("model")?);
        let scaled = tape.mul(normalized, std).in_module("model")?;
        let prediction = tape.add(scaled, mean).in_module("model")?;
        Ok(ForwardOutput {
            prediction,
            normalized,
            hidden,
            fused,
            trend: parts.trend,
            seasonal: parts.seasonal,
        })
    }

    /// Raw-scale predictions `[B, T', N, C]` without recording gradients.
    pub fn predict(&self, batch: &Batch<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bound, batch)?;
        Tensor::new(tape.shape(out.prediction).to_vec(), tape.data(out.prediction).to_vec()).in_module("model")
    }
}
