//! Run configuration: a small INI-like document with `[section]` headers,
//! `key = value` lines and `#` comments. A dotted key such as
//! `train.lr = 0.01` may also appear outside any section.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stdn_core::graph::AdjacencyMode;
use stdn_core::model::{DecompositionMode, MixMode, ModelConfig};
use stdn_core::train::TrainConfig;
use stdn_tensor::Precision;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },

    #[error("{}unknown key `{key}`", at(*line))]
    UnknownKey { line: Option<usize>, key: String },

    #[error("{}bad value `{value}` for `{key}`: {reason}", at(*line))]
    Value { line: Option<usize>, key: String, value: String, reason: String },

    #[error("override `{0}` is not of the form section.key=value")]
    Override(String),
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub flow: PathBuf,
    pub edges: PathBuf,
    pub adjacency: AdjacencyMode,
    pub input_len: usize,
    pub output_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub heads: usize,
    pub head_dim: usize,
    pub blocks: usize,
    pub decomposition: DecompositionMode,
    pub beta: MixMode,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynGraphSection {
    pub embed_dim: usize,
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSection {
    pub spectral_k: usize,
    /// 0 selects the model width.
    pub spatial_hidden: usize,
    pub alpha: MixMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub record_seconds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub dyn_graph: DynGraphSection,
    pub embedding: EmbeddingSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::for_data(1, 1, 1);
        let t = TrainConfig::default();
        RunConfig {
            data: DataSection {
                flow: "data/flow.stdn".into(),
                edges: "data/edges.csv".into(),
                adjacency: AdjacencyMode::Binary,
                input_len: m.input_len,
                output_len: m.output_len,
            },
            model: ModelSection {
                heads: m.heads,
                head_dim: m.head_dim,
                blocks: m.blocks,
                decomposition: m.decomposition,
                beta: m.beta_mode,
                precision: Precision::F32,
            },
            dyn_graph: DynGraphSection { embed_dim: m.graph_embed_dim, hops: m.graph_hops },
            embedding: EmbeddingSection { spectral_k: m.spectral_k, spatial_hidden: 0, alpha: m.alpha_mode },
            train: TrainSection {
                batch_size: t.batch_size,
                lr: t.lr,
                patience: t.patience,
                max_epochs: t.max_epochs,
                seed: t.seed,
                record_seconds: t.record_seconds,
            },
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn unquote(value: &str) -> &str {
    let v = value.trim();
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

fn mix_name(m: MixMode) -> &'static str {
    match m {
        MixMode::Fixed => "fixed",
        MixMode::Trainable => "trainable",
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    /// Parses a document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, reason: "unterminated section header".into() })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax { line, reason: format!("unknown section `[{name}]`") });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, reason: "expected `key = value`".into() })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, reason: "empty key".into() });
            }
            let full = match &section {
                Some(s) => format!("{s}.{key}"),
                None => key.to_string(),
            };
            cfg.set_at(&full, unquote(value), Some(line))?;
        }
        Ok(cfg)
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
        if !key.contains('.') {
            return Err(ConfigError::Override(spec.to_string()));
        }
        self.set_at(key.trim(), unquote(value), None)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_at(key, value, None)
    }

    fn set_at(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::Value { line, key: key.to_string(), value: value.to_string(), reason };
        let positive = |v: &str| -> Result<usize, ConfigError> {
            match parse::<usize>(v).map_err(bad)? {
                0 => Err(bad("must be positive".into())),
                n => Ok(n),
            }
        };
        match key {
            "data.flow" => self.data.flow = value.into(),
            "data.edges" => self.data.edges = value.into(),
            "data.adjacency" => self.data.adjacency = parse(value).map_err(bad)?,
            "data.input_len" => self.data.input_len = positive(value)?,
            "data.output_len" => self.data.output_len = positive(value)?,
            "model.heads" => self.model.heads = positive(value)?,
            "model.head_dim" => self.model.head_dim = positive(value)?,
            "model.blocks" => self.model.blocks = positive(value)?,
            "model.decomposition" => self.model.decomposition = parse(value).map_err(bad)?,
            "model.beta" => self.model.beta = parse(value).map_err(bad)?,
            "model.precision" => self.model.precision = parse(value).map_err(bad)?,
            "dyn_graph.embed_dim" => self.dyn_graph.embed_dim = positive(value)?,
            "dyn_graph.hops" => self.dyn_graph.hops = parse(value).map_err(bad)?,
            "embedding.spectral_k" => self.embedding.spectral_k = positive(value)?,
            "embedding.spatial_hidden" => self.embedding.spatial_hidden = parse(value).map_err(bad)?,
            "embedding.alpha" => self.embedding.alpha = parse(value).map_err(bad)?,
            "train.batch_size" => self.train.batch_size = positive(value)?,
            "train.lr" => {
                let lr: f64 = parse(value).map_err(bad)?;
                if !lr.is_finite() || lr < 0.0 {
                    return Err(bad("must be finite and non-negative".into()));
                }
                self.train.lr = lr;
            }
            "train.patience" => self.train.patience = positive(value)?,
            "train.max_epochs" => self.train.max_epochs = positive(value)?,
            "train.seed" => self.train.seed = parse(value).map_err(bad)?,
            "train.record_seconds" => self.train.record_seconds = parse_bool(value).map_err(bad)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Model hyperparameters for a dataset of the given shape.
    pub fn model_config(&self, nodes: usize, channels: usize, steps_per_day: usize) -> ModelConfig {
        ModelConfig {
            input_len: self.data.input_len,
            output_len: self.data.output_len,
            heads: self.model.heads,
            head_dim: self.model.head_dim,
            blocks: self.model.blocks,
            spectral_k: self.embedding.spectral_k,
            spatial_hidden: (self.embedding.spatial_hidden > 0).then_some(self.embedding.spatial_hidden),
            graph_embed_dim: self.dyn_graph.embed_dim,
            graph_hops: self.dyn_graph.hops,
            alpha_mode: self.embedding.alpha,
            beta_mode: self.model.beta,
            decomposition: self.model.decomposition,
            ..ModelConfig::for_data(nodes, channels, steps_per_day)
        }
    }

    pub fn train_config(&self, eval_threads: usize) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            patience: self.train.patience,
            max_epochs: self.train.max_epochs,
            seed: self.train.seed,
            record_seconds: self.train.record_seconds,
            eval_threads,
        }
    }

    /// Renders every key; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let m = &self.model;
        let t = &self.train;
        let adjacency = match d.adjacency {
            AdjacencyMode::Binary => "binary",
            AdjacencyMode::GaussianKernel => "gaussian_kernel",
        };
        let decomposition = match m.decomposition {
            DecompositionMode::Masked => "masked",
            DecompositionMode::Passthrough => "passthrough",
        };
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "flow = \"{}\"", d.flow.display());
        let _ = writeln!(s, "edges = \"{}\"", d.edges.display());
        let _ = writeln!(s, "adjacency = {adjacency}");
        let _ = writeln!(s, "input_len = {}", d.input_len);
        let _ = writeln!(s, "output_len = {}", d.output_len);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "heads = {}", m.heads);
        let _ = writeln!(s, "head_dim = {}", m.head_dim);
        let _ = writeln!(s, "blocks = {}", m.blocks);
        let _ = writeln!(s, "decomposition = {decomposition}");
        let _ = writeln!(s, "beta = {}", mix_name(m.beta));
        let _ = writeln!(s, "precision = {}", m.precision.name());
        let _ = writeln!(s, "\n[dyn_graph]");
        let _ = writeln!(s, "embed_dim = {}", self.dyn_graph.embed_dim);
        let _ = writeln!(s, "hops = {}", self.dyn_graph.hops);
        let _ = writeln!(s, "\n[embedding]");
        let _ = writeln!(s, "spectral_k = {}", self.embedding.spectral_k);
        let _ = writeln!(s, "spatial_hidden = {}", self.embedding.spatial_hidden);
        let _ = writeln!(s, "alpha = {}", mix_name(self.embedding.alpha));
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {:?}", t.lr);
        let _ = writeln!(s, "patience = {}", t.patience);
        let _ = writeln!(s, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "record_seconds = {}", t.record_seconds);
        s
    }
}

const SECTIONS: [&str; 5] = ["data", "model", "dyn_graph", "embedding", "train"];
