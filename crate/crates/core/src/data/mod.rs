//! Flow series, on-disk formats, windowing, splits and the historical-average baseline.

mod format;
mod series;
mod synth;
mod window;

pub use format::{
    convert_matrix_dump, decode_flow, encode_flow, format_edges_csv, load_edges_csv, load_flow_binary,
    parse_edges_csv, parse_matrix_dump, write_edges_csv, write_flow_binary, Edge, FLOW_HEADER_LEN,
};
pub use series::{Calendar, FlowSeries, Normalizer};
pub use synth::{synth_generate, SynthParams, SYNTH_STEPS_PER_DAY};
pub use window::{ha_baseline, make_windows, split_622, split_sizes, DatasetSplits, SampleWindow};

/// Fraction of the series used to fit normalization statistics.
pub const TRAIN_FRACTION: f64 = 0.6;
