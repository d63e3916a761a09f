//! Wearable physiology benchmarking toolkit.

pub mod ablation;
pub mod cli;
pub mod eval;
pub mod explain;
pub mod features;
pub mod fmt;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod windowing;
