pub mod format;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod sequence;
pub mod static_models;
pub mod static_pipeline;
pub mod stats;
pub mod survival;
pub mod synth;
pub mod temporal;
