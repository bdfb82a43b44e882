//! Layer-by-layer orchestration with a content-addressed result cache.
//!
//! Each subcommand reads its inputs from files, writes its outputs into its
//! own directory under `output_dir` and records them in the cache. A second
//! run with identical settings and input bytes restores the stored outputs.

mod cache;
mod commands;
mod config;

pub use cache::{cache_key, Cache, CacheMeta, VERSION};
pub use commands::{
    cmd_aggregate, cmd_dedup, cmd_geolocate, cmd_infer, cmd_pipeline, cmd_simulate, outputs,
    PipelineReport, StepReport,
};
pub use config::{GeolocationSection, InferenceSection, InputPaths, Inputs, PipelineConfig};
