//! Configuration-driven pipeline: ingest, embed, build subgraphs, pretrain,
//! finetune, evaluate, ablate.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::{parse_value, RunConfig};
pub use manifest::{DirLock, RunManifest};
pub use stages::{Pipeline, RunMetrics, Stage, StageOutcome, MAIN_STAGES};
