//! Experiment harness for `pad-core`: CSV and JSON formats, checkpoints,
//! multi-split runs, the gapped-sine toy and the ablation grid.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod experiment;
pub mod toy;
pub mod tune;
