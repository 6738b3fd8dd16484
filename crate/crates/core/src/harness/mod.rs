//! Experiment plumbing: configuration, the instrumented training loop and
//! its protocols, checkpoints, record export and plotting.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod plot;
pub mod runner;

pub use checkpoint::Checkpoint;
pub use config::{emit_config, parse_config, BatchSize, DatasetKind, ExperimentConfig, FullEval, OptimizerKind};
pub use export::{export_records, read_csv, read_jsonl, Abort, Format, RecordWriter, RunLog, RunMeta};
pub use plot::{plot_svg, render_svg, Scale, Series};
pub use runner::{
    apply_env_overrides, build_objective, run_experiment, run_ratio_protocol, run_rs_ab, run_sweep, RunPaths,
    OUTPUT_DIR_ENV,
};
