//! Experiment configuration, workloads, the step driver and its metrics.

pub mod config;
pub mod metrics;
pub mod run;
pub mod streams;

pub use config::{ConfigError, ExperimentConfig, Profile, Protocol};
pub use metrics::{parse_json_lines, summarize, to_json_lines, MetricsRecord, Summary};
pub use run::{audit_run, query_count, run_experiment, run_trials, RunError, RunOutput, Simulation, Workload};
pub use streams::{load_stream, parse_stream, synth_stream, true_counts, DataError, SynthParams};
