//! File formats, statistics, experiment harness and report emission on top
//! of `precept-core`.

pub mod formats;
pub mod goldens;
pub mod harness;
pub mod oracle;
pub mod report;
pub mod settings;
pub mod stats;

pub use harness::{run_experiment, ExperimentConfig, ExperimentId, ResultSet, SkMode};
pub use report::emit_report;
