//! Configuration, orchestration and report emission for the `gapmodes` binary.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{parse_config, parse_config_str, Format, RunConfig};
pub use error::{CliError, CliResult};
pub use pipeline::{run_bands, run_pipeline, BandsOutcome};
pub use report::{emit_reports, validate_report, ReportBundle, Verdict, SCHEMA_VERSION};
