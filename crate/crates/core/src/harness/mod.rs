//! Experiment plumbing shared by the command-line tool: configuration files,
//! the results table, SVG plots and the self-check suite.

mod config;
mod plot;
mod results;
mod verify;

pub use config::{
    ChannelSection, ConfigError, DatasetSection, DeskScale, ExperimentConfig, ModelSection, Modulation, Split,
    SCHEMA_VERSION,
};
pub use plot::render_svg;
pub use results::{read_results, write_results, ResultRow, ResultsError, RESULTS_HEADER};
pub use verify::{format_report, run_verify, CheckResult, VerifyFaults};
