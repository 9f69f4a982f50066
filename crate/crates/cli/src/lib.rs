//! File formats, report documents and subcommands of the `idfree-asd`
//! command-line tool.

pub mod app;
pub mod commands;
pub mod error;
pub mod formats;
pub mod report;
pub mod svg;

pub use commands::{
    cmd_check_table, cmd_evaluate, cmd_simulate, cmd_sweep, EvaluateOptions, ScoreSource,
    SweepOptions,
};
pub use error::{CliError, ErrorKind};
pub use report::ReportDocument;
