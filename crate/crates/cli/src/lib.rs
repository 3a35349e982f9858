//! Configuration, checkpoints, metrics and check suites for the `eqprop`
//! command-line tool.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod metrics;
pub mod run;

pub use checkpoint::{Checkpoint, Params};
pub use config::{parse_config, Command, RunConfig, Split};
pub use error::{CliError, CliResult};
pub use run::{run, run_args};
