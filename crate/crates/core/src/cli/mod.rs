//! Command-line harness: configuration, the time loop and file output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, RunConfig};
pub use output::{riemann_table, write_outputs};
pub use run::{run_case, RunReport};
