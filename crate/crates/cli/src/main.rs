use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Train and check Equilibrium Propagation networks.
///
/// Settings are read from an optional `key = value` file and then from
/// `--key value` flags, which take precedence. Unset hyperparameters default
/// to the published values for the topology.
#[derive(Parser)]
#[command(name = "eqprop", version)]
struct Cli {
    /// train, eval, gradcheck or stochastic-check
    command: String,

    /// Configuration file with one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Setting overrides such as `--epochs 5 --topology 784-500-10`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut args = vec![cli.command];
    if let Some(c) = cli.config {
        args.push("--config".into());
        args.push(c.to_string_lossy().into_owned());
    }
    args.extend(cli.overrides);
    match eqprop_cli::run_args(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
