//! Batch entry point: tree and pairing censuses, scheme printing, order
//! checks, Monte-Carlo validation, and convergence studies, with CSV/JSON
//! reporting.

mod config;
mod run;

use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 1 failed acceptance predicate, 2 usage error
/// (from clap), 65 invalid configuration, 74 I/O failure.
pub const EXIT_FAILED_PREDICATE: i32 = 1;
pub const EXIT_BAD_CONFIG: i32 = 65;
pub const EXIT_IO: i32 = 74;

#[derive(Parser)]
#[command(name = "pfi", version, about = "moment integrators for dispersive equations with random data")]
struct Cli {
    /// Optional TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the Duhamel trees of an equation at a truncation order.
    Trees(config::CommonArgs),
    /// Enumerate the paired-forest classes with multiplicities.
    Pairings(config::CommonArgs),
    /// Print the assembled scheme in Fourier, physical, or JSON form.
    Scheme(config::SchemeArgs),
    /// Per-forest order verification: CSV of forest id, n, r, tau, error,
    /// fitted slope.
    OrderCheck(config::OrderCheckArgs),
    /// Scheme output against Monte-Carlo reference moments.
    McValidate(config::McArgs),
    /// Scheme-versus-series convergence study over a tau list.
    Converge(config::ConvergeArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(failed) => {
            if failed {
                EXIT_FAILED_PREDICATE
            } else {
                0
            }
        }
        Err(run::CliError::Config(msg)) => {
            eprintln!("configuration error: {}", msg);
            EXIT_BAD_CONFIG
        }
        Err(run::CliError::Io(e)) => {
            eprintln!("i/o error: {}", e);
            EXIT_IO
        }
        Err(run::CliError::Internal(msg)) => {
            eprintln!("error: {}", msg);
            EXIT_FAILED_PREDICATE
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<bool, run::CliError> {
    run::init_threads()?;
    match cli.command {
        Command::Trees(args) => run::trees(&args.materialize(cli.config.as_deref(), cli.show_config)?),
        Command::Pairings(args) => {
            run::pairings(&args.materialize(cli.config.as_deref(), cli.show_config)?)
        }
        Command::Scheme(args) => run::scheme(&args.materialize(cli.config.as_deref(), cli.show_config)?),
        Command::OrderCheck(args) => {
            run::order_check(&args.materialize(cli.config.as_deref(), cli.show_config)?)
        }
        Command::McValidate(args) => {
            run::mc_validate(&args.materialize(cli.config.as_deref(), cli.show_config)?)
        }
        Command::Converge(args) => {
            run::converge(&args.materialize(cli.config.as_deref(), cli.show_config)?)
        }
    }
}
