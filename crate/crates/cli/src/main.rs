use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corehole_cli::compare::{default_out, render};
use corehole_cli::{compare, run_job, CliError, CompareOptions, RunConfig};

#[derive(Parser)]
#[command(
    name = "corehole",
    version,
    about = "Core-level photoemission spectral functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured job and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the QPE seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: run.out from the config, else ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished runs side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Rigid shift applied to every spectrum (eV).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        shift: f64,
        /// Common re-broadening width (eV).
        #[arg(long)]
        broaden: Option<f64>,
        /// Two-column experimental spectrum to overlay.
        #[arg(long)]
        experiment: Option<PathBuf>,
        /// Maximum energy separation for matched peaks (eV).
        #[arg(long, default_value_t = corehole_cli::compare::DEFAULT_TOLERANCE_EV)]
        tolerance: f64,
        /// Compare runs made on different integrals.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.qpe.seed = s;
            }
            let out = out
                .or_else(|| cfg.run.out.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let summary = run_job(&cfg, &out)?;
            println!(
                "{} run written to {}",
                summary.peaks.method,
                summary.out_dir.display()
            );
            for p in &summary.peaks.peaks {
                println!("  {:>12.3} eV  {:>8.4}", p.energy_ev, p.weight);
            }
            Ok(())
        }
        Command::Compare {
            dirs,
            shift,
            broaden,
            experiment,
            tolerance,
            force,
            out,
        } => {
            let opts = CompareOptions {
                shift,
                broaden,
                experiment,
                tolerance,
                force,
                out: Some(out.unwrap_or_else(|| default_out(&dirs))),
            };
            let report = compare(&dirs, &opts)?;
            print!("{}", render(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
