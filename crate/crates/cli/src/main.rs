use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixkry_cli::config::Preset;
use mixkry_cli::{CliError, Config};

#[derive(Parser)]
#[command(name = "mixkry", version, about = "Hybrid reconstructions with mixed Gaussian priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct with one prior variant and selection method.
    Run { config: PathBuf },
    /// Run several prior variants on the same data.
    Compare { config: PathBuf },
    /// Learn Matérn parameters from training samples.
    Fit { config: PathBuf },
    /// Write a preset problem to MatrixMarket and PGM files.
    Gen {
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        size: Option<usize>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MIXKRY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MIXKRY_THREADS = '{v}': expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("MIXKRY_THREADS: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Run { config } => {
            let report = mixkry_cli::run(&Config::load(&config)?)?;
            print!("{}", report.summary);
        }
        Command::Compare { config } => {
            let cfg = Config::load(&config)?;
            let report = mixkry_cli::compare(&cfg)?;
            for (v, o) in &report.outcomes {
                println!(
                    "{v}: {} iterations, stop {}, final error {}",
                    o.iterations(),
                    o.stop.name(),
                    o.final_error().map(|e| format!("{e:.6}")).unwrap_or_else(|| "n/a".into())
                );
            }
            println!("wrote {}", report.csv.display());
        }
        Command::Fit { config } => {
            let cfg = Config::load(&config)?;
            let report = mixkry_cli::fit(&cfg)?;
            println!("nu = {:.6}, ell = {:.6}, objective = {:.6e}", report.fit.nu, report.fit.ell, report.fit.objective);
            println!("wrote {}", cfg.out_dir.join("fit.txt").display());
        }
        Command::Gen { preset, out, seed, size } => {
            let preset: Preset = preset.parse().map_err(CliError::Config)?;
            mixkry_cli::gen(preset, size, seed, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixkry: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
