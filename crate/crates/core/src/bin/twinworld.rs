use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use twinworld::experiment::{self, ExperimentConfig};

/// Run an emulation experiment from a key = value config file.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Config file.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample pairs per grid point (per setting for chsh).
    #[arg(long)]
    samples: Option<usize>,
    /// `distribution` or `ensemble`.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &Args) -> twinworld::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.samples {
        cfg.n_samples = n;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = experiment::parse_mode(mode)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load(&args).and_then(|cfg| {
        let report = experiment::run(&cfg)?;
        println!(
            "{}: {} ({:.2} s, {} files in {})",
            cfg.experiment.name(),
            report.summary,
            report.wall_time,
            report.files.len(),
            cfg.out_dir.display()
        );
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
