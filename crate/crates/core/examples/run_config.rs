//! Library equivalent of the `twinworld` binary: parse a config, run it,
//! list the files.
//!
//! cargo run --release --example run_config -- my.cfg

use twinworld::experiment::{run, ExperimentConfig};

const DEFAULT: &str = "
experiment = chsh
mode = ensemble
n_samples = 10000
seed = 3
phi_min = -pi
phi_max = pi
phi_points = 9
out_dir = target/example_out
";

fn main() -> twinworld::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_file(path.as_ref())?,
        None => ExperimentConfig::parse(DEFAULT)?,
    };
    let report = run(&cfg)?;
    println!("{}", report.summary);
    for f in &report.files {
        println!("  {}", f.display());
    }
    Ok(())
}
