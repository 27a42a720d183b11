//! Gaussian packet hitting a barrier on a 120-site ring. The error against
//! the exact evolution grows linearly in time and halves with the step.
//!
//! cargo run --release --example tunneling -- 8001

use twinworld::experiment::{tunneling_run, ExperimentConfig, ExperimentKind};
use twinworld::oracle::{density, Metric};

fn main() -> twinworld::Result<()> {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Tunneling);
    if let Some(n_t) = std::env::args().nth(1) {
        cfg.n_t = n_t.parse().expect("N_t must be an integer");
    }
    cfg.validate()?;
    let start = std::time::Instant::now();
    let pairs = tunneling_run(&cfg)?;
    println!("N_t = {} ({:.2} s)", cfg.n_t, start.elapsed().as_secs_f64());
    for p in pairs.iter().step_by(4) {
        println!("t {:5.1}  error {:.5e}", p.time, p.metric(Metric::TwoNormDiff)?);
    }
    let mid = pairs.iter().find(|p| (p.time - 10.0).abs() < 1e-9).unwrap();
    let (de, dm) = (density(mid.exact.values()), density(mid.emulated.values()));
    println!("densities at t = 10 (every 10th site):");
    for x in (0..cfg.n).step_by(10) {
        println!("x {x:3}  exact {:.3e}  emulated {:.3e}", de[x], dm[x]);
    }
    Ok(())
}
