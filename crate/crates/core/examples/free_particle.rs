//! Free particle on a 5-site ring, started on one site: emulated variance
//! against the exact one.

use twinworld::experiment::{free_particle_run, ExperimentConfig, ExperimentKind};
use twinworld::oracle::{density, position_moments, Metric};

fn main() -> twinworld::Result<()> {
    let cfg = ExperimentConfig::defaults(ExperimentKind::FreeParticle);
    println!("N = {}, {} steps to t = {}", cfg.n, cfg.n_steps(), cfg.t_max);
    let pairs = free_particle_run(&cfg)?;
    for p in pairs.iter().step_by(5) {
        let (_, ve) = position_moments(&density(p.exact.values()));
        let (_, vm) = position_moments(&density(p.emulated.values()));
        println!("t {:5.2}  var exact {ve:.5}  emulated {vm:.5}", p.time);
    }
    let last = pairs.last().unwrap();
    println!("final two-norm difference {:.4e}", last.metric(Metric::TwoNormDiff)?);
    println!("{:>4} {:>4} {:>10} {:>10}", "rho", "x", "exact", "emulated");
    for i in 0..2 * cfg.n {
        println!(
            "{:>4} {:>4} {:10.5} {:10.5}",
            i / cfg.n,
            i % cfg.n,
            last.exact.values()[i],
            last.emulated.values()[i]
        );
    }
    Ok(())
}
