//! CHSH combination from coincidence statistics of the twin worlds.

use std::f64::consts::FRAC_PI_4;
use twinworld::circuits::{chsh, correlator};
use twinworld::oracle::{chsh_combination, chsh_settings};
use twinworld::twin::{run_twin_sampled, WorldSampling};

fn main() -> twinworld::Result<()> {
    let n = 10_000;
    println!("{:>8} {:>10} {:>10}", "phi", "E sampled", "E quantum");
    for k in -4..=4 {
        let phi = k as f64 * FRAC_PI_4;
        let mut e = 0.0;
        for (s, &(_, t1, t2, sign)) in chsh_settings(phi).iter().enumerate() {
            let run = run_twin_sampled(&chsh(t1, t2), n, 100 + 4 * (k + 4) as u64 + s as u64, WorldSampling::Ensemble)?;
            e += sign * correlator(&run.frequencies());
        }
        let mark = if e.abs() > 2.0 { "  > 2" } else { "" };
        println!("{phi:8.4} {e:10.4} {:10.4}{mark}", chsh_combination(phi));
    }
    println!("Tsirelson bound 2*sqrt(2) = {:.4}", 2.0 * 2f64.sqrt());
    Ok(())
}
