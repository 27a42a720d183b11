//! Sampled phase rotation: coincidence frequency of outcome 0 against
//! (1 + cos φ)/2, for both ways of sampling a world.

use std::f64::consts::PI;
use twinworld::circuits::phase_rotation;
use twinworld::twin::{run_twin_sampled, WorldSampling};

fn main() -> twinworld::Result<()> {
    let n = 100_000;
    for sampling in [WorldSampling::Distribution, WorldSampling::Ensemble] {
        println!("# {} sampling, {n} pairs per point", sampling.name());
        let mut inside = 0;
        let points = 41;
        for i in 0..points {
            let phi = -PI + 2.0 * PI * i as f64 / (points - 1) as f64;
            let run = run_twin_sampled(&phase_rotation(phi), n, 7 + i as u64, sampling)?;
            let p = (1.0 + phi.cos()) / 2.0;
            let f = run.frequencies()[0];
            let band = 3.0 * (p * (1.0 - p) / run.n_accepted as f64).sqrt();
            inside += ((f - p).abs() <= band) as usize;
            if i % 5 == 0 {
                println!("phi {phi:7.3}  f {f:.4}  exact {p:.4}  accepted {}", run.n_accepted);
            }
        }
        println!("{inside}/{points} points inside the 3 sigma band\n");
    }
    Ok(())
}
