//! Exact twin-world statistics: squaring the refreshed marginal of one world
//! gives the Born rule of the emulated circuit.

use std::f64::consts::PI;
use twinworld::circuits::phase_rotation;
use twinworld::twin::run_twin_distribution;

fn main() -> twinworld::Result<()> {
    println!("{:>8} {:>12} {:>12} {:>10}", "phi", "twin p0", "quantum p0", "accept");
    for k in 0..=8 {
        let phi = -PI + k as f64 * PI / 4.0;
        let program = phase_rotation(phi);
        let twin = run_twin_distribution(&program)?;
        let quantum = program.oracle_distribution()?;
        println!(
            "{phi:8.4} {:12.9} {:12.9} {:10.6}",
            twin.outcome_probs[0], quantum[0], twin.acceptance
        );
    }
    Ok(())
}
