//! Two particles on a 3-site ring with a contact interaction: generator
//! structure, and one emulated step against the exact propagator.

use num_complex::Complex64;
use twinworld::dynamics::{build_gt, build_gv, distribution_from_state, Emulator, LatticeSpec, PotentialField};
use twinworld::oracle::{align_gauge, compare, ExactPropagator, Gauge, Metric};
use twinworld::state::{realify, ComplexState, Norm};

fn main() -> twinworld::Result<()> {
    let spec = LatticeSpec::new(3, 1, 2)?;
    let w = PotentialField::contact_interaction(&spec, 0.7)?;
    let g = build_gt(&spec).plus(&build_gv(&spec, &w)?);
    println!("{} configurations, generator {}x{}", spec.n_configs(), g.dim(), g.dim());
    println!("max |column sum| {:.2e}", g.column_sum_error());
    let [a, b, c, d] = g.abcd_blocks().expect("four-block pattern");
    println!("block norms A {:.3} B {:.3} C {:.3} D {:.3}", a.norm(), b.norm(), c.norm(), d.norm());

    // A generic complex start, so every block of the step matters.
    let amps: Vec<Complex64> = (0..spec.n_configs())
        .map(|i| Complex64::new(1.0 + (i as f64).sin(), (2.0 * i as f64).cos()))
        .collect();
    let psi = ComplexState::new(amps).normalized()?;
    let p0 = distribution_from_state(&spec, &psi)?;
    let exact = ExactPropagator::new(&spec, &w)?;
    println!("{:>10} {:>12} {:>8}", "dt", "step error", "ratio");
    let mut prev: Option<f64> = None;
    for dt in [0.04, 0.02, 0.01, 0.005] {
        let emu = Emulator::new(spec.clone(), w.clone(), dt)?;
        let phi = emu.step(&p0)?.extract_phi().normalized(Norm::Two)?;
        let reference = realify(&exact.evolve(&psi, dt)?);
        let err = compare(&reference, &align_gauge(&reference, &phi, Gauge::Phase)?, Metric::TwoNormDiff)?;
        let ratio = prev.map(|p| format!("{:.3}", p / err)).unwrap_or_default();
        println!("{dt:10.4} {err:12.4e} {ratio:>8}");
        prev = Some(err);
    }
    Ok(())
}
