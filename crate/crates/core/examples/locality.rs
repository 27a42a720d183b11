//! Is a refreshment a product of local maps? The probabilistic swap, then
//! the last refreshment of the CHSH circuit at (π/2, π/4).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use twinworld::locality::{chsh_refresh_problem, minimize_q, verify_swap_lemma};

fn main() -> twinworld::Result<()> {
    for p in [0.0, 0.5, 1.0] {
        let report = verify_swap_lemma(p, 100, 1)?;
        println!("swap p = {p}");
        for step in &report.steps {
            println!("  {step}");
        }
        println!("  min ||S - A(x)B||^2 over {} restarts: {:.4e}", report.restarts, report.q_min);
    }

    let problem = chsh_refresh_problem(FRAC_PI_2, FRAC_PI_4)?;
    let (fa, fb) = problem.free_vars();
    println!("CHSH refreshment: {} free variables ({fa} from S^A, {fb} from S^B)", fa + fb);
    let start = std::time::Instant::now();
    let min = minimize_q(&problem, 64, 1);
    println!(
        "Q_min = {:.5e} (restart {}, {:.1} s)",
        min.q,
        min.restart,
        start.elapsed().as_secs_f64()
    );
    println!("constraint violation {:.1e}", problem.constraint_violation(&min.s_a, &min.s_b));
    Ok(())
}
