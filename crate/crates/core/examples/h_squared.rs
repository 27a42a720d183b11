//! Hadamard twice on a |0⟩ grabit, one stochastic gate at a time.

use twinworld::gates::{apply_gate, GateSpec};
use twinworld::state::GrabitState;

fn main() -> twinworld::Result<()> {
    let mut state = GrabitState::ground(1);
    println!("start      P = {:?}  phi = {:?}", state.probs(), state.extract_phi().values());
    for round in 1..=2 {
        state = apply_gate(&state, &GateSpec::h(0))?;
        println!(
            "after S_H {round}: P = {:?}  phi = {:?}",
            state.probs(),
            state.extract_phi().values()
        );
    }
    // P = (2,0,1,1)/4: blv 1 carries mass but no amplitude.
    let refreshed = apply_gate(&state, &GateSpec::refresh())?;
    println!("refreshed  P = {:?}", refreshed.probs());
    Ok(())
}
