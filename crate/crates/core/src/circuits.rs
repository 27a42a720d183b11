//! Grabit circuits: the program type, its unitary mirror, and the two
//! built-in experiments.
//!
//! Phase rotation (3 grabits): ancilla `0` (measured), qubit `1`, ReIm
//! grabit `2`. The qubit is put into `(|0⟩ + e^{iφ}|1⟩)/√2` and the ancilla
//! reads out `X`, so outcome 0 has probability `(1 + cos φ)/2`.
//!
//! CHSH (4 grabits, real): ancilla A `0`, qubit A `1`, ancilla B `2`, qubit
//! B `3`. Qubits 1 and 3 are prepared in the singlet and `Q(θ₁)`, `Q(θ₂)`
//! are measured through the ancillas.

use crate::error::{Error, Result};
use crate::gates::{apply_gate, GateKind, GateSpec};
use crate::oracle::{self, UnitaryProgram};
use crate::state::{ComplexState, GrabitState};

/// A gate sequence on a grabit register, optionally with one ReIm grabit.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    n_grabits: usize,
    reim: Option<usize>,
    gates: Vec<GateSpec>,
}

impl Program {
    pub fn new(n_grabits: usize, reim: Option<usize>, gates: Vec<GateSpec>) -> Result<Self> {
        if n_grabits == 0 || n_grabits > 10 {
            return Err(Error::InvalidProgram(format!(
                "register of {n_grabits} grabits outside 1..=10"
            )));
        }
        if reim.is_some_and(|r| r >= n_grabits) {
            return Err(Error::InvalidProgram(format!(
                "ReIm grabit {reim:?} outside register"
            )));
        }
        for gate in &gates {
            gate.validate(n_grabits)?;
            let touches_reim = |g: &usize| Some(*g) == reim;
            let reim_ok = match gate.kind {
                GateKind::Phase(_)
                | GateKind::ControlledPhase(_)
                | GateKind::AmplitudeReduction(_)
                | GateKind::Refresh => !gate.controls.iter().any(touches_reim),
                _ => !gate.wires().iter().any(touches_reim),
            };
            if !reim_ok {
                return Err(Error::InvalidProgram(format!(
                    "{:?} cannot act on the ReIm grabit",
                    gate.kind
                )));
            }
        }
        Ok(Program {
            n_grabits,
            reim,
            gates,
        })
    }

    pub fn n_grabits(&self) -> usize {
        self.n_grabits
    }

    pub fn reim(&self) -> Option<usize> {
        self.reim
    }

    pub fn gates(&self) -> &[GateSpec] {
        &self.gates
    }

    /// Grabits read out by the measurement gates, in order of appearance.
    pub fn measured(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for g in self.gates.iter().filter(|g| g.kind == GateKind::Measure) {
            for &t in &g.targets {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// Fails unless a refreshment precedes the first measurement and some
    /// grabit is measured.
    pub fn check_readout(&self) -> Result<()> {
        let first_measure = self
            .gates
            .iter()
            .position(|g| g.kind == GateKind::Measure)
            .ok_or_else(|| Error::InvalidProgram("program measures nothing".into()))?;
        let refreshed_last = self.gates[..first_measure]
            .iter()
            .rev()
            .find(|g| g.kind != GateKind::Measure)
            .is_some_and(|g| g.kind == GateKind::Refresh);
        if !refreshed_last {
            return Err(Error::InvalidProgram(
                "readout must directly follow a refreshment".into(),
            ));
        }
        Ok(())
    }

    /// Exact distribution after all gates, starting from the all-zero
    /// configuration.
    pub fn run_distribution(&self) -> Result<GrabitState> {
        self.run_from(&GrabitState::ground(self.n_grabits))
    }

    pub fn run_from(&self, initial: &GrabitState) -> Result<GrabitState> {
        if initial.n_grabits() != self.n_grabits {
            return Err(Error::DimensionMismatch {
                expected: self.n_grabits,
                found: initial.n_grabits(),
            });
        }
        self.gates
            .iter()
            .try_fold(initial.clone(), |state, gate| apply_gate(&state, gate))
    }

    /// Distribution right before the last refreshment, and right after it.
    pub fn around_last_refresh(&self) -> Result<(GrabitState, GrabitState)> {
        let last = self
            .gates
            .iter()
            .rposition(|g| g.kind == GateKind::Refresh)
            .ok_or_else(|| Error::InvalidProgram("program has no refreshment".into()))?;
        let before = self.gates[..last]
            .iter()
            .try_fold(GrabitState::ground(self.n_grabits), |s, g| apply_gate(&s, g))?;
        let after = apply_gate(&before, &self.gates[last])?;
        Ok((before, after))
    }

    /// Qubit index of every grabit other than the ReIm grabit.
    fn qubit_of(&self, grabit: usize) -> usize {
        match self.reim {
            Some(r) if grabit > r => grabit - 1,
            _ => grabit,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_grabits - self.reim.is_some() as usize
    }

    /// The quantum circuit the program emulates. Phase rotations of the ReIm
    /// grabit become complex phases; refreshments, measurements and
    /// amplitude reductions have no counterpart.
    pub fn to_unitary(&self) -> Result<UnitaryProgram> {
        let mut prog = UnitaryProgram::new(self.n_qubits());
        let on_reim = |g: &GateSpec| self.reim.is_some_and(|r| g.targets.contains(&r));
        for gate in &self.gates {
            let q = |g: usize| self.qubit_of(g);
            let t = || q(gate.targets[0]);
            let ctl = || q(gate.controls[0]);
            match gate.kind {
                GateKind::X => prog.push(oracle::pauli_x(), vec![t()])?,
                GateKind::H => prog.push(oracle::hadamard(), vec![t()])?,
                GateKind::Q(theta) => prog.push(oracle::q_theta(theta), vec![t()])?,
                GateKind::Cnot => prog.push(oracle::cnot(), vec![ctl(), t()])?,
                GateKind::ControlledQ(theta) => {
                    prog.push(oracle::controlled(&oracle::q_theta(theta)), vec![ctl(), t()])?
                }
                GateKind::Phase(phi) if on_reim(gate) => prog.push(
                    nalgebra::DMatrix::from_element(1, 1, num_complex::Complex64::from_polar(1.0, phi)),
                    vec![],
                )?,
                GateKind::Phase(phi) => prog.push(oracle::real_rotation(phi), vec![t()])?,
                GateKind::ControlledPhase(phi) if on_reim(gate) => {
                    prog.push(oracle::phase_gate(phi), vec![ctl()])?
                }
                GateKind::ControlledPhase(phi) => prog.push(
                    oracle::controlled(&oracle::real_rotation(phi)),
                    vec![ctl(), t()],
                )?,
                GateKind::AmplitudeReduction(_) | GateKind::Refresh | GateKind::Measure => {}
            }
        }
        Ok(prog)
    }

    /// Born distribution of the measured grabits from the unitary mirror.
    pub fn oracle_distribution(&self) -> Result<Vec<f64>> {
        let prog = self.to_unitary()?;
        let psi = oracle::simulate_circuit(&prog, &ComplexState::basis(1 << prog.n_qubits(), 0))?;
        let measured: Vec<usize> = self
            .measured()
            .into_iter()
            .map(|g| {
                if Some(g) == self.reim {
                    Err(Error::InvalidProgram("the ReIm grabit cannot be measured".into()))
                } else {
                    Ok(self.qubit_of(g))
                }
            })
            .collect::<Result<_>>()?;
        Ok(oracle::born_marginal(&psi, prog.n_qubits(), &measured))
    }
}

/// Single-qubit phase circuit; outcome 0 of grabit 0 has probability
/// `(1 + cos φ)/2`.
pub fn phase_rotation(phi: f64) -> Program {
    Program::new(
        3,
        Some(2),
        vec![
            GateSpec::h(1),
            GateSpec::controlled_phase(1, 2, phi),
            GateSpec::h(0),
            GateSpec::cnot(0, 1),
            GateSpec::h(0),
            GateSpec::refresh(),
            GateSpec::measure(vec![0]),
        ],
    )
    .expect("phase-rotation circuit is well formed")
}

/// CHSH circuit measuring `Q(θ₁) ⊗ Q(θ₂)` on the singlet of grabits 1, 3
/// through ancillas 0, 2.
pub fn chsh(theta1: f64, theta2: f64) -> Program {
    Program::new(
        4,
        None,
        vec![
            GateSpec::x(1),
            GateSpec::h(1),
            GateSpec::cnot(1, 3),
            GateSpec::x(3),
            GateSpec::h(0),
            GateSpec::h(2),
            GateSpec::controlled_q(0, 1, theta1),
            GateSpec::controlled_q(2, 3, theta2),
            GateSpec::h(0),
            GateSpec::h(2),
            GateSpec::refresh(),
            GateSpec::measure(vec![0, 2]),
        ],
    )
    .expect("CHSH circuit is well formed")
}

/// `⟨Q(θ₁) ⊗ Q(θ₂)⟩ = p₀₀ − p₀₁ − p₁₀ + p₁₁` from ancilla outcomes.
pub fn correlator(p: &[f64]) -> f64 {
    p[0] - p[1] - p[2] + p[3]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn oracle_mirrors_match_closed_forms() {
        for k in 0..=20 {
            let phi = -PI + k as f64 * PI / 10.0;
            let p = phase_rotation(phi).oracle_distribution().unwrap();
            assert!((p[0] - (1.0 + phi.cos()) / 2.0).abs() < 1e-14);
        }
        for &(t1, t2) in &[(FRAC_PI_2, FRAC_PI_4), (0.0, 0.3), (1.0, -2.0)] {
            let p = chsh(t1, t2).oracle_distribution().unwrap();
            assert!((correlator(&p) + (t1 - t2).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn programs_end_with_refreshed_readout() {
        phase_rotation(0.3).check_readout().unwrap();
        chsh(0.1, 0.2).check_readout().unwrap();
        let bad = Program::new(1, None, vec![GateSpec::h(0), GateSpec::measure(vec![0])]).unwrap();
        assert!(matches!(bad.check_readout(), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn reim_grabit_is_protected() {
        assert!(Program::new(2, Some(1), vec![GateSpec::h(1)]).is_err());
        assert!(Program::new(2, Some(1), vec![GateSpec::controlled_phase(1, 0, 0.1)]).is_err());
        assert!(Program::new(2, Some(1), vec![GateSpec::phase(1, 0.1)]).is_ok());
        assert!(Program::new(2, Some(2), vec![]).is_err());
    }

    #[test]
    fn refresh_split_points() {
        let (before, after) = chsh(FRAC_PI_2, FRAC_PI_4).around_last_refresh().unwrap();
        assert_eq!(after, crate::refresh::refresh_grabit(&before).unwrap());
        assert_eq!(after, chsh(FRAC_PI_2, FRAC_PI_4).run_distribution().unwrap());
    }
}
