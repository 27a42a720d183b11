//! Exact quantum-mechanical reference.
//!
//! Complex state-vector simulation of the circuits, exact and Euler
//! evolution of the lattice Hamiltonian `H = −Δ + W`, the CHSH correlators
//! and the metrics used to compare emulated and exact states.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::dynamics::{neighbor_sum, LatticeSpec, PotentialField};
use crate::error::{Error, Result};
use crate::state::{complexify, realify, ComplexState, Norm, RealifiedState};

const UNITARY_TOL: f64 = 1e-12;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn pauli_x() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn hadamard() -> DMatrix<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_row_slice(2, 2, &[c(s), c(s), c(s), c(-s)])
}

/// `Q(θ) = cos θ X + sin θ Z`.
pub fn q_theta(theta: f64) -> DMatrix<Complex64> {
    let (s, co) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c(s), c(co), c(co), c(-s)])
}

/// `diag(1, e^{iφ})`.
pub fn phase_gate(phi: f64) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), Complex64::from_polar(1.0, phi)])
}

/// Real rotation `[[cos φ, −sin φ], [sin φ, cos φ]]`.
pub fn real_rotation(phi: f64) -> DMatrix<Complex64> {
    let (s, co) = phi.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)])
}

/// `|0⟩⟨0| ⊗ 1 + |1⟩⟨1| ⊗ U` on (control, target).
pub fn controlled(u: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let d = u.nrows();
    let mut out = DMatrix::identity(2 * d, 2 * d);
    out.view_mut((d, d), (d, d)).copy_from(u);
    out
}

pub fn cnot() -> DMatrix<Complex64> {
    controlled(&pauli_x())
}

fn unitarity_defect(u: &DMatrix<Complex64>) -> f64 {
    let d = u.nrows();
    (u.adjoint() * u - DMatrix::<Complex64>::identity(d, d))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// A unitary acting on the listed qubits (big-endian in that order). An
/// empty wire list with a 1×1 matrix is a global phase.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryGate {
    pub matrix: DMatrix<Complex64>,
    pub wires: Vec<usize>,
}

/// Ordered list of unitaries on `n_qubits`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryProgram {
    n_qubits: usize,
    gates: Vec<UnitaryGate>,
}

impl UnitaryProgram {
    pub fn new(n_qubits: usize) -> Self {
        UnitaryProgram {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn push(&mut self, matrix: DMatrix<Complex64>, wires: Vec<usize>) -> Result<()> {
        let dim = 1usize << wires.len();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::InvalidGate(format!(
                "{}x{} matrix on {} wire(s)",
                matrix.nrows(),
                matrix.ncols(),
                wires.len()
            )));
        }
        let mut seen = vec![false; self.n_qubits];
        for &w in &wires {
            if w >= self.n_qubits || std::mem::replace(&mut seen[w], true) {
                return Err(Error::InvalidGate(format!(
                    "wires {wires:?} invalid for {} qubits",
                    self.n_qubits
                )));
            }
        }
        let defect = unitarity_defect(&matrix);
        if defect > UNITARY_TOL {
            return Err(Error::InvalidGate(format!("gate not unitary (defect {defect:e})")));
        }
        self.gates.push(UnitaryGate { matrix, wires });
        Ok(())
    }

    pub fn with(mut self, matrix: DMatrix<Complex64>, wires: Vec<usize>) -> Result<Self> {
        self.push(matrix, wires)?;
        Ok(self)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[UnitaryGate] {
        &self.gates
    }
}

fn apply_unitary(amps: &[Complex64], n: usize, gate: &UnitaryGate) -> Vec<Complex64> {
    let k = gate.wires.len();
    let shifts: Vec<usize> = gate.wires.iter().map(|&w| n - 1 - w).collect();
    let mask: usize = shifts.iter().map(|&s| 1 << s).sum();
    let scatter = |local: usize| -> usize {
        shifts
            .iter()
            .enumerate()
            .map(|(pos, &s)| ((local >> (k - 1 - pos)) & 1) << s)
            .sum()
    };
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
    for (idx, &a) in amps.iter().enumerate() {
        if a == Complex64::new(0.0, 0.0) {
            continue;
        }
        let local = shifts.iter().fold(0, |acc, &s| 2 * acc + ((idx >> s) & 1));
        let base = idx & !mask;
        for row in 0..(1 << k) {
            let u = gate.matrix[(row, local)];
            if u != Complex64::new(0.0, 0.0) {
                out[base | scatter(row)] += u * a;
            }
        }
    }
    out
}

/// `Ψ = U_n ··· U_1 ψ₀`.
pub fn simulate_circuit(program: &UnitaryProgram, psi0: &ComplexState) -> Result<ComplexState> {
    let dim = 1usize << program.n_qubits;
    if psi0.len() != dim {
        return Err(Error::InvalidGate(format!(
            "state of length {} for {} qubits",
            psi0.len(),
            program.n_qubits
        )));
    }
    let mut amps = psi0.amplitudes().to_vec();
    for gate in &program.gates {
        amps = apply_unitary(&amps, program.n_qubits, gate);
    }
    Ok(ComplexState::new(amps))
}

/// Distribution of the listed qubits (big-endian in that order) under the
/// Born rule.
pub fn born_marginal(psi: &ComplexState, n_qubits: usize, measured: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; 1 << measured.len()];
    for (idx, p) in psi.probabilities().into_iter().enumerate() {
        let outcome = measured
            .iter()
            .fold(0, |acc, &q| 2 * acc + ((idx >> (n_qubits - 1 - q)) & 1));
        out[outcome] += p;
    }
    out
}

/// Singlet `(|01⟩ − |10⟩)/√2`.
pub fn singlet() -> ComplexState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexState::new(vec![c(0.0), c(s), c(-s), c(0.0)])
}

/// `⟨Q(θ₁) ⊗ Q(θ₂)⟩` on the singlet.
pub fn chsh_expectation(theta1: f64, theta2: f64) -> f64 {
    let op = q_theta(theta1).kronecker(&q_theta(theta2));
    let psi = DVector::from_vec(singlet().into_amplitudes());
    (psi.adjoint() * op * &psi)[(0, 0)].re
}

/// Measurement angles `(θ₁, θ₂)` of the four CHSH terms and their signs in
/// `⟨QS⟩ + ⟨RS⟩ + ⟨RT⟩ − ⟨QT⟩`.
pub fn chsh_settings(phi: f64) -> [(&'static str, f64, f64, f64); 4] {
    use std::f64::consts::FRAC_PI_2;
    [
        ("QS", FRAC_PI_2, FRAC_PI_2 + phi, 1.0),
        ("RS", 0.0, FRAC_PI_2 + phi, 1.0),
        ("RT", 0.0, phi, 1.0),
        ("QT", FRAC_PI_2, phi, -1.0),
    ]
}

/// CHSH combination for the settings of [`chsh_settings`].
pub fn chsh_combination(phi: f64) -> f64 {
    chsh_settings(phi)
        .iter()
        .map(|&(_, t1, t2, sign)| sign * chsh_expectation(t1, t2))
        .sum()
}

/// Lattice Hamiltonian `H = −(Σ O₁ − 2DM) + diag(W)`.
pub fn lattice_hamiltonian(spec: &LatticeSpec, w: &PotentialField) -> Result<DMatrix<f64>> {
    if w.values().len() != spec.n_configs() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_configs(),
            found: w.values().len(),
        });
    }
    let s = spec.n_configs();
    let mut h = DMatrix::zeros(s, s);
    for (i, j, &v) in neighbor_sum(spec).triplet_iter() {
        h[(i, j)] -= v;
    }
    let dm2 = 2.0 * spec.n_coords() as f64;
    for (x, &wx) in w.values().iter().enumerate() {
        h[(x, x)] += dm2 + wx;
    }
    Ok(h)
}

/// Stepping scheme of the reference evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stepping {
    /// `Ũ = [[1, H dt], [−H dt, 1]]` on `(Re, Im)`, renormalized each step.
    Euler,
    /// `exp(−iHt)` from the eigendecomposition of `H`.
    Exact,
}

/// Exact evolution through the eigendecomposition of `H`.
#[derive(Clone, Debug)]
pub struct ExactPropagator {
    energies: DVector<f64>,
    modes: DMatrix<f64>,
}

impl ExactPropagator {
    pub fn new(spec: &LatticeSpec, w: &PotentialField) -> Result<Self> {
        let eig = SymmetricEigen::new(lattice_hamiltonian(spec, w)?);
        Ok(ExactPropagator {
            energies: eig.eigenvalues,
            modes: eig.eigenvectors,
        })
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    /// `Ψ(t) = V e^{−iEt} Vᵀ Ψ(0)`.
    pub fn evolve(&self, psi0: &ComplexState, t: f64) -> Result<ComplexState> {
        let dim = self.energies.len();
        if psi0.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: psi0.len(),
            });
        }
        let psi = DVector::from_column_slice(psi0.amplitudes());
        let modes = self.modes.map(c);
        let mut coeffs = modes.transpose() * psi;
        for (k, z) in coeffs.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, -self.energies[k] * t);
        }
        Ok(ComplexState::new((modes * coeffs).as_slice().to_vec()))
    }
}

/// One Euler step of the realified Schrödinger equation, renormalized.
pub fn euler_step(phi: &[f64], h: &DMatrix<f64>, dt: f64) -> Vec<f64> {
    let s = h.nrows();
    let (re, im) = phi.split_at(s);
    let re_v = DVector::from_column_slice(re);
    let im_v = DVector::from_column_slice(im);
    let h_re = h * &re_v;
    let h_im = h * &im_v;
    let mut out: Vec<f64> = (0..s)
        .map(|x| re[x] + dt * h_im[x])
        .chain((0..s).map(|x| im[x] - dt * h_re[x]))
        .collect();
    let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut out {
        *v /= n;
    }
    out
}

/// One reference step of a realified state.
pub fn exact_schrodinger_step(
    phi: &RealifiedState,
    spec: &LatticeSpec,
    w: &PotentialField,
    dt: f64,
    stepping: Stepping,
) -> Result<RealifiedState> {
    if phi.len() != 2 * spec.n_configs() {
        return Err(Error::DimensionMismatch {
            expected: 2 * spec.n_configs(),
            found: phi.len(),
        });
    }
    match stepping {
        Stepping::Euler => Ok(RealifiedState::new(euler_step(
            phi.values(),
            &lattice_hamiltonian(spec, w)?,
            dt,
        ))),
        Stepping::Exact => {
            let psi = complexify(phi)?;
            Ok(realify(&ExactPropagator::new(spec, w)?.evolve(&psi, dt)?))
        }
    }
}

/// Reference states at the requested step indices (sorted, deduplicated).
pub fn exact_propagate(
    psi0: &ComplexState,
    spec: &LatticeSpec,
    w: &PotentialField,
    dt: f64,
    n_steps: usize,
    stepping: Stepping,
    snapshot_steps: &[usize],
) -> Result<Vec<(usize, ComplexState)>> {
    let mut wanted: Vec<usize> = snapshot_steps.iter().copied().filter(|&s| s <= n_steps).collect();
    wanted.sort_unstable();
    wanted.dedup();
    match stepping {
        Stepping::Exact => {
            let prop = ExactPropagator::new(spec, w)?;
            wanted
                .into_iter()
                .map(|n| Ok((n, prop.evolve(psi0, n as f64 * dt)?)))
                .collect()
        }
        Stepping::Euler => {
            let h = lattice_hamiltonian(spec, w)?;
            let mut phi = realify(&psi0.normalized()?).into_values();
            let mut out = Vec::with_capacity(wanted.len());
            let last = wanted.last().copied().unwrap_or(0);
            for n in 0..=last {
                if n > 0 {
                    phi = euler_step(&phi, &h, dt);
                }
                if wanted.binary_search(&n).is_ok() {
                    out.push((n, complexify(&RealifiedState::new(phi.clone()))?));
                }
            }
            Ok(out)
        }
    }
}

/// Comparison metric between an exact and an emulated realified state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// `||Φ − φ/||φ||₂||₂`.
    TwoNormDiff,
    /// Largest `|log₁₀ p_emulated − log₁₀ p_exact|` over sites with
    /// `p_exact` above [`DENSITY_FLOOR`].
    Log10DensityDiff,
    /// `|Var_emulated(x) − Var_exact(x)|` of the site index.
    Variance,
}

pub const DENSITY_FLOOR: f64 = 1e-20;

/// Site densities `Σ_ρ φ²_{ρx}` of a 2-normalized realified vector.
pub fn density(phi: &[f64]) -> Vec<f64> {
    let s = phi.len() / 2;
    let n2: f64 = phi.iter().map(|v| v * v).sum();
    (0..s).map(|x| (phi[x] * phi[x] + phi[s + x] * phi[s + x]) / n2).collect()
}

/// Mean and variance of the site index under `density`.
pub fn position_moments(density: &[f64]) -> (f64, f64) {
    let total: f64 = density.iter().sum();
    let mean = density.iter().enumerate().map(|(x, p)| x as f64 * p).sum::<f64>() / total;
    let var = density
        .iter()
        .enumerate()
        .map(|(x, p)| (x as f64 - mean).powi(2) * p)
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Compares `phi` to `exact` after 2-normalizing `phi`. Sign-sensitive: use
/// [`align_gauge`] first to remove the prefactor freedom.
pub fn compare(exact: &RealifiedState, emulated: &RealifiedState, metric: Metric) -> Result<f64> {
    if exact.len() != emulated.len() {
        return Err(Error::DimensionMismatch {
            expected: exact.len(),
            found: emulated.len(),
        });
    }
    let phi = emulated.normalized(Norm::Two)?;
    Ok(match metric {
        Metric::TwoNormDiff => exact
            .values()
            .iter()
            .zip(phi.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Log10DensityDiff => {
            let pe = density(exact.values());
            let pm = density(phi.values());
            pe.iter()
                .zip(&pm)
                .filter(|(e, _)| **e > DENSITY_FLOOR)
                .map(|(e, m)| (m.max(f64::MIN_POSITIVE).log10() - e.log10()).abs())
                .fold(0.0, f64::max)
        }
        Metric::Variance => {
            let (_, ve) = position_moments(&density(exact.values()));
            let (_, vm) = position_moments(&density(phi.values()));
            (ve - vm).abs()
        }
    })
}

/// Prefactor freedom removed before comparing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gauge {
    /// Real prefactor: flip the sign if the overlap is negative.
    Sign,
    /// Global phase: rotate `φ` by `e^{iα}`, `α = arg Σ conj(φ)·Φ`.
    Phase,
}

impl Gauge {
    pub fn name(self) -> &'static str {
        match self {
            Gauge::Sign => "sign",
            Gauge::Phase => "phase",
        }
    }
}

/// Rotates (or reflects) `emulated` to maximize its real overlap with
/// `exact`. Both are realified `(Re, Im)` vectors of equal length.
pub fn align_gauge(exact: &RealifiedState, emulated: &RealifiedState, gauge: Gauge) -> Result<RealifiedState> {
    if exact.len() != emulated.len() {
        return Err(Error::DimensionMismatch {
            expected: exact.len(),
            found: emulated.len(),
        });
    }
    match gauge {
        Gauge::Sign => {
            let overlap: f64 = exact.values().iter().zip(emulated.values()).map(|(a, b)| a * b).sum();
            let sign = if overlap < 0.0 { -1.0 } else { 1.0 };
            Ok(RealifiedState::new(emulated.values().iter().map(|v| sign * v).collect()))
        }
        Gauge::Phase => {
            let big = complexify(exact)?;
            let small = complexify(emulated)?;
            let overlap: Complex64 = small
                .amplitudes()
                .iter()
                .zip(big.amplitudes())
                .map(|(e, x)| e.conj() * x)
                .sum();
            let rot = Complex64::from_polar(1.0, overlap.arg());
            Ok(realify(&ComplexState::new(
                small.amplitudes().iter().map(|z| z * rot).collect(),
            )))
        }
    }
}
