//! Stochastic gate matrices acting on grabits.
//!
//! All matrices are column-stochastic and act on probability vectors from the
//! left, `P' = S·P`. A single grabit is indexed by its b4v `2·blv + σ`; gates
//! on several grabits use the big-endian product index of the involved
//! grabits in the order `controls ++ targets`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::state::{GrabitState, DIST_TOL};

/// Tolerance on column sums of constructed matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Magnitudes below this are treated as exact zeros of `sin`/`cos`, so that
/// angles at quadrant boundaries produce the exact permutation limits.
const TRIG_ZERO: f64 = 1e-14;

/// Column-stochastic real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix {
    matrix: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidGate(format!(
                "stochastic matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if let Some(v) = matrix
            .iter()
            .find(|v| !v.is_finite() || **v < -STOCHASTIC_TOL || **v > 1.0 + STOCHASTIC_TOL)
        {
            return Err(Error::InvalidGate(format!("entry {v} outside [0, 1]")));
        }
        for (j, col) in matrix.column_iter().enumerate() {
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidGate(format!("column {j} sums to {sum}")));
            }
        }
        Ok(StochasticMatrix { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        StochasticMatrix {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    /// Permutation sending column `j` to row `image[j]`.
    pub fn permutation(image: &[usize]) -> Result<Self> {
        let dim = image.len();
        let mut seen = vec![false; dim];
        let mut matrix = DMatrix::zeros(dim, dim);
        for (j, &i) in image.iter().enumerate() {
            if i >= dim || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidGate(format!("{image:?} is not a permutation")));
            }
            matrix[(i, j)] = 1.0;
        }
        Ok(StochasticMatrix { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.dim(), "dimension mismatch in apply");
        (0..self.dim())
            .map(|i| {
                let mut acc = 0.0;
                for (j, pj) in p.iter().enumerate() {
                    acc += self.matrix[(i, j)] * pj;
                }
                acc
            })
            .collect()
    }

    pub fn kron(&self, other: &StochasticMatrix) -> StochasticMatrix {
        StochasticMatrix {
            matrix: self.matrix.kronecker(&other.matrix),
        }
    }

    /// Largest deviation of a column sum from one.
    pub fn column_sum_error(&self) -> f64 {
        self.matrix
            .column_iter()
            .map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of a row sum from one.
    pub fn row_sum_error(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_permutation(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0 || v == 1.0)
            && self
                .matrix
                .row_iter()
                .all(|r| r.iter().filter(|&&v| v == 1.0).count() == 1)
    }

    /// Non-zero entries of each column as `(row, weight)`.
    pub(crate) fn column_supports(&self) -> Vec<Vec<(usize, f64)>> {
        self.matrix
            .column_iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(i, &w)| (i, w))
                    .collect()
            })
            .collect()
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() < TRIG_ZERO {
        0.0
    } else {
        v
    }
}

/// Weights `(a, b)/(a + b)` of two magnitudes, evaluated through the ratio
/// `q = a/b` as `q/(1+q)` and `1/(1+q)`. Ratios within rounding of one are
/// taken as exactly one, and a vanishing magnitude gives the exact limit.
fn pair_weights(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 {
        return (0.0, 1.0);
    }
    if b == 0.0 {
        return (1.0, 0.0);
    }
    let mut q = a / b;
    if (q - 1.0).abs() < 1e-14 {
        q = 1.0;
    }
    (q / (1.0 + q), 1.0 / (1.0 + q))
}

/// Maps an angle onto `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let wrapped = angle - TAU * ((angle + PI) / TAU).floor();
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Grabit emulation of a real 2×2 matrix: every entry is moved into the
/// gradient value matching its sign, with weights proportional to its
/// magnitude. Returns the map and the common factor `c` with
/// `extract(S·e) = c·M·extract(e)`.
///
/// Fails when the columns of `m` have different 1-norms, since the emulated
/// columns would then carry different prefactors.
pub fn grabit_map_from_real(m: &nalgebra::Matrix2<f64>) -> Result<(StochasticMatrix, f64)> {
    let m = m.map(snap);
    let norms = [m[(0, 0)].abs() + m[(1, 0)].abs(), m[(0, 1)].abs() + m[(1, 1)].abs()];
    if norms[0] == 0.0 || (norms[0] - norms[1]).abs() > 1e-12 * norms[0] {
        return Err(Error::InvalidGate(format!(
            "columns of {m} have unequal 1-norms {norms:?}"
        )));
    }
    let mut s = DMatrix::zeros(4, 4);
    for j in 0..2 {
        let (w0, w1) = pair_weights(m[(0, j)].abs(), m[(1, j)].abs());
        for sigma in 0..2 {
            let col = 2 * j + sigma;
            for (i, w) in [(0, w0), (1, w1)] {
                if w == 0.0 {
                    continue;
                }
                let flip = (m[(i, j)] < 0.0) as usize;
                s[(2 * i + (sigma ^ flip), col)] += w;
            }
        }
    }
    Ok((StochasticMatrix::new(s)?, 1.0 / norms[0]))
}

/// Quadrant `1..=4` of `θ ∈ [-π, π)` as used for the `S_Q` tables:
/// `[0, π/2)`, `[π/2, π)`, `[-π, -π/2)`, `[-π/2, 0)`.
fn q_quadrant(theta: f64) -> usize {
    use std::f64::consts::FRAC_PI_2;
    if theta >= FRAC_PI_2 {
        2
    } else if theta >= 0.0 {
        1
    } else if theta >= -FRAC_PI_2 {
        4
    } else {
        3
    }
}

type Cells = [(usize, usize); 4];

/// Stochastic map of `Q(θ) = cos θ X + sin θ Z` on one grabit, with
/// `q = |cot θ|`.
pub fn s_q_theta(theta: f64) -> StochasticMatrix {
    let theta = wrap_angle(theta);
    let (one, q) = pair_weights(snap(theta.sin()).abs(), snap(theta.cos()).abs());
    // (row, col) positions of the 1- and q-entries of each quadrant table
    let (ones, qs): (Cells, Cells) = match q_quadrant(theta) {
        1 => (
            [(0, 0), (1, 1), (2, 3), (3, 2)],
            [(0, 2), (1, 3), (2, 0), (3, 1)],
        ),
        2 => (
            [(0, 0), (1, 1), (2, 3), (3, 2)],
            [(0, 3), (1, 2), (2, 1), (3, 0)],
        ),
        3 => (
            [(0, 1), (1, 0), (2, 2), (3, 3)],
            [(0, 3), (1, 2), (2, 1), (3, 0)],
        ),
        _ => (
            [(0, 1), (1, 0), (2, 2), (3, 3)],
            [(0, 2), (1, 3), (2, 0), (3, 1)],
        ),
    };
    let mut s = DMatrix::zeros(4, 4);
    for pos in ones {
        s[pos] += one;
    }
    for pos in qs {
        s[pos] += q;
    }
    StochasticMatrix { matrix: s }
}

/// Hadamard map, `Q(π/4) = H`.
pub fn s_h() -> StochasticMatrix {
    s_q_theta(std::f64::consts::FRAC_PI_4)
}

/// Rotation by `φ` on the ReIm grabit, `(Re, Im) → (cos φ Re − sin φ Im, sin φ Re + cos φ Im)`.
pub fn s_r_phi(phi: f64) -> StochasticMatrix {
    let phi = wrap_angle(phi);
    let (c, s) = (phi.cos(), phi.sin());
    let rotation = nalgebra::Matrix2::new(c, -s, s, c);
    grabit_map_from_real(&rotation)
        .expect("rotation columns share their 1-norm")
        .0
}

/// Norm factor `N = sqrt(1+q²)/(1+|q|)` with `q = |cot φ|`; the limit
/// `q → ∞` gives one.
pub fn rotation_norm_factor(phi: f64) -> f64 {
    let phi = wrap_angle(phi);
    let (s, c) = (snap(phi.sin()).abs(), snap(phi.cos()).abs());
    if s == 0.0 || c == 0.0 {
        return 1.0;
    }
    let mut q = c / s;
    if (q - 1.0).abs() < 1e-14 {
        q = 1.0;
    }
    (1.0 + q * q).sqrt() / (1.0 + q)
}

/// Symmetric 2×2 amplitude reduction `R₂` acting on a gradient bit, with
/// off-diagonal `r₀ = (1 − N)/2`.
pub fn r2_amplitude_reduction(phi: f64) -> StochasticMatrix {
    r2_from_norm(rotation_norm_factor(phi))
}

fn r2_from_norm(norm_factor: f64) -> StochasticMatrix {
    let r0 = (1.0 - norm_factor) / 2.0;
    StochasticMatrix {
        matrix: DMatrix::from_row_slice(2, 2, &[1.0 - r0, r0, r0, 1.0 - r0]),
    }
}

/// `R₂` lifted to a whole grabit: flips the gradient value with probability
/// `r₀` independently of the blv.
pub fn amplitude_reduction_gate(phi: f64) -> StochasticMatrix {
    StochasticMatrix::identity(2).kron(&r2_amplitude_reduction(phi))
}

/// 2-norm of the extracted image of each basis vector of a one-grabit map.
fn extracted_column_norms(gate: &StochasticMatrix) -> Vec<f64> {
    gate.matrix
        .column_iter()
        .map(|c| {
            let phi0 = c[0] - c[1];
            let phi1 = c[2] - c[3];
            (phi0 * phi0 + phi1 * phi1).sqrt()
        })
        .collect()
}

/// Controlled version of a one-grabit map on `(control, target)`.
///
/// On the control-blv-1 subspace the gate acts on the target. On the
/// control-blv-0 subspace an amplitude reduction on the control's gradient
/// value lowers the extracted 2-norm by the same factor the gate does, so
/// both branches keep their relative weights.
pub fn lift_controlled(gate: &StochasticMatrix) -> Result<StochasticMatrix> {
    if gate.dim() != 4 {
        return Err(Error::InvalidGate(format!(
            "controlled lift needs a one-grabit map, got dimension {}",
            gate.dim()
        )));
    }
    let norms = extracted_column_norms(gate);
    let n = norms[0];
    if norms.iter().any(|m| (m - n).abs() > 1e-12) {
        return Err(Error::InvalidGate(format!(
            "gate columns have unequal extracted norms {norms:?}"
        )));
    }
    let r2 = r2_from_norm(n);
    let mut full = DMatrix::zeros(16, 16);
    for c in 0..4 {
        for t in 0..4 {
            let col = 4 * c + t;
            if c < 2 {
                for c_out in 0..2 {
                    full[(4 * c_out + t, col)] += r2.matrix[(c_out, c)];
                }
            } else {
                for t_out in 0..4 {
                    full[(4 * c + t_out, col)] += gate.matrix[(t_out, t)];
                }
            }
        }
    }
    StochasticMatrix::new(full)
}

/// Blv flip `0 ↔ 2`, `1 ↔ 3`.
pub fn s_x() -> StochasticMatrix {
    StochasticMatrix::permutation(&[2, 3, 0, 1]).expect("valid permutation")
}

/// Blv flip of the target conditioned on control blv 1, per gradient value.
pub fn s_cnot() -> StochasticMatrix {
    lift_controlled(&s_x()).expect("X has unit extracted norms")
}

/// Replaces every complex entry by the real block `[[Re, −Im], [Im, Re]]`,
/// using the `(i, ρ)` index ordering `2i + ρ`.
pub fn realify_unitary(u: &DMatrix<Complex64>) -> Result<DMatrix<f64>> {
    if !u.is_square() {
        return Err(Error::InvalidGate("unitary must be square".into()));
    }
    let d = u.nrows();
    let defect = (u.adjoint() * u - DMatrix::<Complex64>::identity(d, d))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if defect > 1e-10 {
        return Err(Error::InvalidGate(format!(
            "matrix is not unitary (defect {defect:e})"
        )));
    }
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let z = u[(i, j)];
            out[(2 * i, 2 * j)] = z.re;
            out[(2 * i, 2 * j + 1)] = -z.im;
            out[(2 * i + 1, 2 * j)] = z.im;
            out[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    Ok(out)
}

/// Gate kinds of the circuit IR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateKind {
    X,
    H,
    /// Rotation of the ReIm grabit by the given angle.
    Phase(f64),
    Q(f64),
    Cnot,
    ControlledPhase(f64),
    ControlledQ(f64),
    /// `R₂` matched to a rotation by the given angle.
    AmplitudeReduction(f64),
    Refresh,
    Measure,
}

/// One instruction of a grabit circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSpec {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub controls: Vec<usize>,
}

impl GateSpec {
    fn single(kind: GateKind, target: usize) -> Self {
        GateSpec {
            kind,
            targets: vec![target],
            controls: vec![],
        }
    }

    fn controlled(kind: GateKind, control: usize, target: usize) -> Self {
        GateSpec {
            kind,
            targets: vec![target],
            controls: vec![control],
        }
    }

    pub fn x(target: usize) -> Self {
        Self::single(GateKind::X, target)
    }

    pub fn h(target: usize) -> Self {
        Self::single(GateKind::H, target)
    }

    pub fn phase(target: usize, phi: f64) -> Self {
        Self::single(GateKind::Phase(phi), target)
    }

    pub fn q(target: usize, theta: f64) -> Self {
        Self::single(GateKind::Q(theta), target)
    }

    pub fn amplitude_reduction(target: usize, phi: f64) -> Self {
        Self::single(GateKind::AmplitudeReduction(phi), target)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self::controlled(GateKind::Cnot, control, target)
    }

    pub fn controlled_phase(control: usize, target: usize, phi: f64) -> Self {
        Self::controlled(GateKind::ControlledPhase(phi), control, target)
    }

    pub fn controlled_q(control: usize, target: usize, theta: f64) -> Self {
        Self::controlled(GateKind::ControlledQ(theta), control, target)
    }

    pub fn refresh() -> Self {
        GateSpec {
            kind: GateKind::Refresh,
            targets: vec![],
            controls: vec![],
        }
    }

    pub fn measure(targets: Vec<usize>) -> Self {
        GateSpec {
            kind: GateKind::Measure,
            targets,
            controls: vec![],
        }
    }

    /// Checks arities and register bounds.
    pub fn validate(&self, n_grabits: usize) -> Result<()> {
        let (n_controls, n_targets) = match self.kind {
            GateKind::X
            | GateKind::H
            | GateKind::Phase(_)
            | GateKind::Q(_)
            | GateKind::AmplitudeReduction(_) => (0, Some(1)),
            GateKind::Cnot | GateKind::ControlledPhase(_) | GateKind::ControlledQ(_) => {
                (1, Some(1))
            }
            GateKind::Refresh => (0, Some(0)),
            GateKind::Measure => (0, None),
        };
        if self.controls.len() != n_controls
            || n_targets.is_some_and(|n| self.targets.len() != n)
        {
            return Err(Error::InvalidGate(format!(
                "{:?} takes {n_controls} control(s) and {n_targets:?} target(s), got {:?} / {:?}",
                self.kind, self.controls, self.targets
            )));
        }
        let mut seen = vec![false; n_grabits];
        for &g in self.controls.iter().chain(&self.targets) {
            if g >= n_grabits {
                return Err(Error::InvalidGate(format!(
                    "grabit {g} outside register of {n_grabits}"
                )));
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(Error::InvalidGate(format!(
                    "grabit {g} used twice in {:?}",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    /// Local stochastic matrix over `controls ++ targets`; `None` for refresh
    /// and measurement.
    pub fn local_matrix(&self) -> Option<StochasticMatrix> {
        let m = match self.kind {
            GateKind::X => s_x(),
            GateKind::H => s_h(),
            GateKind::Phase(phi) => s_r_phi(phi),
            GateKind::Q(theta) => s_q_theta(theta),
            GateKind::AmplitudeReduction(phi) => amplitude_reduction_gate(phi),
            GateKind::Cnot => s_cnot(),
            GateKind::ControlledPhase(phi) => {
                lift_controlled(&s_r_phi(phi)).expect("rotations have equal column norms")
            }
            GateKind::ControlledQ(theta) => {
                lift_controlled(&s_q_theta(theta)).expect("Q maps have equal column norms")
            }
            GateKind::Refresh | GateKind::Measure => return None,
        };
        Some(m)
    }

    /// Grabits the local matrix acts on, in matrix index order.
    pub fn wires(&self) -> Vec<usize> {
        self.controls.iter().chain(&self.targets).copied().collect()
    }
}

/// Applies a local stochastic matrix on the grabits `wires` of a register
/// distribution.
pub fn apply_local(
    probs: &[f64],
    n_grabits: usize,
    wires: &[usize],
    matrix: &StochasticMatrix,
) -> Vec<f64> {
    let k = wires.len();
    assert_eq!(matrix.dim(), 1 << (2 * k), "local matrix does not fit wires");
    let shifts: Vec<usize> = wires.iter().map(|&w| 2 * (n_grabits - 1 - w)).collect();
    let columns = matrix.column_supports();
    let digits_to_config = |local: usize| -> usize {
        shifts
            .iter()
            .enumerate()
            .map(|(pos, &shift)| ((local >> (2 * (k - 1 - pos))) & 3) << shift)
            .sum()
    };
    let scatter: Vec<usize> = (0..matrix.dim()).map(digits_to_config).collect();
    let mask: usize = shifts.iter().map(|&s| 3 << s).sum();

    let mut out = vec![0.0; probs.len()];
    for (config, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let local = shifts
            .iter()
            .fold(0, |acc, &shift| 4 * acc + ((config >> shift) & 3));
        let base = config & !mask;
        for &(row, w) in &columns[local] {
            out[base | scatter[row]] += w * p;
        }
    }
    out
}

/// `P' = S·P` with `S` embedded on the gate's grabits. Refreshment gates
/// apply the refreshment map; measurements leave the state unchanged.
pub fn apply_gate(state: &GrabitState, gate: &GateSpec) -> Result<GrabitState> {
    gate.validate(state.n_grabits())?;
    match gate.local_matrix() {
        Some(m) => {
            let out = apply_local(state.probs(), state.n_grabits(), &gate.wires(), &m);
            debug_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e3 * DIST_TOL);
            Ok(GrabitState::from_raw(state.n_grabits(), out))
        }
        None if gate.kind == GateKind::Refresh => crate::refresh::refresh_grabit(state),
        None => Ok(state.clone()),
    }
}
