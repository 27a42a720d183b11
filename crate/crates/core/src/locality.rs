//! Can a refreshment, seen as a stochastic map on a bipartite register, be
//! written as a tensor product `S^A ⊗ S^B` of local stochastic maps?
//!
//! Distributions over the pair `(i, j)` are flattened row-major,
//! `I = i·d_B + j`, so `(S^A ⊗ S^B) P'` is the matrix product
//! `S^A · P' · S^Bᵀ` when `P'` is viewed as a `d_A × d_B` matrix.
//!
//! A single input/output pair is reduced by zero-pattern analysis
//! ([`reduce_problem`]); whole maps are compared on every basis input
//! ([`FactorizationProblem::from_map`]). Both are minimized by
//! [`minimize_q`], a multi-start accelerated projected gradient on the
//! product of column simplices.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

/// Zero-pattern reduction of a single input/output pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    /// `N′`: flat indices with `P′ = 0`.
    pub zero_in: Vec<bool>,
    /// `N″`: flat indices with `P″ = 0`.
    pub zero_out: Vec<bool>,
    /// Last (row-major) output index not in `N″`; its row of `S` is fixed
    /// by normalization.
    pub j_max: Option<usize>,
}

/// Factorization test for one or more input/output pairs sharing `S^A`,
/// `S^B`.
#[derive(Clone, Debug)]
pub struct FactorizationProblem {
    d_a: usize,
    d_b: usize,
    inputs: Vec<DMatrix<f64>>,
    outputs: Vec<DMatrix<f64>>,
    /// Output entries that enter `Q` directly.
    weights: Vec<DMatrix<f64>>,
    reduction: Option<Reduction>,
    /// Allowed support of `S^A` / `S^B`; every column non-empty.
    mask_a: DMatrix<bool>,
    mask_b: DMatrix<bool>,
    free_a: usize,
    free_b: usize,
}

fn as_matrix(p: &[f64], d_a: usize, d_b: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d_a, d_b, p)
}

fn free_count(mask: &DMatrix<bool>, collected: &DMatrix<bool>) -> usize {
    (0..mask.ncols())
        .map(|k| collected.column(k).iter().filter(|&&c| c).count().saturating_sub(1))
        .sum()
}

/// Keeps collected entries; columns with nothing collected get the identity
/// entry so every column stays stochastic.
fn complete_mask(collected: &DMatrix<bool>) -> DMatrix<bool> {
    let mut mask = collected.clone();
    for k in 0..mask.ncols() {
        if !mask.column(k).iter().any(|&c| c) {
            mask[(k, k)] = true;
        }
    }
    mask
}

fn check_pair(p_in: &[f64], p_out: &[f64], d_a: usize, d_b: usize) -> Result<()> {
    if d_a == 0 || d_b == 0 {
        return Err(Error::InvalidState("factor dimensions must be positive".into()));
    }
    for p in [p_in, p_out] {
        if p.len() != d_a * d_b {
            return Err(Error::DimensionMismatch {
                expected: d_a * d_b,
                found: p.len(),
            });
        }
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidState("probabilities must be finite and non-negative".into()));
        }
    }
    Ok(())
}

/// Reduces `P″ = (S^A ⊗ S^B) P′` using the zeros of both distributions.
///
/// Rows of `S` in `N″` vanish, columns in `N′` do not contribute, and the
/// row `J_max` is replaced by one minus the rest of its column, so it drops
/// out of `Q` except through normalization. A local entry `a_ik` survives iff
/// row `i` of `S^A` appears in some row `(i,j) ∉ N″ ∪ {J_max}`, and likewise
/// `b_jl`; columns are not pruned by `N′`, their entries merely stop
/// mattering. One surviving entry per column is fixed by the column sum, so
/// each column contributes `survivors − 1` free variables.
pub fn reduce_problem(p_in: &[f64], p_out: &[f64], d_a: usize, d_b: usize) -> Result<FactorizationProblem> {
    check_pair(p_in, p_out, d_a, d_b)?;
    let zero_in: Vec<bool> = p_in.iter().map(|&v| v == 0.0).collect();
    let zero_out: Vec<bool> = p_out.iter().map(|&v| v == 0.0).collect();
    let j_max = zero_out.iter().rposition(|&z| !z);

    let live_row = |i: usize, j: usize| {
        let idx = i * d_b + j;
        !zero_out[idx] && Some(idx) != j_max
    };
    let mut col_a = DMatrix::from_element(d_a, d_a, false);
    let mut col_b = DMatrix::from_element(d_b, d_b, false);
    for i in 0..d_a {
        for j in 0..d_b {
            if live_row(i, j) {
                col_a.row_mut(i).fill(true);
                col_b.row_mut(j).fill(true);
            }
        }
    }

    let weights = DMatrix::from_fn(d_a, d_b, |i, j| if live_row(i, j) { 1.0 } else { 0.0 });
    let free_a = free_count(&col_a, &col_a);
    let free_b = free_count(&col_b, &col_b);
    Ok(FactorizationProblem {
        d_a,
        d_b,
        inputs: vec![as_matrix(p_in, d_a, d_b)],
        outputs: vec![as_matrix(p_out, d_a, d_b)],
        weights: vec![weights],
        reduction: Some(Reduction {
            zero_in,
            zero_out,
            j_max,
        }),
        mask_a: complete_mask(&col_a),
        mask_b: complete_mask(&col_b),
        free_a,
        free_b,
    })
}

impl FactorizationProblem {
    /// Unreduced problem on several pairs: `Q = Σ_r ‖P″_r − (S^A⊗S^B)P′_r‖²`.
    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)], d_a: usize, d_b: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidState("no input/output pairs".into()));
        }
        for (p_in, p_out) in pairs {
            check_pair(p_in, p_out, d_a, d_b)?;
        }
        let full_a = DMatrix::from_element(d_a, d_a, true);
        let full_b = DMatrix::from_element(d_b, d_b, true);
        Ok(FactorizationProblem {
            d_a,
            d_b,
            inputs: pairs.iter().map(|(p, _)| as_matrix(p, d_a, d_b)).collect(),
            outputs: pairs.iter().map(|(_, p)| as_matrix(p, d_a, d_b)).collect(),
            weights: vec![DMatrix::from_element(d_a, d_b, 1.0); pairs.len()],
            reduction: None,
            free_a: free_count(&full_a, &full_a),
            free_b: free_count(&full_b, &full_b),
            mask_a: full_a,
            mask_b: full_b,
        })
    }

    /// Map-level problem: every basis input, so `Q = ‖S − S^A⊗S^B‖²_F`.
    pub fn from_map(s: &DMatrix<f64>, d_a: usize, d_b: usize) -> Result<Self> {
        let d = d_a * d_b;
        if s.nrows() != d || s.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: s.nrows().max(s.ncols()),
            });
        }
        let pairs: Vec<_> = (0..d)
            .map(|c| {
                let mut e = vec![0.0; d];
                e[c] = 1.0;
                (e, s.column(c).iter().copied().collect())
            })
            .collect();
        Self::from_pairs(&pairs, d_a, d_b)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_a, self.d_b)
    }

    pub fn n_pairs(&self) -> usize {
        self.inputs.len()
    }

    pub fn reduction(&self) -> Option<&Reduction> {
        self.reduction.as_ref()
    }

    pub fn mask_a(&self) -> &DMatrix<bool> {
        &self.mask_a
    }

    pub fn mask_b(&self) -> &DMatrix<bool> {
        &self.mask_b
    }

    /// Independent variables `(from S^A, from S^B)`.
    pub fn free_vars(&self) -> (usize, usize) {
        (self.free_a, self.free_b)
    }

    pub fn n_free(&self) -> usize {
        self.free_a + self.free_b
    }

    fn coupled(&self) -> bool {
        self.reduction.as_ref().is_some_and(|r| r.j_max.is_some())
    }

    /// Weighted residuals `W ∘ (P″ − S^A P′ S^Bᵀ)` per pair.
    fn residuals(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let bt = b.transpose();
        self.inputs
            .iter()
            .zip(&self.outputs)
            .zip(&self.weights)
            .map(|((m, p), w)| (p - a * m * &bt).component_mul(w))
            .collect()
    }

    /// `Q(S^A, S^B)`. For reduced problems the `J_max` row enters through
    /// normalization as `(Σ residuals)²`.
    pub fn objective(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let res = self.residuals(a, b);
        let mut q: f64 = res.iter().map(|r| r.norm_squared()).sum();
        if self.coupled() {
            q += res[0].sum().powi(2);
        }
        q
    }

    fn value_and_gradient(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
        let res = self.residuals(a, b);
        let mut q: f64 = res.iter().map(|r| r.norm_squared()).sum();
        let shift = if self.coupled() {
            let s = res[0].sum();
            q += s * s;
            s
        } else {
            0.0
        };
        let mut ga = DMatrix::zeros(self.d_a, self.d_a);
        let mut gb = DMatrix::zeros(self.d_b, self.d_b);
        for ((r, m), w) in res.iter().zip(&self.inputs).zip(&self.weights) {
            // dQ/dX for X = A M Bᵀ.
            let gx = (r + w * shift) * -2.0;
            let gx = gx.component_mul(w);
            ga += &gx * b * m.transpose();
            gb += gx.transpose() * a * m;
        }
        (q, ga, gb)
    }

    /// Largest column-sum or sign violation of a candidate pair.
    pub fn constraint_violation(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        [a, b]
            .iter()
            .flat_map(|m| {
                let sums = m.column_iter().map(|c| (c.sum() - 1.0).abs());
                let negs = m.iter().map(|&v| (-v).max(0.0));
                sums.chain(negs).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|x, y| y.total_cmp(x));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn project_columns(m: &mut DMatrix<f64>, mask: &DMatrix<bool>) {
    for k in 0..m.ncols() {
        let rows: Vec<usize> = (0..m.nrows()).filter(|&i| mask[(i, k)]).collect();
        let proj = project_simplex(&rows.iter().map(|&i| m[(i, k)]).collect::<Vec<_>>());
        for i in 0..m.nrows() {
            m[(i, k)] = 0.0;
        }
        for (&i, v) in rows.iter().zip(proj) {
            m[(i, k)] = v;
        }
    }
}

/// Random column-stochastic matrix on `mask` (flat Dirichlet columns).
fn random_stochastic(mask: &DMatrix<bool>, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(mask.nrows(), mask.ncols());
    for k in 0..m.ncols() {
        let mut total = 0.0;
        for i in 0..m.nrows() {
            if mask[(i, k)] {
                let e: f64 = Exp1.sample(rng);
                m[(i, k)] = e;
                total += e;
            }
        }
        for i in 0..m.nrows() {
            m[(i, k)] /= total;
        }
    }
    m
}

/// Iteration limits for one local descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Stop once an iteration improves `Q` by less than this (absolute).
    pub tol: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            max_iter: 5_000,
            tol: 1e-13,
        }
    }
}

/// Best point found by [`minimize_q`].
#[derive(Clone, Debug)]
pub struct Minimum {
    pub q: f64,
    pub s_a: DMatrix<f64>,
    pub s_b: DMatrix<f64>,
    /// Restart that produced the minimum.
    pub restart: usize,
    /// Final `Q` of every restart, in order.
    pub restart_values: Vec<f64>,
}

/// Accelerated projected gradient with backtracking and adaptive restart.
fn descend(
    problem: &FactorizationProblem,
    mut a: DMatrix<f64>,
    mut b: DMatrix<f64>,
    opts: DescentOptions,
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let mut q = problem.objective(&a, &b);
    let (mut ya, mut yb) = (a.clone(), b.clone());
    let mut t = 1.0_f64;
    let mut lip = 1.0_f64;
    let mut stalled = 0;
    for _ in 0..opts.max_iter {
        let (qy, ga, gb) = problem.value_and_gradient(&ya, &yb);
        let (za, zb, qz) = loop {
            let mut za = &ya - &ga / lip;
            let mut zb = &yb - &gb / lip;
            project_columns(&mut za, &problem.mask_a);
            project_columns(&mut zb, &problem.mask_b);
            let (da, db) = (&za - &ya, &zb - &yb);
            let qz = problem.objective(&za, &zb);
            let model = qy + ga.dot(&da) + gb.dot(&db) + 0.5 * lip * (da.norm_squared() + db.norm_squared());
            if qz <= model + 1e-15 * qy.abs() || lip > 1e12 {
                break (za, zb, qz);
            }
            lip *= 2.0;
        };
        if qz > q {
            // Momentum overshot: restart from the last accepted point.
            ya.copy_from(&a);
            yb.copy_from(&b);
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        ya = &za + (&za - &a) * beta;
        yb = &zb + (&zb - &b) * beta;
        let gain = q - qz;
        a = za;
        b = zb;
        q = qz;
        t = t_next;
        lip *= 0.9;
        if gain < opts.tol {
            stalled += 1;
            if stalled >= 20 {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    (q, a, b)
}

/// Multi-start minimization of `Q` over stochastic `S^A`, `S^B` restricted
/// to the problem's support. Restart `r` starts from random matrices drawn
/// from substream `(seed, r)`; the best result wins, ties going to the
/// lower restart index, so the outcome does not depend on thread count.
pub fn minimize_q(problem: &FactorizationProblem, restarts: usize, seed: u64) -> Minimum {
    minimize_q_with(problem, restarts, seed, DescentOptions::default())
}

pub fn minimize_q_with(
    problem: &FactorizationProblem,
    restarts: usize,
    seed: u64,
    opts: DescentOptions,
) -> Minimum {
    let restarts = restarts.max(1);
    let runs: Vec<(f64, DMatrix<f64>, DMatrix<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, &[r as u64]);
            let a = random_stochastic(&problem.mask_a, &mut rng);
            let b = random_stochastic(&problem.mask_b, &mut rng);
            descend(problem, a, b, opts)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, x), (j, y)| x.0.total_cmp(&y.0).then(i.cmp(j)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let restart_values = runs.iter().map(|r| r.0).collect();
    let (q, s_a, s_b) = runs.into_iter().nth(best).expect("index in range");
    Minimum {
        q,
        s_a,
        s_b,
        restart: best,
        restart_values,
    }
}

/// Probabilistic swap on two bits: exchanges `01 ↔ 10` with probability `p`.
pub fn swap_map(p: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0 - p, p, 0.0, //
            0.0, p, 1.0 - p, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// Outcome of the product-ansatz argument for the probabilistic swap.
#[derive(Clone, Debug)]
pub struct SwapLemmaReport {
    pub p: f64,
    /// Derivation steps, one line each.
    pub steps: Vec<String>,
    /// `S_{01,10}` required by the swap.
    pub required: f64,
    /// `S_{01,10} = a₁(1 − b₀)` forced by the other constraints.
    pub forced: f64,
    pub contradiction: bool,
    /// Numerical `min ‖S_swap − S^A⊗S^B‖²` over product maps.
    pub q_min: f64,
    pub restarts: usize,
}

/// Checks the product ansatz `S_swap = S^A ⊗ S^B` with
/// `S^A = [[a₀, a₁], [1−a₀, 1−a₁]]`, `S^B = [[b₀, b₁], [1−b₀, 1−b₁]]`.
///
/// The first row gives `a₀b₀ = 1`, `a₀b₁ = 0`, `a₁b₀ = 0`, `a₁b₁ = 0`.
/// With all entries in `[0, 1]` the first forces `a₀ = b₀ = 1`, the third
/// then `a₁ = 0`, and the `01–10` element `a₁(1 − b₀)` must vanish while the
/// swap requires `p`. The certificate is backed by [`minimize_q`] on the
/// whole map.
pub fn verify_swap_lemma(p: f64, restarts: usize, seed: u64) -> Result<SwapLemmaReport> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidGate(format!("swap probability {p} outside [0, 1]")));
    }
    let s = swap_map(p);
    let mut steps = Vec::new();
    let row0 = [s[(0, 0)], s[(0, 1)], s[(0, 2)], s[(0, 3)]];
    steps.push(format!(
        "row 00: a0*b0 = {}, a0*b1 = {}, a1*b0 = {}, a1*b1 = {}",
        row0[0], row0[1], row0[2], row0[3]
    ));
    // a0*b0 = 1 with both in [0,1] pins both to 1.
    let (a0, b0) = if row0[0] == 1.0 { (1.0, 1.0) } else { (f64::NAN, f64::NAN) };
    steps.push(format!("a0*b0 = 1 with a0, b0 in [0,1] => a0 = {a0}, b0 = {b0}"));
    let a1 = if b0 == 1.0 && row0[2] == 0.0 { 0.0 } else { f64::NAN };
    steps.push(format!("a1*b0 = 0 with b0 = 1 => a1 = {a1}"));
    let forced = a1 * (1.0 - b0);
    let required = s[(1, 2)];
    steps.push(format!("S[01,10] = a1*(1-b0) = {forced}, required {required}"));
    let contradiction = forced.is_finite() && forced != required;
    steps.push(if contradiction {
        "contradiction: no product map reproduces the swap".into()
    } else {
        "no contradiction: constraints are consistent".into()
    });

    let problem = FactorizationProblem::from_map(&s, 2, 2)?;
    let min = minimize_q(&problem, restarts, seed);
    Ok(SwapLemmaReport {
        p,
        steps,
        required,
        forced,
        contradiction,
        q_min: min.q,
        restarts,
    })
}

/// Zeroes entries below `tol` (cancellation residue) and renormalizes.
pub fn snap_zeros(p: &[f64], tol: f64) -> Vec<f64> {
    let kept: Vec<f64> = p.iter().map(|&v| if v.abs() < tol { 0.0 } else { v }).collect();
    let total: f64 = kept.iter().sum();
    kept.iter().map(|v| v / total).collect()
}

/// Residue threshold for distributions produced by gate arithmetic.
pub const ZERO_SNAP: f64 = 1e-12;

/// The last refreshment of the CHSH circuit as a factorization problem:
/// `P′` and `P″` are the distributions right before and after it, with
/// Alice holding grabits 0, 1 and Bob grabits 2, 3 (16 configurations each).
pub fn chsh_refresh_problem(theta1: f64, theta2: f64) -> Result<FactorizationProblem> {
    let (before, after) = crate::circuits::chsh(theta1, theta2).around_last_refresh()?;
    reduce_problem(
        &snap_zeros(before.probs(), ZERO_SNAP),
        &snap_zeros(after.probs(), ZERO_SNAP),
        16,
        16,
    )
}
