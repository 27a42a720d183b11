//! Lattice Schrödinger emulation.
//!
//! A distribution over phased position variables `(ρ, σ, x)` is advanced by
//! the stochastic step `S = 1 + dt·(G_T + G_V)` followed by a refreshment.
//! Times are in units where the kinetic term is `−Δ` (lattice constant 1)
//! and potentials are measured in the same units.
//!
//! Configurations of `M` particles in `D` dimensions on `N` sites per axis are
//! flattened big-endian over the coordinate slots `s = D·j + i` (particle `j`,
//! axis `i`, both 0-based). Positions are 0-based, `x ∈ {0, …, N−1}`.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gates::StochasticMatrix;
use crate::refresh::{self, distribution_from_phi, Ensemble};
use crate::rng;
use crate::state::{realify, ComplexState, ConfigSpace, PpvDistribution};

/// Largest number of lattice configurations `N^(D·M)` accepted.
pub const MAX_CONFIGS: usize = 1 << 22;

/// Configurations up to this count use dense stepping.
pub const DENSE_LIMIT: usize = 1000;

/// Periodic hypercubic lattice for `M` particles in `D` dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatticeSpec {
    n_sites: usize,
    dims: usize,
    particles: usize,
    n_configs: usize,
}

impl LatticeSpec {
    pub fn new(n_sites: usize, dims: usize, particles: usize) -> Result<Self> {
        if n_sites < 3 {
            return Err(Error::InvalidLattice(format!(
                "need at least 3 sites per axis, got {n_sites}"
            )));
        }
        if dims == 0 || particles == 0 {
            return Err(Error::InvalidLattice(
                "dimension and particle number must be positive".into(),
            ));
        }
        let n_configs = u32::try_from(dims * particles)
            .ok()
            .and_then(|e| n_sites.checked_pow(e))
            .filter(|&n| n <= MAX_CONFIGS)
            .ok_or_else(|| {
                Error::InvalidLattice(format!(
                    "{n_sites}^({dims}·{particles}) configurations exceed the bound {MAX_CONFIGS}"
                ))
            })?;
        Ok(LatticeSpec {
            n_sites,
            dims,
            particles,
            n_configs,
        })
    }

    /// One particle on a ring of `n_sites`.
    pub fn ring(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, 1, 1)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// Number of coordinate slots `D·M`.
    pub fn n_coords(&self) -> usize {
        self.dims * self.particles
    }

    /// `N^(D·M)`.
    pub fn n_configs(&self) -> usize {
        self.n_configs
    }

    /// Length `4·N^(D·M)` of a ppv distribution.
    pub fn state_dim(&self) -> usize {
        4 * self.n_configs
    }

    /// Stride of coordinate slot `s` in the flattened index.
    pub fn stride(&self, slot: usize) -> usize {
        self.n_sites.pow((self.n_coords() - 1 - slot) as u32)
    }

    pub fn coords(&self, config: usize) -> Vec<usize> {
        (0..self.n_coords())
            .map(|s| (config / self.stride(s)) % self.n_sites)
            .collect()
    }

    pub fn config_index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n_sites + c)
    }

    /// Position vector of particle `j`.
    pub fn particle_position(&self, config: usize, particle: usize) -> Vec<usize> {
        let coords = self.coords(config);
        coords[self.dims * particle..self.dims * (particle + 1)].to_vec()
    }
}

/// Total potential `W` per lattice configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
}

impl PotentialField {
    pub fn new(spec: &LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_configs() {
            return Err(Error::DimensionMismatch {
                expected: spec.n_configs(),
                found: values.len(),
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidPotential(format!("W[{i}] = {v}")));
        }
        Ok(PotentialField { values })
    }

    pub fn zero(spec: &LatticeSpec) -> Self {
        PotentialField {
            values: vec![0.0; spec.n_configs()],
        }
    }

    /// `W(config)` from the coordinate vector of each configuration.
    pub fn from_fn(spec: &LatticeSpec, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let values = (0..spec.n_configs()).map(|c| f(&spec.coords(c))).collect();
        Self::new(spec, values)
    }

    /// Same one-body potential for every particle, `Σ_j V(r_j)`.
    pub fn external(spec: &LatticeSpec, v: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let d = spec.dims();
        Self::from_fn(spec, |coords| coords.chunks(d).map(&v).sum())
    }

    /// Contact interaction `u` for every pair of particles on the same site.
    pub fn contact_interaction(spec: &LatticeSpec, u: f64) -> Result<Self> {
        let d = spec.dims();
        Self::from_fn(spec, |coords| {
            let positions: Vec<&[usize]> = coords.chunks(d).collect();
            let mut total = 0.0;
            for a in 0..positions.len() {
                for b in a + 1..positions.len() {
                    if positions[a] == positions[b] {
                        total += u;
                    }
                }
            }
            total
        })
    }

    /// One-dimensional square barrier of `height` on `lo..=hi`.
    pub fn barrier(spec: &LatticeSpec, lo: usize, hi: usize, height: f64) -> Result<Self> {
        if spec.dims() != 1 || lo > hi || hi >= spec.n_sites() {
            return Err(Error::InvalidPotential(format!(
                "barrier [{lo}, {hi}] does not fit a 1D lattice of {} sites",
                spec.n_sites()
            )));
        }
        Self::external(spec, |r| if (lo..=hi).contains(&r[0]) { height } else { 0.0 })
    }

    /// Pointwise sum.
    pub fn plus(&self, other: &PotentialField) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(PotentialField {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `W₀ = max |W|`.
    pub fn w0(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn csr_from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(dim, dim);
    for &(i, j, v) in triplets {
        if v != 0.0 {
            coo.push(i, j, v);
        }
    }
    CsrMatrix::from(&coo)
}

fn csr_to_dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplet_iter() {
        out[(i, j)] += v;
    }
    out
}

/// Neighbor matrix `O₁` of coordinate axis `dim` of particle `particle`
/// (both 0-based), embedded as `1 ⊗ O₁ ⊗ 1` into the configuration space.
pub fn build_o1(spec: &LatticeSpec, dim: usize, particle: usize) -> Result<CsrMatrix<f64>> {
    if dim >= spec.dims() || particle >= spec.particles() {
        return Err(Error::InvalidLattice(format!(
            "axis {dim} of particle {particle} outside D={}, M={}",
            spec.dims(),
            spec.particles()
        )));
    }
    Ok(csr_from_triplets(spec.n_configs(), &o1_triplets(spec, spec.dims() * particle + dim)))
}

fn o1_triplets(spec: &LatticeSpec, slot: usize) -> Vec<(usize, usize, f64)> {
    let n = spec.n_sites();
    let stride = spec.stride(slot);
    let mut out = Vec::with_capacity(2 * spec.n_configs());
    for x in 0..spec.n_configs() {
        let c = (x / stride) % n;
        let base = x - c * stride;
        out.push((base + ((c + n - 1) % n) * stride, x, 1.0));
        out.push((base + ((c + 1) % n) * stride, x, 1.0));
    }
    out
}

/// `Σ_{i,j} O₁^{(i,j)}`, the neighbor sum of the full configuration space.
pub fn neighbor_sum(spec: &LatticeSpec) -> CsrMatrix<f64> {
    let triplets: Vec<_> = (0..spec.n_coords())
        .flat_map(|s| o1_triplets(spec, s))
        .collect();
    csr_from_triplets(spec.n_configs(), &triplets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Kinetic,
    Potential,
    Combined,
}

/// Column-sum-zero generator on the ppv space.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    kind: GeneratorKind,
    matrix: CsrMatrix<f64>,
}

/// Block offsets in `(ρσ)` order `00, 01, 10, 11`.
fn block_entry(sites: usize, block_row: usize, block_col: usize, i: usize, j: usize, v: f64) -> (usize, usize, f64) {
    (block_row * sites + i, block_col * sites + j, v)
}

impl Generator {
    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        csr_to_dense(&self.matrix)
    }

    pub fn plus(&self, other: &Generator) -> Generator {
        Generator {
            kind: GeneratorKind::Combined,
            matrix: &self.matrix + &other.matrix,
        }
    }

    /// Largest `|Σ_i G_ij|` over columns.
    pub fn column_sum_error(&self) -> f64 {
        let mut sums = vec![0.0; self.dim()];
        for (_, j, v) in self.matrix.triplet_iter() {
            sums[j] += v;
        }
        sums.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Largest `|Σ_j G_ij|` over rows.
    pub fn row_sum_error(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.values().iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry (zero if all vanish).
    pub fn min_off_diagonal(&self) -> f64 {
        self.matrix
            .triplet_iter()
            .filter(|(i, j, _)| i != j)
            .fold(0.0, |m, (_, _, &v)| m.min(v))
    }

    /// Largest diagonal magnitude.
    pub fn max_diagonal(&self) -> f64 {
        self.matrix
            .triplet_iter()
            .filter(|(i, j, _)| i == j)
            .fold(0.0, |m, (_, _, &v)| m.max(v.abs()))
    }

    /// Block `(ρσ)_row, (ρσ)_col` of size `N^(D·M)`.
    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let s = self.dim() / 4;
        self.to_dense().view((row * s, col * s), (s, s)).into_owned()
    }

    /// Blocks `(A, B, C, D)` if the generator has the pattern
    ///
    /// ```text
    /// A B D C
    /// B A C D
    /// C D A B
    /// D C B A
    /// ```
    pub fn abcd_blocks(&self) -> Option<[DMatrix<f64>; 4]> {
        const PATTERN: [[usize; 4]; 4] = [[0, 1, 3, 2], [1, 0, 2, 3], [2, 3, 0, 1], [3, 2, 1, 0]];
        let dense = self.to_dense();
        let s = self.dim() / 4;
        let block = |r: usize, c: usize| dense.view((r * s, c * s), (s, s)).into_owned();
        let blocks = [block(0, 0), block(0, 1), block(2, 0), block(0, 2)];
        for (r, row) in PATTERN.iter().enumerate() {
            for (c, &which) in row.iter().enumerate() {
                if block(r, c) != blocks[which] {
                    return None;
                }
            }
        }
        Some(blocks)
    }
}

/// Kinetic generator: diagonal blocks `−4DM·1`, scalar cross blocks `2DM·1`
/// and neighbor blocks `Σ O₁^{(i,j)}`.
pub fn build_gt(spec: &LatticeSpec) -> Generator {
    let s = spec.n_configs();
    let dm = spec.n_coords() as f64;
    let neighbors = neighbor_sum(spec);
    let mut t = Vec::with_capacity(4 * (3 * s + neighbors.nnz()));
    for x in 0..s {
        for b in 0..4 {
            t.push(block_entry(s, b, b, x, x, -4.0 * dm));
        }
        // scalar blocks at (00,10), (01,11), (10,01), (11,00)
        for (r, c) in [(0, 2), (1, 3), (2, 1), (3, 0)] {
            t.push(block_entry(s, r, c, x, x, 2.0 * dm));
        }
    }
    for (i, j, &v) in neighbors.triplet_iter() {
        for (r, c) in [(0, 3), (1, 2), (2, 0), (3, 1)] {
            t.push(block_entry(s, r, c, i, j, v));
        }
    }
    Generator {
        kind: GeneratorKind::Kinetic,
        matrix: csr_from_triplets(4 * s, &t),
    }
}

/// Potential generator built from the rectifier split `W = rf(W) − rf(−W)`.
pub fn build_gv(spec: &LatticeSpec, w: &PotentialField) -> Result<Generator> {
    let s = spec.n_configs();
    if w.values().len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            found: w.values().len(),
        });
    }
    let w0 = w.w0();
    let mut t = Vec::with_capacity(12 * s);
    for (x, &wx) in w.values().iter().enumerate() {
        let (plus, minus) = (wx.max(0.0), (-wx).max(0.0));
        let diag = -(w0 + wx.abs()) / 2.0;
        let pair = (w0 - wx.abs()) / 2.0;
        for b in 0..4 {
            t.push(block_entry(s, b, b, x, x, diag));
        }
        for (r, c) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            t.push(block_entry(s, r, c, x, x, pair));
        }
        for (r, c, v) in [
            (0, 2, plus),
            (0, 3, minus),
            (1, 2, minus),
            (1, 3, plus),
            (2, 0, minus),
            (2, 1, plus),
            (3, 0, plus),
            (3, 1, minus),
        ] {
            t.push(block_entry(s, r, c, x, x, v));
        }
    }
    Ok(Generator {
        kind: GeneratorKind::Potential,
        matrix: csr_from_triplets(4 * s, &t),
    })
}

/// Largest step keeping `1 + dt·G` non-negative, `1/(4DM + W₀)`.
pub fn max_time_step(spec: &LatticeSpec, w: &PotentialField) -> f64 {
    1.0 / (4.0 * spec.n_coords() as f64 + w.w0())
}

/// Storage used for the step matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Representation {
    /// Dense up to [`DENSE_LIMIT`] configurations, sparse above.
    #[default]
    Auto,
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq)]
enum StepStorage {
    /// Row-major.
    Dense(Vec<f64>),
    Sparse(CsrMatrix<f64>),
}

/// The column-stochastic step `S = 1 + dt·G`.
///
/// Both storages accumulate each row in ascending column order, so they give
/// bit-identical products.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOperator {
    dim: usize,
    storage: StepStorage,
}

const PARALLEL_ROWS: usize = 4096;

impl StepOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, StepStorage::Dense(_))
    }

    fn row_product(&self, i: usize, p: &[f64]) -> f64 {
        match &self.storage {
            StepStorage::Dense(m) => {
                let row = &m[i * self.dim..(i + 1) * self.dim];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(p) {
                    acc += a * b;
                }
                acc
            }
            StepStorage::Sparse(m) => {
                let row = m.row(i);
                let mut acc = 0.0;
                for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                    acc += v * p[j];
                }
                acc
            }
        }
    }

    /// `out = S·p`.
    pub fn apply_into(&self, p: &[f64], out: &mut [f64]) {
        assert_eq!(p.len(), self.dim);
        assert_eq!(out.len(), self.dim);
        if self.dim >= PARALLEL_ROWS {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = self.row_product(i, p));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.row_product(i, p);
            }
        }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(p, &mut out);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            StepStorage::Dense(m) => DMatrix::from_row_slice(self.dim, self.dim, m),
            StepStorage::Sparse(m) => csr_to_dense(m),
        }
    }

    /// Dense stochastic matrix; validates column sums and entry range.
    pub fn to_stochastic(&self) -> Result<StochasticMatrix> {
        StochasticMatrix::new(self.to_dense())
    }

    /// Non-zero entries of each column as `(row, weight)`.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.dim];
        match &self.storage {
            StepStorage::Dense(m) => {
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        let v = m[i * self.dim + j];
                        if v != 0.0 {
                            cols[j].push((i, v));
                        }
                    }
                }
            }
            StepStorage::Sparse(m) => {
                for (i, j, &v) in m.triplet_iter() {
                    if v != 0.0 {
                        cols[j].push((i, v));
                    }
                }
            }
        }
        cols
    }
}

/// `S = 1 + dt·(G_T + G_V)` with automatic storage.
pub fn build_step(spec: &LatticeSpec, w: &PotentialField, dt: f64) -> Result<StepOperator> {
    build_step_with(spec, w, dt, Representation::Auto)
}

pub fn build_step_with(
    spec: &LatticeSpec,
    w: &PotentialField,
    dt: f64,
    representation: Representation,
) -> Result<StepOperator> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::InvalidTimeStep(format!("dt = {dt}")));
    }
    let max_dt = max_time_step(spec, w);
    if dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { dt, max_dt });
    }
    let g = build_gt(spec).plus(&build_gv(spec, w)?);
    let dim = g.dim();
    let mut coo = CooMatrix::new(dim, dim);
    for i in 0..dim {
        coo.push(i, i, 1.0);
    }
    for (i, j, &v) in g.matrix().triplet_iter() {
        coo.push(i, j, dt * v);
    }
    // CSR conversion sums duplicates, so each diagonal is 1 + dt·G_ii
    let mut csr = CsrMatrix::from(&coo);
    for v in csr.values_mut() {
        if *v < 0.0 {
            // rounding at the admissibility limit
            *v = 0.0;
        }
    }
    let dense = match representation {
        Representation::Auto => spec.n_configs() <= DENSE_LIMIT,
        Representation::Dense => true,
        Representation::Sparse => false,
    };
    let storage = if dense {
        let mut m = vec![0.0; dim * dim];
        for (i, j, &v) in csr.triplet_iter() {
            m[i * dim + j] = v;
        }
        StepStorage::Dense(m)
    } else {
        StepStorage::Sparse(csr)
    };
    Ok(StepOperator { dim, storage })
}

/// A state recorded during propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub dist: PpvDistribution,
}

/// Step operator together with the lattice, potential and time step it was
/// built for.
#[derive(Clone, Debug)]
pub struct Emulator {
    spec: LatticeSpec,
    potential: PotentialField,
    dt: f64,
    step: StepOperator,
}

impl Emulator {
    pub fn new(spec: LatticeSpec, potential: PotentialField, dt: f64) -> Result<Self> {
        Self::with_representation(spec, potential, dt, Representation::Auto)
    }

    pub fn with_representation(
        spec: LatticeSpec,
        potential: PotentialField,
        dt: f64,
        representation: Representation,
    ) -> Result<Self> {
        let step = build_step_with(&spec, &potential, dt, representation)?;
        Ok(Emulator {
            spec,
            potential,
            dt,
            step,
        })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_operator(&self) -> &StepOperator {
        &self.step
    }

    fn check(&self, p: &PpvDistribution) -> Result<()> {
        if p.lattice() != &self.spec {
            return Err(Error::InvalidLattice(
                "distribution lives on a different lattice".into(),
            ));
        }
        Ok(())
    }

    /// `R(S·P)`.
    pub fn step(&self, p: &PpvDistribution) -> Result<PpvDistribution> {
        self.check(p)?;
        let moved = self.step.apply(p.probs());
        refresh::refresh_ppv(&PpvDistribution::from_raw(self.spec.clone(), moved))
    }

    /// Runs `n_steps` steps and hands every state, including the initial one
    /// at step 0, to `observe`.
    pub fn run(
        &self,
        p0: &PpvDistribution,
        n_steps: usize,
        mut observe: impl FnMut(usize, &PpvDistribution) -> Result<()>,
    ) -> Result<PpvDistribution> {
        self.check(p0)?;
        let space = p0.space();
        let mut current = p0.probs().to_vec();
        let mut moved = vec![0.0; current.len()];
        observe(0, p0)?;
        for n in 1..=n_steps {
            self.step.apply_into(&current, &mut moved);
            current = refresh::refresh_probs(&space, &moved).map_err(|e| match e {
                Error::DegenerateState(msg) => {
                    Error::DegenerateState(format!("step {n}: {msg}"))
                }
                other => other,
            })?;
            let dist = PpvDistribution::from_raw(self.spec.clone(), current);
            observe(n, &dist)?;
            current = dist.into_probs();
        }
        Ok(PpvDistribution::from_raw(self.spec.clone(), current))
    }

    /// States at the requested step indices (sorted, duplicates removed).
    pub fn propagate(
        &self,
        p0: &PpvDistribution,
        n_steps: usize,
        snapshot_steps: &[usize],
    ) -> Result<Vec<Snapshot>> {
        let mut wanted: Vec<usize> = snapshot_steps.iter().copied().filter(|&s| s <= n_steps).collect();
        wanted.sort_unstable();
        wanted.dedup();
        let mut out = Vec::with_capacity(wanted.len());
        self.run(p0, n_steps, |n, dist| {
            if wanted.binary_search(&n).is_ok() {
                out.push(Snapshot {
                    step: n,
                    time: n as f64 * self.dt,
                    dist: dist.clone(),
                });
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Monte Carlo propagation of a finite ensemble: every sample jumps along
    /// a column of `S`, then the ensemble is refreshed from its histogram.
    ///
    /// Experimental: the resampling noise at lattice sizes of interest needs
    /// very large ensembles to stay close to the distribution-level result.
    pub fn propagate_ensemble(&self, start: &Ensemble, n_steps: usize) -> Result<Ensemble> {
        if start.space() != &ConfigSpace::Lattice(self.spec.clone()) {
            return Err(Error::InvalidLattice(
                "ensemble lives on a different lattice".into(),
            ));
        }
        let columns: Vec<(Vec<usize>, Vec<f64>)> = self
            .step
            .columns()
            .into_iter()
            .map(|col| {
                let mut acc = 0.0;
                let rows = col.iter().map(|&(i, _)| i).collect();
                let cum = col.iter().map(|&(_, w)| {
                    acc += w;
                    acc
                }).collect();
                (rows, cum)
            })
            .collect();
        let mut ensemble = start.clone();
        for _ in 0..n_steps {
            let moved = jump_samples(&ensemble, &columns, MOVE_STREAM);
            ensemble = refresh::refresh_ensemble(&ensemble.evolved(moved))?;
        }
        Ok(ensemble)
    }
}

const MOVE_STREAM: u64 = 0x6d6f_7665;

/// Draws a successor for every sample from its column's cumulative weights.
pub(crate) fn jump_samples(
    ensemble: &Ensemble,
    columns: &[(Vec<usize>, Vec<f64>)],
    stream: u64,
) -> Vec<usize> {
    let samples = ensemble.samples();
    let keys = ensemble.next_keys(stream);
    let blocks: Vec<Vec<usize>> = (0..rng::n_blocks(samples.len()))
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(ensemble.seed(), &[keys[0], keys[1], keys[2], b as u64]);
            samples[rng::block_range(b, samples.len())]
                .iter()
                .map(|&c| {
                    let (rows, cum) = &columns[c];
                    let total = *cum.last().expect("stochastic columns are non-empty");
                    let u = r.random::<f64>() * total;
                    let k = cum.partition_point(|&x| x <= u).min(rows.len() - 1);
                    rows[k]
                })
                .collect()
        })
        .collect();
    blocks.concat()
}

/// Free function form of [`Emulator::propagate`].
pub fn propagate(
    p0: &PpvDistribution,
    w: &PotentialField,
    dt: f64,
    n_steps: usize,
    snapshot_steps: &[usize],
) -> Result<Vec<Snapshot>> {
    Emulator::new(p0.lattice().clone(), w.clone(), dt)?.propagate(p0, n_steps, snapshot_steps)
}

/// `exp(−(x−x₀)²/(4σ²))·exp(i2πkx/N)`, 2-normalized, on a one-particle ring.
pub fn gaussian_packet(spec: &LatticeSpec, x0: f64, k: f64, sigma_x: f64) -> Result<ComplexState> {
    if spec.n_coords() != 1 {
        return Err(Error::InvalidLattice(
            "wave packets are defined for one particle in one dimension".into(),
        ));
    }
    let n = spec.n_sites() as f64;
    if !(sigma_x > 0.0) || !sigma_x.is_finite() || !(0.0..n).contains(&x0) || !k.is_finite() {
        return Err(Error::InvalidState(format!(
            "packet parameters x0={x0}, k={k}, sigma_x={sigma_x} do not fit {n} sites"
        )));
    }
    let amplitudes: Vec<Complex64> = (0..spec.n_sites())
        .map(|x| {
            let x = x as f64;
            let envelope = (-(x - x0).powi(2) / (4.0 * sigma_x * sigma_x)).exp();
            Complex64::from_polar(envelope, 2.0 * std::f64::consts::PI * k * x / n)
        })
        .collect();
    ComplexState::new(amplitudes).normalized()
}

/// Interference-free distribution extracting to `Re, Im` of `psi` divided by
/// its 1-norm.
pub fn distribution_from_state(spec: &LatticeSpec, psi: &ComplexState) -> Result<PpvDistribution> {
    if psi.len() != spec.n_configs() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_configs(),
            found: psi.len(),
        });
    }
    let space = ConfigSpace::Lattice(spec.clone());
    let probs = distribution_from_phi(&space, realify(psi).values())?;
    Ok(PpvDistribution::from_raw(spec.clone(), probs))
}

pub fn init_gaussian_packet(spec: &LatticeSpec, x0: f64, k: f64, sigma_x: f64) -> Result<PpvDistribution> {
    distribution_from_state(spec, &gaussian_packet(spec, x0, k, sigma_x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{ppv_index, Norm};
    use proptest::prelude::*;

    fn dense_o1(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if (i + 1) % n == j || (j + 1) % n == i {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn lattice_validation() {
        assert!(LatticeSpec::new(2, 1, 1).is_err());
        assert!(LatticeSpec::new(3, 0, 1).is_err());
        assert!(LatticeSpec::new(1000, 3, 1).is_err());
        let spec = LatticeSpec::new(4, 2, 2).unwrap();
        assert_eq!(spec.n_configs(), 256);
        assert_eq!(spec.state_dim(), 1024);
        let c = spec.config_index(&[1, 2, 3, 0]);
        assert_eq!(c, 64 + 32 + 12);
        assert_eq!(spec.coords(c), vec![1, 2, 3, 0]);
        assert_eq!(spec.particle_position(c, 1), vec![3, 0]);
    }

    #[test]
    fn o1_examples() {
        let spec = LatticeSpec::ring(3).unwrap();
        let o = csr_to_dense(&build_o1(&spec, 0, 0).unwrap());
        assert_eq!(o, DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 }));

        let spec = LatticeSpec::ring(5).unwrap();
        let o = csr_to_dense(&build_o1(&spec, 0, 0).unwrap());
        // first row couples to the second and the last site
        assert_eq!(o.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(o, o.transpose());
        for r in o.row_iter() {
            assert_eq!(r.sum(), 2.0);
        }

        let spec = LatticeSpec::new(3, 1, 2).unwrap();
        let second = csr_to_dense(&build_o1(&spec, 0, 1).unwrap());
        assert_eq!(second, DMatrix::<f64>::identity(3, 3).kronecker(&dense_o1(3)));
        let first = csr_to_dense(&build_o1(&spec, 0, 0).unwrap());
        assert_eq!(first, dense_o1(3).kronecker(&DMatrix::<f64>::identity(3, 3)));
        assert!(build_o1(&spec, 1, 0).is_err());
    }

    fn assemble(blocks: [[DMatrix<f64>; 4]; 4]) -> DMatrix<f64> {
        let s = blocks[0][0].nrows();
        let mut out = DMatrix::zeros(4 * s, 4 * s);
        for (r, row) in blocks.iter().enumerate() {
            for (c, b) in row.iter().enumerate() {
                out.view_mut((r * s, c * s), (s, s)).copy_from(b);
            }
        }
        out
    }

    #[test]
    fn kinetic_generator_single_ring() {
        let spec = LatticeSpec::ring(5).unwrap();
        let id = DMatrix::<f64>::identity(5, 5);
        let z = DMatrix::<f64>::zeros(5, 5);
        let o = dense_o1(5);
        let expected = assemble([
            [-4.0 * &id, z.clone(), 2.0 * &id, o.clone()],
            [z.clone(), -4.0 * &id, o.clone(), 2.0 * &id],
            [o.clone(), 2.0 * &id, -4.0 * &id, z.clone()],
            [2.0 * &id, o.clone(), z.clone(), -4.0 * &id],
        ]);
        assert_eq!(build_gt(&spec).to_dense(), expected);
    }

    #[test]
    fn kinetic_generator_two_dimensions() {
        let spec = LatticeSpec::new(3, 2, 1).unwrap();
        let g = build_gt(&spec);
        let id3 = DMatrix::<f64>::identity(3, 3);
        let neighbors = dense_o1(3).kronecker(&id3) + id3.kronecker(&dense_o1(3));
        assert_eq!(g.block(0, 0), -8.0 * DMatrix::<f64>::identity(9, 9));
        assert_eq!(g.block(0, 2), 4.0 * DMatrix::<f64>::identity(9, 9));
        assert_eq!(g.block(0, 3), neighbors);
        assert_eq!(g.column_sum_error(), 0.0);
        assert!(g.abcd_blocks().is_some());
    }

    #[test]
    fn potential_generator_examples() {
        let spec = LatticeSpec::ring(4).unwrap();
        let zero = build_gv(&spec, &PotentialField::zero(&spec)).unwrap();
        assert_eq!(zero.matrix().nnz(), 0);

        let c = 0.8;
        let w = PotentialField::new(&spec, vec![c; 4]).unwrap();
        let g = build_gv(&spec, &w).unwrap();
        let dense = g.to_dense();
        // column (ρσ)=00 at x=1: −c on the diagonal, c into (11) and nothing else
        let col: Vec<f64> = (0..16).map(|i| dense[(i, 1)]).filter(|v| *v != 0.0).collect();
        assert_eq!(col, vec![-c, c]);
        assert_eq!(dense[(12 + 1, 1)], c);
        assert_eq!(g.column_sum_error(), 0.0);
        assert!(g.min_off_diagonal() >= 0.0);
        assert!(g.abcd_blocks().is_some());

        let bad = PotentialField::new(&spec, vec![0.0, f64::NAN, 0.0, 0.0]);
        assert!(matches!(bad, Err(Error::InvalidPotential(_))));
    }

    #[test]
    fn tunneling_barrier_height() {
        let spec = LatticeSpec::ring(120).unwrap();
        let w = PotentialField::barrier(&spec, 59, 61, 1.0).unwrap();
        assert_eq!(w.w0(), 1.0);
        assert_eq!(w.values().iter().filter(|&&v| v == 1.0).count(), 3);
        assert_eq!(w.values()[58], 0.0);
        assert_eq!(w.values()[59], 1.0);
    }

    #[test]
    fn step_examples() {
        let spec = LatticeSpec::ring(5).unwrap();
        let w = PotentialField::zero(&spec);
        let id = build_step(&spec, &w, 0.0).unwrap();
        assert_eq!(id.to_dense(), DMatrix::identity(20, 20));
        let s = build_step(&spec, &w, 1.0 / 500.0).unwrap();
        assert!(s.to_stochastic().unwrap().column_sum_error() < 1e-12);
        match build_step(&spec, &w, 0.3) {
            Err(Error::StepTooLarge { max_dt, .. }) => assert_eq!(max_dt, 0.25),
            other => panic!("expected StepTooLarge, got {other:?}"),
        }
        assert!(build_step(&spec, &w, 0.25).is_ok());
        assert!(matches!(build_step(&spec, &w, -1.0), Err(Error::InvalidTimeStep(_))));
    }

    #[test]
    fn kinetic_step_is_bistochastic() {
        let spec = LatticeSpec::new(4, 2, 1).unwrap();
        let s = build_step(&spec, &PotentialField::zero(&spec), 0.01).unwrap();
        let m = s.to_stochastic().unwrap();
        assert!(m.row_sum_error() < 1e-12);
        assert!(m.column_sum_error() < 1e-12);
    }

    #[test]
    fn dense_and_sparse_steps_agree_bitwise() {
        let spec = LatticeSpec::new(5, 1, 2).unwrap();
        let w = PotentialField::contact_interaction(&spec, 0.7)
            .unwrap()
            .plus(&PotentialField::external(&spec, |r| 0.1 * r[0] as f64 - 0.2).unwrap())
            .unwrap();
        let dense = Emulator::with_representation(spec.clone(), w.clone(), 0.01, Representation::Dense).unwrap();
        let sparse = Emulator::with_representation(spec.clone(), w, 0.01, Representation::Sparse).unwrap();
        assert!(dense.step_operator().is_dense());
        assert!(!sparse.step_operator().is_dense());
        let p0 = PpvDistribution::localized(spec, 0, 0, 7).unwrap();
        let a = dense.propagate(&p0, 50, &[50]).unwrap();
        let b = sparse.propagate(&p0, 50, &[50]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_packet_examples() {
        let spec = LatticeSpec::ring(20).unwrap();
        let p = init_gaussian_packet(&spec, 6.0, 0.0, 0.05).unwrap();
        assert!(p.probs()[ppv_index(&spec, 0, 0, 6)] > 1.0 - 1e-12);

        let spec = LatticeSpec::ring(120).unwrap();
        let psi = gaussian_packet(&spec, 40.0, 10.0, 4.0).unwrap();
        assert!((psi.norm2() - 1.0).abs() < 1e-12);
        let p = init_gaussian_packet(&spec, 40.0, 10.0, 4.0).unwrap();
        let phi = p.extract_phi();
        let re_im = realify(&psi);
        let l1 = re_im.norm(Norm::One);
        for (a, b) in phi.values().iter().zip(re_im.values()) {
            assert!((a - b / l1).abs() < 1e-15);
        }
        assert!(gaussian_packet(&spec, 40.0, 10.0, 0.0).is_err());
        assert!(gaussian_packet(&LatticeSpec::new(5, 1, 2).unwrap(), 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn ensemble_propagation_runs_and_is_reproducible() {
        let spec = LatticeSpec::ring(5).unwrap();
        let emu = Emulator::new(spec.clone(), PotentialField::zero(&spec), 0.01).unwrap();
        let p0 = PpvDistribution::localized(spec.clone(), 0, 0, 2).unwrap();
        let e0 = Ensemble::draw(p0.space(), p0.probs(), 20_000, 4, 0).unwrap();
        let a = emu.propagate_ensemble(&e0, 5).unwrap();
        let b = emu.propagate_ensemble(&e0, 5).unwrap();
        assert_eq!(a, b);
        let exact = emu.propagate(&p0, 5, &[5]).unwrap().pop().unwrap().dist;
        let hist = a.histogram();
        let diff: f64 = hist.iter().zip(exact.probs()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff < 0.05, "ensemble deviates by {diff}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generators_have_zero_column_sums(n in 3usize..6, d in 1usize..3, m in 1usize..3, seed in 0u64..1000) {
            let spec = LatticeSpec::new(n, d, m).unwrap();
            let values: Vec<f64> = (0..spec.n_configs())
                .map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 250.0 - 2.0)
                .collect();
            let w = PotentialField::new(&spec, values).unwrap();
            let gt = build_gt(&spec);
            let gv = build_gv(&spec, &w).unwrap();
            for g in [&gt, &gv, &gt.plus(&gv)] {
                prop_assert!(g.column_sum_error() < 1e-12);
                prop_assert!(g.min_off_diagonal() >= 0.0);
                prop_assert!(g.abcd_blocks().is_some());
            }
            let dt = max_time_step(&spec, &w);
            let s = build_step(&spec, &w, dt).unwrap().to_stochastic().unwrap();
            prop_assert!(s.column_sum_error() < 1e-12);
        }
    }
}
