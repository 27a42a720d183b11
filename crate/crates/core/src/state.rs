//! Configuration indexing, probability vectors and the extraction maps from
//! distributions to realified amplitudes.
//!
//! Two configuration spaces exist:
//!
//! * circuit mode: a register of `n` grabits, each carrying a b4v
//!   `I = 2·blv + σ`. Registers are big-endian: grabit 0 is the most
//!   significant digit of the base-4 configuration index.
//! * dynamics mode: phased position variables `(ρ, σ, x)` on a lattice with
//!   `S = N^(D·M)` sites, packed as `(2ρ + σ)·S + x` (ρ most significant).
//!
//! In both spaces the extracted amplitude of a slot is the signed sum of the
//! masses that share the slot, the sign being `(-1)^σ` (circuit mode: the
//! parity of all gradient values in the string).

use num_complex::Complex64;

use crate::dynamics::LatticeSpec;
use crate::error::{Error, Result};

/// Tolerance for equalities between distributions.
pub const DIST_TOL: f64 = 1e-12;

/// Byte-four value of one grabit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct B4v {
    /// Byte-logical value, the computational-basis bit.
    pub blv: u8,
    /// Gradient value, selects the sign of the mass.
    pub grad: u8,
}

impl B4v {
    pub fn new(blv: u8, grad: u8) -> Self {
        assert!(blv < 2 && grad < 2, "b4v components are bits");
        B4v { blv, grad }
    }

    pub fn pack(self) -> usize {
        2 * self.blv as usize + self.grad as usize
    }

    pub fn unpack(index: usize) -> Self {
        assert!(index < 4, "b4v index out of range: {index}");
        B4v {
            blv: (index >> 1) as u8,
            grad: (index & 1) as u8,
        }
    }
}

/// Packs a b4v string into a register configuration index.
pub fn pack_b4v_string(b4vs: &[B4v]) -> usize {
    b4vs.iter().fold(0, |acc, b| 4 * acc + b.pack())
}

pub fn unpack_b4v_string(config: usize, n_grabits: usize) -> Vec<B4v> {
    (0..n_grabits)
        .map(|nu| B4v::unpack(local_b4v(config, n_grabits, nu)))
        .collect()
}

/// The b4v of grabit `nu` inside a register configuration.
#[inline]
pub fn local_b4v(config: usize, n_grabits: usize, nu: usize) -> usize {
    (config >> (2 * (n_grabits - 1 - nu))) & 3
}

/// Blv string of a configuration, as a big-endian index over `2^n`.
#[inline]
pub fn blv_index(config: usize, n_grabits: usize) -> usize {
    let mut i = 0;
    for nu in 0..n_grabits {
        i = 2 * i + (local_b4v(config, n_grabits, nu) >> 1);
    }
    i
}

/// Parity of all gradient values of a configuration.
#[inline]
pub fn sigma_parity(config: usize) -> bool {
    (config & 0x5555_5555_5555_5555).count_ones() % 2 == 1
}

/// Configuration with the given blv string and all gradient values zero.
#[inline]
pub fn config_from_blv(blv: usize, n_grabits: usize) -> usize {
    let mut config = 0;
    for nu in 0..n_grabits {
        let bit = (blv >> (n_grabits - 1 - nu)) & 1;
        config = 4 * config + 2 * bit;
    }
    config
}

/// The space of configurations a distribution lives on.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigSpace {
    Grabits(usize),
    Lattice(LatticeSpec),
}

impl ConfigSpace {
    /// Number of configurations.
    pub fn dim(&self) -> usize {
        match self {
            ConfigSpace::Grabits(n) => 1 << (2 * n),
            ConfigSpace::Lattice(spec) => 4 * spec.n_configs(),
        }
    }

    /// Length of the extracted realified vector.
    pub fn phi_len(&self) -> usize {
        match self {
            ConfigSpace::Grabits(n) => 1 << n,
            ConfigSpace::Lattice(spec) => 2 * spec.n_configs(),
        }
    }

    /// Amplitude slot of a configuration and whether it counts negatively.
    #[inline]
    pub fn signed_slot(&self, config: usize) -> (usize, bool) {
        match self {
            ConfigSpace::Grabits(n) => (blv_index(config, *n), sigma_parity(config)),
            ConfigSpace::Lattice(spec) => {
                let sites = spec.n_configs();
                let rho = config / (2 * sites);
                let sigma = (config / sites) % 2;
                let x = config % sites;
                (rho * sites + x, sigma == 1)
            }
        }
    }

    /// Canonical configuration carrying a slot with the given sign.
    ///
    /// In circuit mode a negative sign is carried by the gradient value of the
    /// last grabit of the register.
    #[inline]
    pub fn config_for(&self, slot: usize, negative: bool) -> usize {
        match self {
            ConfigSpace::Grabits(n) => config_from_blv(slot, *n) | negative as usize,
            ConfigSpace::Lattice(spec) => {
                let sites = spec.n_configs();
                let rho = slot / sites;
                let x = slot % sites;
                (2 * rho + negative as usize) * sites + x
            }
        }
    }

    /// Signed σ-sum of a (not necessarily normalized) mass vector.
    pub fn extract(&self, probs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(probs.len(), self.dim());
        let mut phi = vec![0.0; self.phi_len()];
        for (config, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (slot, negative) = self.signed_slot(config);
            if negative {
                phi[slot] -= p;
            } else {
                phi[slot] += p;
            }
        }
        phi
    }

    /// Marginal of a mass vector over the gradient values, indexed like the
    /// extracted amplitudes.
    pub fn sigma_marginal(&self, probs: &[f64]) -> Vec<f64> {
        let mut marginal = vec![0.0; self.phi_len()];
        for (config, &p) in probs.iter().enumerate() {
            marginal[self.signed_slot(config).0] += p;
        }
        marginal
    }
}

/// Checks that `probs` is a probability vector of the given length.
pub fn validate_probabilities(probs: &[f64], expected_len: usize) -> Result<()> {
    if probs.len() != expected_len {
        return Err(Error::DimensionMismatch {
            expected: expected_len,
            found: probs.len(),
        });
    }
    if let Some((i, p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(Error::InvalidState(format!(
            "entry {i} is {p}, probabilities must be finite and non-negative"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > DIST_TOL {
        return Err(Error::InvalidState(format!(
            "total mass is {total}, expected 1"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    One,
    Two,
}

pub fn norm(values: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::One => values.iter().map(|v| v.abs()).sum(),
        Norm::Two => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Rescales `values` to unit norm; a zero vector is degenerate.
pub fn normalize(values: &[f64], which: Norm) -> Result<Vec<f64>> {
    let n = norm(values, which);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateState(format!(
            "cannot normalize a vector with {which:?}-norm {n}"
        )));
    }
    Ok(values.iter().map(|v| v / n).collect())
}

/// Probability distribution over the b4v strings of a grabit register.
#[derive(Clone, Debug, PartialEq)]
pub struct GrabitState {
    n_grabits: usize,
    probs: Vec<f64>,
}

impl GrabitState {
    pub fn new(n_grabits: usize, probs: Vec<f64>) -> Result<Self> {
        validate_probabilities(&probs, 1 << (2 * n_grabits))?;
        Ok(GrabitState { n_grabits, probs })
    }

    /// Unit mass on a single b4v string.
    pub fn basis(b4vs: &[B4v]) -> Self {
        let n = b4vs.len();
        let mut probs = vec![0.0; 1 << (2 * n)];
        probs[pack_b4v_string(b4vs)] = 1.0;
        GrabitState { n_grabits: n, probs }
    }

    /// Every grabit in `|0⟩⟩`, i.e. b4v 0.
    pub fn ground(n_grabits: usize) -> Self {
        Self::basis(&vec![B4v::new(0, 0); n_grabits])
    }

    pub(crate) fn from_raw(n_grabits: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), 1 << (2 * n_grabits));
        GrabitState { n_grabits, probs }
    }

    pub fn n_grabits(&self) -> usize {
        self.n_grabits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace::Grabits(self.n_grabits)
    }

    pub fn extract_phi(&self) -> RealifiedState {
        extract_phi_circuit(self)
    }

    /// Physical probabilities `p̃_i = Σ_σ P_{2i+σ}` over blv strings.
    pub fn blv_marginal(&self) -> Vec<f64> {
        self.space().sigma_marginal(&self.probs)
    }
}

/// `φ_i = Σ_σ (-1)^{Σσ} P_{2i+σ}` over all blv strings `i`.
pub fn extract_phi_circuit(state: &GrabitState) -> RealifiedState {
    RealifiedState::new(state.space().extract(&state.probs))
}

/// Distribution over phased position variables `(ρ, σ, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PpvDistribution {
    lattice: LatticeSpec,
    probs: Vec<f64>,
}

impl PpvDistribution {
    pub fn new(lattice: LatticeSpec, probs: Vec<f64>) -> Result<Self> {
        validate_probabilities(&probs, 4 * lattice.n_configs())?;
        Ok(PpvDistribution { lattice, probs })
    }

    /// Unit mass on a single phased position variable.
    pub fn localized(lattice: LatticeSpec, rho: usize, sigma: usize, x: usize) -> Result<Self> {
        let sites = lattice.n_configs();
        if rho > 1 || sigma > 1 || x >= sites {
            return Err(Error::InvalidState(format!(
                "ppv ({rho}, {sigma}, {x}) outside lattice with {sites} configurations"
            )));
        }
        let mut probs = vec![0.0; 4 * sites];
        probs[ppv_index(&lattice, rho, sigma, x)] = 1.0;
        Ok(PpvDistribution { lattice, probs })
    }

    pub(crate) fn from_raw(lattice: LatticeSpec, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), 4 * lattice.n_configs());
        PpvDistribution { lattice, probs }
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace::Lattice(self.lattice.clone())
    }

    pub fn extract_phi(&self) -> RealifiedState {
        extract_phi_ppv(self)
    }
}

/// Packed index of `(ρ, σ, x)`.
pub fn ppv_index(lattice: &LatticeSpec, rho: usize, sigma: usize, x: usize) -> usize {
    (2 * rho + sigma) * lattice.n_configs() + x
}

pub fn ppv_unpack(lattice: &LatticeSpec, index: usize) -> (usize, usize, usize) {
    let sites = lattice.n_configs();
    (index / (2 * sites), (index / sites) % 2, index % sites)
}

/// `φ_{ρx} = P_{ρ0x} − P_{ρ1x}`.
pub fn extract_phi_ppv(dist: &PpvDistribution) -> RealifiedState {
    RealifiedState::new(dist.space().extract(&dist.probs))
}

/// Signed real vector proportional to `(Re Ψ, Im Ψ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealifiedState {
    values: Vec<f64>,
}

impl RealifiedState {
    pub fn new(values: Vec<f64>) -> Self {
        RealifiedState { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self, which: Norm) -> f64 {
        norm(&self.values, which)
    }

    pub fn normalized(&self, which: Norm) -> Result<Self> {
        normalize(&self.values, which).map(RealifiedState::new)
    }
}

/// Complex amplitudes over a computational basis or lattice sites.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexState {
    amplitudes: Vec<Complex64>,
}

impl ComplexState {
    pub fn new(amplitudes: Vec<Complex64>) -> Self {
        ComplexState { amplitudes }
    }

    /// Basis state `|index⟩` in a space of dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        ComplexState { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm2(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm2();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateState("zero complex state".into()));
        }
        Ok(ComplexState::new(
            self.amplitudes.iter().map(|a| a / n).collect(),
        ))
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm2() - 1.0).abs() <= DIST_TOL
    }

    /// Born probabilities `|Ψ_i|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Splits `ψ` into `(Re ψ, Im ψ)` with the ReIm index most significant.
pub fn realify(psi: &ComplexState) -> RealifiedState {
    let re = psi.amplitudes.iter().map(|a| a.re);
    let im = psi.amplitudes.iter().map(|a| a.im);
    RealifiedState::new(re.chain(im).collect())
}

/// Inverse of [`realify`].
pub fn complexify(phi: &RealifiedState) -> Result<ComplexState> {
    if !phi.len().is_multiple_of(2) {
        return Err(Error::InvalidState(format!(
            "realified state of odd length {}",
            phi.len()
        )));
    }
    let half = phi.len() / 2;
    let (re, im) = phi.values.split_at(half);
    Ok(ComplexState::new(
        re.iter()
            .zip(im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect(),
    ))
}

/// Splits `ψ` into the `(i, ρ)` ordering used for circuits, where the ReIm
/// grabit is the least significant one: `Φ_{2i+ρ}`.
pub fn realify_interleaved(psi: &ComplexState) -> RealifiedState {
    RealifiedState::new(
        psi.amplitudes
            .iter()
            .flat_map(|a| [a.re, a.im])
            .collect(),
    )
}

pub fn complexify_interleaved(phi: &RealifiedState) -> Result<ComplexState> {
    if !phi.len().is_multiple_of(2) {
        return Err(Error::InvalidState(format!(
            "realified state of odd length {}",
            phi.len()
        )));
    }
    Ok(ComplexState::new(
        phi.values
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice(n: usize) -> LatticeSpec {
        LatticeSpec::new(n, 1, 1).unwrap()
    }

    #[test]
    fn worked_single_grabit_extraction() {
        let state = GrabitState::new(1, vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        assert_eq!(state.extract_phi().values(), &[0.5, 0.0]);
        let localized = GrabitState::new(1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(localized.extract_phi().values(), &[1.0, 0.0]);
    }

    #[test]
    fn uniform_two_grabits_cancel() {
        let state = GrabitState::new(2, vec![1.0 / 16.0; 16]).unwrap();
        let phi = state.extract_phi();
        assert_eq!(phi.len(), 4);
        assert!(phi.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ppv_extraction() {
        let spec = lattice(5);
        let p = PpvDistribution::localized(spec.clone(), 0, 0, 2).unwrap();
        let phi = p.extract_phi();
        let mut expected = [0.0; 10];
        expected[2] = 1.0;
        assert_eq!(phi.values(), &expected[..]);

        let mut probs = vec![0.0; 20];
        probs[ppv_index(&spec, 0, 0, 3)] = 0.5;
        probs[ppv_index(&spec, 0, 1, 3)] = 0.5;
        let p = PpvDistribution::new(spec, probs).unwrap();
        assert!(p.extract_phi().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ppv_single_site_direct_evaluation() {
        // one-site lattices are not valid lattice specs, so evaluate the
        // (ρσ) = (00, 01, 10, 11) layout through the circuit space of one grabit,
        // which shares the packing 2ρ + σ
        let space = ConfigSpace::Grabits(1);
        assert_eq!(space.extract(&[0.5, 0.0, 0.25, 0.25]), vec![0.5, 0.0]);
    }

    #[test]
    fn realify_examples() {
        let psi = ComplexState::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(realify(&psi).values(), &[1.0, 0.0, 0.0, 0.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = ComplexState::new(vec![Complex64::new(s, s), Complex64::new(0.0, 0.0)]);
        let phi = realify(&psi);
        assert_eq!(phi.values()[0], s);
        assert_eq!(phi.values()[2], s);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize(&[2.0, 0.0, 1.0, 1.0], Norm::One).unwrap(),
            vec![0.5, 0.0, 0.25, 0.25]
        );
        let v = normalize(&[3.0, 4.0], Norm::Two).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert!(matches!(
            normalize(&[0.0, 0.0], Norm::Two),
            Err(Error::DegenerateState(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_vectors() {
        assert!(GrabitState::new(1, vec![0.5, 0.5, 0.0]).is_err());
        assert!(GrabitState::new(1, vec![1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(GrabitState::new(1, vec![0.5, 0.4, 0.0, 0.0]).is_err());
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter_map("zero mass", |v| {
            let total: f64 = v.iter().sum();
            (total > 1e-3).then(|| v.iter().map(|p| p / total).collect())
        })
    }

    proptest! {
        #[test]
        fn b4v_string_round_trip(config in 0usize..256) {
            let b4vs = unpack_b4v_string(config, 4);
            prop_assert_eq!(pack_b4v_string(&b4vs), config);
        }

        #[test]
        fn ppv_round_trip(index in 0usize..(4 * 7)) {
            let spec = lattice(7);
            let (rho, sigma, x) = ppv_unpack(&spec, index);
            prop_assert_eq!(ppv_index(&spec, rho, sigma, x), index);
        }

        #[test]
        fn canonical_configs_round_trip(slot in 0usize..8, negative: bool) {
            let space = ConfigSpace::Grabits(3);
            prop_assert_eq!(space.signed_slot(space.config_for(slot, negative)), (slot, negative));
            let lat = ConfigSpace::Lattice(lattice(4));
            prop_assert_eq!(lat.signed_slot(lat.config_for(slot, negative)), (slot, negative));
        }

        #[test]
        fn extraction_is_linear(p1 in distribution(16), p2 in distribution(16), a in 0.0f64..=1.0) {
            let space = ConfigSpace::Grabits(2);
            let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
            let lhs = space.extract(&mix);
            let e1 = space.extract(&p1);
            let e2 = space.extract(&p2);
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * e1[i] + (1.0 - a) * e2[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn extracted_one_norm_bounded(p in distribution(64)) {
            let state = GrabitState::from_raw(3, p);
            prop_assert!(state.extract_phi().norm(Norm::One) <= 1.0 + 1e-12);
        }

        #[test]
        fn complex_round_trip(parts in prop::collection::vec(-1.0f64..1.0, 2..16)) {
            let amps: Vec<Complex64> = parts.chunks(2)
                .map(|c| Complex64::new(c[0], *c.get(1).unwrap_or(&0.0)))
                .collect();
            let psi = ComplexState::new(amps);
            let back = complexify(&realify(&psi)).unwrap();
            prop_assert_eq!(&back, &psi);
            let back = complexify_interleaved(&realify_interleaved(&psi)).unwrap();
            prop_assert_eq!(back, psi);
        }
    }
}
