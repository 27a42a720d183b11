//! Refreshment: the non-linear map that makes a distribution
//! interference-free.
//!
//! For every amplitude slot (blv string in circuit mode, `(ρ, x)` on the
//! lattice) the refreshed distribution carries all of its mass on a single
//! gradient value, `|φ|` at `σ = (1 − sign φ)/2`, and the result is rescaled to
//! unit mass. A zero amplitude leaves both gradient values empty; for
//! determinism it is treated as positive.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::state::{ConfigSpace, GrabitState, PpvDistribution, RealifiedState, DIST_TOL};

/// Distributions that live on a [`ConfigSpace`].
pub trait ProbabilityDistribution: Sized {
    fn space(&self) -> ConfigSpace;
    fn probs(&self) -> &[f64];
    /// Same space, new masses. The caller guarantees a valid distribution.
    fn with_probs(&self, probs: Vec<f64>) -> Self;
}

impl ProbabilityDistribution for GrabitState {
    fn space(&self) -> ConfigSpace {
        GrabitState::space(self)
    }
    fn probs(&self) -> &[f64] {
        GrabitState::probs(self)
    }
    fn with_probs(&self, probs: Vec<f64>) -> Self {
        GrabitState::from_raw(self.n_grabits(), probs)
    }
}

impl ProbabilityDistribution for PpvDistribution {
    fn space(&self) -> ConfigSpace {
        PpvDistribution::space(self)
    }
    fn probs(&self) -> &[f64] {
        PpvDistribution::probs(self)
    }
    fn with_probs(&self, probs: Vec<f64>) -> Self {
        PpvDistribution::from_raw(self.lattice().clone(), probs)
    }
}

/// Interference-free unit-mass distribution whose extraction is
/// `φ/||φ||₁`.
pub fn distribution_from_phi(space: &ConfigSpace, phi: &[f64]) -> Result<Vec<f64>> {
    if phi.len() != space.phi_len() {
        return Err(Error::DimensionMismatch {
            expected: space.phi_len(),
            found: phi.len(),
        });
    }
    let l1: f64 = phi.iter().map(|v| v.abs()).sum();
    if !(l1 > 0.0) || !l1.is_finite() {
        return Err(Error::DegenerateState(
            "extracted amplitudes vanish everywhere, nothing to refresh".into(),
        ));
    }
    let mut out = vec![0.0; space.dim()];
    for (slot, &v) in phi.iter().enumerate() {
        if v != 0.0 {
            out[space.config_for(slot, v < 0.0)] = v.abs() / l1;
        }
    }
    Ok(out)
}

/// True if every populated configuration is the canonical carrier of its
/// slot and the total mass is one.
fn is_refreshed(space: &ConfigSpace, probs: &[f64]) -> bool {
    let mut seen = vec![false; space.phi_len()];
    let mut total = 0.0;
    for (config, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (slot, negative) = space.signed_slot(config);
        if space.config_for(slot, negative) != config || std::mem::replace(&mut seen[slot], true) {
            return false;
        }
        total += p;
    }
    (total - 1.0).abs() <= DIST_TOL
}

/// Refreshment of a raw mass vector.
pub fn refresh_probs(space: &ConfigSpace, probs: &[f64]) -> Result<Vec<f64>> {
    if is_refreshed(space, probs) {
        return Ok(probs.to_vec());
    }
    distribution_from_phi(space, &space.extract(probs))
}

pub fn refresh_distribution<D: ProbabilityDistribution>(dist: &D) -> Result<D> {
    let out = refresh_probs(&dist.space(), dist.probs())?;
    Ok(dist.with_probs(out))
}

pub fn refresh_grabit(state: &GrabitState) -> Result<GrabitState> {
    refresh_distribution(state)
}

pub fn refresh_ppv(dist: &PpvDistribution) -> Result<PpvDistribution> {
    refresh_distribution(dist)
}

/// Draws `n` i.i.d. configurations from `probs` on the substream family
/// `(seed, keys…, block)`.
pub(crate) fn sample_iid(probs: &[f64], n: usize, seed: u64, keys: &[u64]) -> Result<Vec<usize>> {
    let index = WeightedIndex::new(probs).map_err(|e| {
        Error::DegenerateState(format!("cannot sample from distribution: {e}"))
    })?;
    let blocks: Vec<Vec<usize>> = (0..rng::n_blocks(n))
        .into_par_iter()
        .map(|b| {
            let mut path = keys.to_vec();
            path.push(b as u64);
            let mut r = rng::substream(seed, &path);
            rng::block_range(b, n).map(|_| index.sample(&mut r)).collect()
        })
        .collect();
    Ok(blocks.concat())
}

/// Finite multiset of sampled configurations with its seed lineage.
///
/// `world` and `generation` select the random substreams used by the next
/// stochastic update, so two ensembles built from the same seed but
/// different worlds never share randomness.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    space: ConfigSpace,
    samples: Vec<usize>,
    seed: u64,
    world: u64,
    generation: u64,
}

const REFRESH_STREAM: u64 = 0x7265_6672;
const DRAW_STREAM: u64 = 0x6472_6177;

impl Ensemble {
    pub fn new(space: ConfigSpace, samples: Vec<usize>, seed: u64, world: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidState("ensemble needs at least one sample".into()));
        }
        if let Some(&c) = samples.iter().find(|&&c| c >= space.dim()) {
            return Err(Error::InvalidState(format!(
                "configuration {c} outside space of dimension {}",
                space.dim()
            )));
        }
        Ok(Ensemble {
            space,
            samples,
            seed,
            world,
            generation: 0,
        })
    }

    /// `n` i.i.d. samples of `probs`.
    pub fn draw(space: ConfigSpace, probs: &[f64], n: usize, seed: u64, world: u64) -> Result<Self> {
        if probs.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: probs.len(),
            });
        }
        let samples = sample_iid(probs, n, seed, &[DRAW_STREAM, world])?;
        Ensemble::new(space, samples, seed, world)
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world(&self) -> u64 {
        self.world
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Keys of the substream family for the next update.
    pub(crate) fn next_keys(&self, stream: u64) -> [u64; 3] {
        [stream, self.world, self.generation]
    }

    /// Successor ensemble with new samples and the next generation.
    pub(crate) fn evolved(&self, samples: Vec<usize>) -> Ensemble {
        Ensemble {
            space: self.space.clone(),
            samples,
            seed: self.seed,
            world: self.world,
            generation: self.generation + 1,
        }
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.space.dim()];
        for &c in &self.samples {
            counts[c] += 1;
        }
        counts
    }

    /// Relative frequencies `R`.
    pub fn histogram(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.counts().into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Amplitude estimator from relative frequencies.
pub fn estimate_phi(ensemble: &Ensemble) -> RealifiedState {
    RealifiedState::new(ensemble.space.extract(&ensemble.histogram()))
}

/// Refreshes the estimated distribution and redraws an ensemble of the same
/// size from it.
pub fn refresh_ensemble(ensemble: &Ensemble) -> Result<Ensemble> {
    let refreshed = distribution_from_phi(&ensemble.space, estimate_phi(ensemble).values())?;
    let keys = ensemble.next_keys(REFRESH_STREAM);
    let samples = sample_iid(&refreshed, ensemble.len(), ensemble.seed, &keys)?;
    Ok(ensemble.evolved(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LatticeSpec;
    use proptest::prelude::*;

    fn grabit(probs: &[f64]) -> GrabitState {
        GrabitState::new(probs.len().trailing_zeros() as usize / 2, probs.to_vec()).unwrap()
    }

    #[test]
    fn worked_refresh_example() {
        let out = refresh_grabit(&grabit(&[0.5, 0.0, 0.25, 0.25])).unwrap();
        assert_eq!(out.probs(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn interference_free_is_fixed_point() {
        let p = grabit(&[0.7, 0.0, 0.0, 0.3]);
        assert_eq!(refresh_grabit(&p).unwrap(), p);
    }

    #[test]
    fn zero_amplitude_site_is_emptied() {
        let spec = LatticeSpec::new(3, 1, 1).unwrap();
        let mut probs = vec![0.0; 12];
        // slot (ρ=0, x=1) cancels, slot (ρ=1, x=2) is negative
        probs[1] = 0.25;
        probs[3 + 1] = 0.25;
        probs[9 + 2] = 0.5;
        let out = refresh_ppv(&PpvDistribution::new(spec, probs).unwrap()).unwrap();
        assert_eq!(out.probs()[1], 0.0);
        assert_eq!(out.probs()[4], 0.0);
        assert_eq!(out.probs()[11], 1.0);
    }

    #[test]
    fn vanishing_amplitudes_are_degenerate() {
        let p = grabit(&[0.5, 0.5, 0.0, 0.0]);
        assert!(matches!(refresh_grabit(&p), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn multi_grabit_sign_lands_on_last_grabit() {
        // slot 0 negative through the first grabit's gradient value
        let mut probs = vec![0.0; 16];
        probs[0b0100] = 1.0;
        let out = refresh_grabit(&grabit(&probs)).unwrap();
        assert_eq!(out.probs()[0b0001], 1.0);
        assert_eq!(out.extract_phi().values(), &[-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn estimator_examples() {
        let e = Ensemble::new(ConfigSpace::Grabits(1), vec![0, 0, 2, 3], 1, 0).unwrap();
        assert_eq!(e.histogram(), vec![0.5, 0.0, 0.25, 0.25]);
        assert_eq!(estimate_phi(&e).values(), &[0.5, 0.0]);
        let one = Ensemble::new(ConfigSpace::Grabits(1), vec![1], 1, 0).unwrap();
        assert_eq!(estimate_phi(&one).values(), &[-1.0, 0.0]);
    }

    #[test]
    fn estimator_converges() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let n = 100_000;
        let e = Ensemble::draw(ConfigSpace::Grabits(1), &probs, n, 11, 0).unwrap();
        let r = e.histogram();
        for (ri, pi) in r.iter().zip(probs) {
            let band = 3.0 * (pi * (1.0 - pi) / n as f64).sqrt();
            assert!((ri - pi).abs() < band, "{ri} vs {pi}");
        }
    }

    #[test]
    fn refresh_ensemble_examples() {
        let k = 250;
        let mut samples = vec![0; 2 * k];
        samples.extend(vec![2; k]);
        samples.extend(vec![3; k]);
        let e = Ensemble::new(ConfigSpace::Grabits(1), samples, 3, 0).unwrap();
        let out = refresh_ensemble(&e).unwrap();
        assert_eq!(out.len(), 4 * k);
        assert!(out.samples().iter().all(|&c| c == 0));
        assert_eq!(out.generation(), 1);

        let single = Ensemble::new(ConfigSpace::Grabits(1), vec![3], 3, 0).unwrap();
        assert_eq!(refresh_ensemble(&single).unwrap().samples(), &[3]);

        let cancel = Ensemble::new(ConfigSpace::Grabits(1), vec![0, 1], 3, 0).unwrap();
        assert!(matches!(refresh_ensemble(&cancel), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn refresh_ensemble_is_deterministic() {
        let e = Ensemble::draw(ConfigSpace::Grabits(2), &[1.0 / 16.0; 16], 10_000, 5, 0)
            .unwrap();
        // uniform cancels exactly only in expectation, so the refresh is defined
        let a = refresh_ensemble(&e).unwrap();
        let b = refresh_ensemble(&e).unwrap();
        assert_eq!(a, b);
    }

    /// Two-sample Kolmogorov-Smirnov statistic on configuration indices.
    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0f64);
        for (x, y) in a.iter().zip(b) {
            ca += x;
            cb += y;
            d = d.max((ca - cb).abs());
        }
        d
    }

    #[test]
    fn interference_free_ensemble_keeps_its_histogram() {
        let probs = [0.4, 0.0, 0.0, 0.6];
        let n = 20_000;
        let e = Ensemble::draw(ConfigSpace::Grabits(1), &probs, n, 9, 0).unwrap();
        let out = refresh_ensemble(&e).unwrap();
        let d = ks_statistic(&e.histogram(), &out.histogram());
        // two-sample critical value at α = 0.01
        let critical = 1.628 * (2.0 / n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} above {critical}");
    }

    fn arb_probs(n_grabits: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 1 << (2 * n_grabits)).prop_filter_map(
            "non-degenerate",
            move |v| {
                let s: f64 = v.iter().sum();
                let p: Vec<f64> = v.iter().map(|x| x / s).collect();
                let phi = ConfigSpace::Grabits(n_grabits).extract(&p);
                (s > 0.0 && phi.iter().any(|x| x.abs() > 1e-9)).then_some(p)
            },
        )
    }

    proptest! {
        #[test]
        fn refresh_is_idempotent(p in arb_probs(2)) {
            let once = refresh_grabit(&grabit(&p)).unwrap();
            let twice = refresh_grabit(&once).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn refresh_preserves_signs_and_realizes_born1(p in arb_probs(2)) {
            let state = grabit(&p);
            let phi = state.extract_phi().into_values();
            let out = refresh_grabit(&state).unwrap();
            let phi_out = out.extract_phi().into_values();
            let l1: f64 = phi.iter().map(|v| v.abs()).sum();
            let marginal = out.space().sigma_marginal(out.probs());
            for i in 0..phi.len() {
                if phi[i] != 0.0 {
                    prop_assert_eq!(phi[i].signum(), phi_out[i].signum());
                }
                prop_assert!((marginal[i] - phi[i].abs() / l1).abs() < 1e-12);
            }
            prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
