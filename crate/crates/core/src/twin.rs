//! Twin worlds and coincidence statistics.
//!
//! Two replicas run the same program with independent randomness. A pair of
//! configurations is accepted when their blv strings agree on every grabit,
//! including ancillas and the ReIm grabit; gradient values are not compared.
//! Each world carries its own ReIm bit, and coincidence forces them equal.

use rand::Rng;
use rayon::prelude::*;

use crate::circuits::Program;
use crate::error::{Error, Result};
use crate::gates::{GateKind, GateSpec};
use crate::refresh::{refresh_ensemble, Ensemble};
use crate::rng;
use crate::state::{blv_index, ConfigSpace};

/// `p̃̃_i = Σ_ρ p²_{iρ} / Σ_{iρ} p²_{iρ}` for `p` laid out as `n_rho·i + ρ`.
pub fn born2_distribution(p: &[f64], n_rho: usize) -> Result<Vec<f64>> {
    if n_rho == 0 || !p.len().is_multiple_of(n_rho) {
        return Err(Error::DimensionMismatch {
            expected: n_rho.max(1) * (p.len() / n_rho.max(1)),
            found: p.len(),
        });
    }
    if p.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidState("coincidence input must be non-negative".into()));
    }
    let squares: Vec<f64> = p
        .chunks(n_rho)
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let total: f64 = squares.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateState("no coincidence mass".into()));
    }
    Ok(squares.into_iter().map(|s| s / total).collect())
}

/// Outcome index of the measured grabits (big-endian in the given order)
/// from a blv string.
fn outcome_of(blv: usize, n_grabits: usize, measured: &[usize]) -> usize {
    measured
        .iter()
        .fold(0, |acc, &g| 2 * acc + ((blv >> (n_grabits - 1 - g)) & 1))
}

/// Exact coincidence statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinDistribution {
    pub measured: Vec<usize>,
    /// Distribution of the measured outcomes among coincidences.
    pub outcome_probs: Vec<f64>,
    /// Probability `Σ p̃²` that a pair of draws coincides.
    pub acceptance: f64,
}

/// Born-2 outcome distribution: σ-marginals of both worlds multiplied over
/// full blv strings, renormalized, then marginalized to the measured grabits.
pub fn run_twin_distribution(program: &Program) -> Result<TwinDistribution> {
    program.check_readout()?;
    let world = program.run_distribution()?;
    let p_tilde = world.blv_marginal();
    let acceptance: f64 = p_tilde.iter().map(|p| p * p).sum();
    let joint = born2_distribution(&p_tilde, 1)?;
    let measured = program.measured();
    let mut outcome_probs = vec![0.0; 1 << measured.len()];
    for (blv, q) in joint.into_iter().enumerate() {
        outcome_probs[outcome_of(blv, program.n_grabits(), &measured)] += q;
    }
    Ok(TwinDistribution {
        measured,
        outcome_probs,
        acceptance,
    })
}

/// How each world produces its samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WorldSampling {
    /// Every world is a finite ensemble pushed through the gates by Monte
    /// Carlo jumps and refreshed from its own histogram.
    #[default]
    Ensemble,
    /// Draws from each world's exact refreshed distribution.
    Distribution,
}

impl WorldSampling {
    pub fn name(self) -> &'static str {
        match self {
            WorldSampling::Ensemble => "ensemble",
            WorldSampling::Distribution => "distribution",
        }
    }
}

/// Random stream of one world.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorldStream {
    pub seed: u64,
    pub world: u64,
}

/// Empirical coincidence statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinSampled {
    pub measured: Vec<usize>,
    /// Accepted pairs per measured outcome.
    pub counts: Vec<u64>,
    pub n_drawn: usize,
    pub n_accepted: usize,
}

impl TwinSampled {
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n_accepted as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.n_accepted as f64 / self.n_drawn as f64
    }
}

const GATE_STREAM: u64 = 0x6761_7465;

/// Monte Carlo application of one gate to every sample.
pub fn apply_gate_ensemble(ensemble: &Ensemble, gate: &GateSpec) -> Result<Ensemble> {
    let n_grabits = match ensemble.space() {
        ConfigSpace::Grabits(n) => *n,
        ConfigSpace::Lattice(_) => {
            return Err(Error::InvalidGate("gates act on grabit registers".into()))
        }
    };
    gate.validate(n_grabits)?;
    let matrix = match gate.local_matrix() {
        Some(m) => m,
        None if gate.kind == GateKind::Refresh => return refresh_ensemble(ensemble),
        None => return Ok(ensemble.clone()),
    };
    let wires = gate.wires();
    let k = wires.len();
    let shifts: Vec<usize> = wires.iter().map(|&w| 2 * (n_grabits - 1 - w)).collect();
    let mask: usize = shifts.iter().map(|&s| 3 << s).sum();
    let scatter: Vec<usize> = (0..matrix.dim())
        .map(|local| {
            shifts
                .iter()
                .enumerate()
                .map(|(pos, &s)| ((local >> (2 * (k - 1 - pos))) & 3) << s)
                .sum()
        })
        .collect();
    let columns: Vec<(Vec<usize>, Vec<f64>)> = matrix
        .column_supports()
        .into_iter()
        .map(|col| {
            let mut acc = 0.0;
            let rows = col.iter().map(|&(r, _)| scatter[r]).collect();
            let cum = col
                .iter()
                .map(|&(_, w)| {
                    acc += w;
                    acc
                })
                .collect();
            (rows, cum)
        })
        .collect();
    let samples = ensemble.samples();
    let keys = ensemble.next_keys(GATE_STREAM);
    let moved: Vec<Vec<usize>> = (0..rng::n_blocks(samples.len()))
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(ensemble.seed(), &[keys[0], keys[1], keys[2], b as u64]);
            samples[rng::block_range(b, samples.len())]
                .iter()
                .map(|&config| {
                    let local = shifts
                        .iter()
                        .fold(0, |acc, &s| 4 * acc + ((config >> s) & 3));
                    let (rows, cum) = &columns[local];
                    let choice = if rows.len() == 1 {
                        0
                    } else {
                        let u = r.random::<f64>() * cum[cum.len() - 1];
                        cum.partition_point(|&x| x <= u).min(rows.len() - 1)
                    };
                    (config & !mask) | rows[choice]
                })
                .collect()
        })
        .collect();
    Ok(ensemble.evolved(moved.concat()))
}

/// One world as a finite ensemble run through every gate of the program.
pub fn simulate_world_ensemble(program: &Program, n_samples: usize, stream: WorldStream) -> Result<Ensemble> {
    let start = Ensemble::new(
        ConfigSpace::Grabits(program.n_grabits()),
        vec![0; n_samples],
        stream.seed,
        stream.world,
    )?;
    program
        .gates()
        .iter()
        .try_fold(start, |e, gate| apply_gate_ensemble(&e, gate))
}

fn world_samples(
    program: &Program,
    n_samples: usize,
    stream: WorldStream,
    sampling: WorldSampling,
    exact: Option<&[f64]>,
) -> Result<Vec<usize>> {
    Ok(match sampling {
        WorldSampling::Ensemble => simulate_world_ensemble(program, n_samples, stream)?
            .samples()
            .to_vec(),
        WorldSampling::Distribution => Ensemble::draw(
            ConfigSpace::Grabits(program.n_grabits()),
            exact.expect("exact distribution computed for distribution sampling"),
            n_samples,
            stream.seed,
            stream.world,
        )?
        .samples()
        .to_vec(),
    })
}

/// Sampled coincidence run with worlds `(seed, 0)` and `(seed, 1)`.
pub fn run_twin_sampled(
    program: &Program,
    n_samples: usize,
    seed: u64,
    sampling: WorldSampling,
) -> Result<TwinSampled> {
    run_twin_sampled_with(
        program,
        n_samples,
        [WorldStream { seed, world: 0 }, WorldStream { seed, world: 1 }],
        sampling,
    )
}

/// Draws `n_samples` pairs, sample `k` of world I with sample `k` of world
/// II, and keeps the pairs whose blv strings coincide.
pub fn run_twin_sampled_with(
    program: &Program,
    n_samples: usize,
    streams: [WorldStream; 2],
    sampling: WorldSampling,
) -> Result<TwinSampled> {
    program.check_readout()?;
    if n_samples == 0 {
        return Err(Error::InvalidState("need at least one sample pair".into()));
    }
    let exact = match sampling {
        WorldSampling::Distribution => Some(program.run_distribution()?.into_probs()),
        WorldSampling::Ensemble => None,
    };
    let first = world_samples(program, n_samples, streams[0], sampling, exact.as_deref())?;
    let second = world_samples(program, n_samples, streams[1], sampling, exact.as_deref())?;
    let n = program.n_grabits();
    let measured = program.measured();
    let mut counts = vec![0u64; 1 << measured.len()];
    let mut n_accepted = 0;
    for (&a, &b) in first.iter().zip(&second) {
        let blv = blv_index(a, n);
        if blv == blv_index(b, n) {
            counts[outcome_of(blv, n, &measured)] += 1;
            n_accepted += 1;
        }
    }
    if n_accepted == 0 {
        return Err(Error::DegenerateState(format!(
            "no coincidences among {n_samples} drawn pairs"
        )));
    }
    Ok(TwinSampled {
        measured,
        counts,
        n_drawn: n_samples,
        n_accepted,
    })
}
