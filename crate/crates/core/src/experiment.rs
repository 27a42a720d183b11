//! Config files, experiment runners and CSV output.
//!
//! A config is a flat `key = value` file; `#` starts a comment. Keys left
//! out take per-experiment defaults (see [`ExperimentConfig::defaults`]).
//! Every run writes its CSV files and a `run.meta` file into `out_dir`.
//! CSV bodies depend only on the config; time stamps live in `run.meta`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::circuits;
use crate::dynamics::{self, Emulator, LatticeSpec, PotentialField};
use crate::error::{Error, Result};
use crate::locality;
use crate::oracle::{self, ExactPropagator, Gauge, Metric};
use crate::state::{realify, ComplexState, PpvDistribution, RealifiedState};
use crate::twin::{self, WorldSampling, WorldStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    PhaseRotation,
    Chsh,
    FreeParticle,
    Tunneling,
    Locality,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PhaseRotation => "phase_rotation",
            ExperimentKind::Chsh => "chsh",
            ExperimentKind::FreeParticle => "free_particle",
            ExperimentKind::Tunneling => "tunneling",
            ExperimentKind::Locality => "locality",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "phase_rotation" => ExperimentKind::PhaseRotation,
            "chsh" => ExperimentKind::Chsh,
            "free_particle" => ExperimentKind::FreeParticle,
            "tunneling" => ExperimentKind::Tunneling,
            "locality" => ExperimentKind::Locality,
            other => {
                return Err(Error::config(
                    "experiment",
                    format!("unknown experiment `{other}`"),
                ))
            }
        })
    }
}

pub fn parse_mode(s: &str) -> Result<WorldSampling> {
    match s {
        "ensemble" => Ok(WorldSampling::Ensemble),
        "distribution" => Ok(WorldSampling::Distribution),
        other => Err(Error::config(
            "mode",
            format!("expected `distribution` or `ensemble`, got `{other}`"),
        )),
    }
}

/// Fully resolved experiment parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub mode: WorldSampling,
    pub n_samples: usize,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Number of time points including `t = 0`.
    pub n_t: usize,
    pub t_max: f64,
    pub x0: f64,
    pub k: f64,
    pub sigma_x: f64,
    pub barrier_lo: usize,
    pub barrier_hi: usize,
    pub barrier_height: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_points: usize,
    /// Multi-start count of the locality minimizer.
    pub restarts: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults reproducing the reference runs of each experiment.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            mode: WorldSampling::Ensemble,
            n_samples: 100_000,
            seed: 1,
            n: 5,
            d: 1,
            m: 1,
            n_t: 501,
            t_max: 1.0,
            x0: 2.0,
            k: 0.0,
            sigma_x: 1.0,
            barrier_lo: 0,
            barrier_hi: 0,
            barrier_height: 0.0,
            phi_min: -PI,
            phi_max: PI,
            phi_points: 41,
            restarts: 32,
            out_dir: PathBuf::from("out"),
        };
        match experiment {
            ExperimentKind::PhaseRotation | ExperimentKind::FreeParticle => {}
            ExperimentKind::Chsh => cfg.n_samples = 10_000,
            ExperimentKind::Tunneling => {
                cfg.n = 120;
                cfg.n_t = 4001;
                cfg.t_max = 40.0;
                cfg.x0 = 40.0;
                cfg.k = 10.0;
                cfg.sigma_x = 4.0;
                cfg.barrier_lo = 59;
                cfg.barrier_hi = 61;
                cfg.barrier_height = 1.0;
            }
            ExperimentKind::Locality => {
                cfg.phi_min = -FRAC_PI_4;
                cfg.phi_max = -FRAC_PI_4;
                cfg.phi_points = 1;
            }
        }
        cfg
    }

    /// Parses a config file body. `experiment` is required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config("<file>", format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(&key, "given twice"));
            }
        }
        let kind = entries
            .remove("experiment")
            .ok_or_else(|| Error::config("experiment", "missing"))?;
        let mut cfg = Self::defaults(ExperimentKind::parse(&kind)?);
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
        }
        match key {
            "experiment" => self.experiment = ExperimentKind::parse(value)?,
            "mode" => self.mode = parse_mode(value)?,
            "n_samples" => self.n_samples = num::<f64>(key, value).and_then(|v| count(key, v))?,
            "seed" => self.seed = num(key, value)?,
            "N" => self.n = num(key, value)?,
            "D" => self.d = num(key, value)?,
            "M" => self.m = num(key, value)?,
            "N_t" => self.n_t = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "x0" => self.x0 = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "sigma_x" => self.sigma_x = num(key, value)?,
            "barrier_lo" => self.barrier_lo = num(key, value)?,
            "barrier_hi" => self.barrier_hi = num(key, value)?,
            "barrier_height" => self.barrier_height = num(key, value)?,
            "phi_min" => self.phi_min = angle(key, value)?,
            "phi_max" => self.phi_max = angle(key, value)?,
            "phi_points" => self.phi_points = num(key, value)?,
            "restarts" => self.restarts = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Checks every field against the preconditions of the modules it feeds.
    pub fn validate(&self) -> Result<()> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        for (field, v) in [
            ("t_max", self.t_max),
            ("x0", self.x0),
            ("k", self.k),
            ("sigma_x", self.sigma_x),
            ("barrier_height", self.barrier_height),
            ("phi_min", self.phi_min),
            ("phi_max", self.phi_max),
        ] {
            finite(field, v)?;
        }
        match self.experiment {
            ExperimentKind::PhaseRotation | ExperimentKind::Chsh | ExperimentKind::Locality => {
                if self.phi_points == 0 {
                    return Err(Error::config("phi_points", "need at least one grid point"));
                }
                if self.phi_points == 1 && self.phi_min != self.phi_max {
                    return Err(Error::config("phi_points", "one point needs phi_min = phi_max"));
                }
                if self.phi_max < self.phi_min {
                    return Err(Error::config("phi_max", "must not be below phi_min"));
                }
                if self.experiment == ExperimentKind::Locality {
                    if self.restarts == 0 {
                        return Err(Error::config("restarts", "need at least one restart"));
                    }
                } else if self.n_samples == 0 {
                    return Err(Error::config("n_samples", "need at least one sample"));
                }
            }
            ExperimentKind::FreeParticle | ExperimentKind::Tunneling => {
                if self.d != 1 || self.m != 1 {
                    return Err(Error::config("D", "lattice experiments use D = 1, M = 1"));
                }
                if self.n < 3 {
                    return Err(Error::config("N", "need at least 3 sites"));
                }
                if self.n_t < 2 {
                    return Err(Error::config("N_t", "need at least 2 time points"));
                }
                if self.t_max <= 0.0 {
                    return Err(Error::config("t_max", "must be positive"));
                }
                if self.experiment == ExperimentKind::FreeParticle {
                    if self.x0 < 0.0 || self.x0.fract() != 0.0 || self.x0 as usize >= self.n {
                        return Err(Error::config("x0", "must be a site index in 0..N"));
                    }
                } else {
                    if self.sigma_x <= 0.0 {
                        return Err(Error::config("sigma_x", "must be positive"));
                    }
                    if self.barrier_lo > self.barrier_hi || self.barrier_hi >= self.n {
                        return Err(Error::config("barrier_hi", "barrier must satisfy lo <= hi < N"));
                    }
                }
                let dt = self.dt();
                let max_dt = dynamics::max_time_step(&self.lattice()?, &self.potential()?);
                if dt > max_dt {
                    return Err(Error::config(
                        "N_t",
                        format!("time step {dt} exceeds the admissible {max_dt}; raise N_t"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.n_t - 1) as f64
    }

    pub fn n_steps(&self) -> usize {
        self.n_t - 1
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        LatticeSpec::new(self.n, self.d, self.m).map_err(|e| Error::config("N", e.to_string()))
    }

    pub fn potential(&self) -> Result<PotentialField> {
        let spec = self.lattice()?;
        if self.experiment == ExperimentKind::Tunneling && self.barrier_height != 0.0 {
            PotentialField::barrier(&spec, self.barrier_lo, self.barrier_hi, self.barrier_height)
                .map_err(|e| Error::config("barrier_height", e.to_string()))
        } else {
            Ok(PotentialField::zero(&spec))
        }
    }

    /// Evenly spaced `φ` grid, endpoints included.
    pub fn phi_grid(&self) -> Vec<f64> {
        phi_grid(self.phi_min, self.phi_max, self.phi_points)
    }

    /// Renders the config back to `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment", self.experiment.name().into());
        kv("mode", self.mode.name().into());
        kv("n_samples", self.n_samples.to_string());
        kv("seed", self.seed.to_string());
        kv("N", self.n.to_string());
        kv("D", self.d.to_string());
        kv("M", self.m.to_string());
        kv("N_t", self.n_t.to_string());
        kv("t_max", float(self.t_max));
        kv("x0", float(self.x0));
        kv("k", float(self.k));
        kv("sigma_x", float(self.sigma_x));
        kv("barrier_lo", self.barrier_lo.to_string());
        kv("barrier_hi", self.barrier_hi.to_string());
        kv("barrier_height", float(self.barrier_height));
        kv("phi_min", float(self.phi_min));
        kv("phi_max", float(self.phi_max));
        kv("phi_points", self.phi_points.to_string());
        kv("restarts", self.restarts.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }
}

fn count(key: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::config(key, format!("`{v}` is not a count")))
    }
}

/// Accepts plain numbers and multiples of `pi`: `-pi`, `pi/4`, `0.5*pi`.
fn angle(key: &str, value: &str) -> Result<f64> {
    let bad = || Error::config(key, format!("cannot parse angle `{value}`"));
    let v = value.replace(' ', "");
    if let Ok(x) = v.parse::<f64>() {
        return Ok(x);
    }
    let (sign, body) = match v.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, v.as_str()),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| bad())?),
        None => (body, 1.0),
    };
    let factor = match num {
        "pi" => 1.0,
        _ => num
            .strip_suffix("*pi")
            .ok_or_else(bad)?
            .parse::<f64>()
            .map_err(|_| bad())?,
    };
    Ok(sign * factor * PI / den)
}

pub fn phi_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![min],
        _ => (0..points)
            .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// 17 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// Experiment bodies. Each returns typed rows; `run` serializes them.

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRow {
    pub phi: f64,
    pub p0_emulated: f64,
    pub p0_exact: f64,
    pub n_accepted: usize,
    pub n_drawn: usize,
}

/// Twin streams of grid point `index`, sub-run `sub`.
fn streams(seed: u64, index: usize, sub: usize, width: usize) -> [WorldStream; 2] {
    let base = 2 * (index * width + sub) as u64;
    [
        WorldStream { seed, world: base },
        WorldStream {
            seed,
            world: base + 1,
        },
    ]
}

pub fn phase_rotation_sweep(cfg: &ExperimentConfig) -> Result<Vec<PhaseRow>> {
    cfg.phi_grid()
        .into_iter()
        .enumerate()
        .map(|(i, phi)| {
            let program = circuits::phase_rotation(phi);
            let run = twin::run_twin_sampled_with(&program, cfg.n_samples, streams(cfg.seed, i, 0, 1), cfg.mode)?;
            Ok(PhaseRow {
                phi,
                p0_emulated: if run.n_accepted > 0 { run.frequencies()[0] } else { f64::NAN },
                p0_exact: program.oracle_distribution()?[0],
                n_accepted: run.n_accepted,
                n_drawn: run.n_drawn,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChshRow {
    pub phi: f64,
    pub e_emulated: f64,
    /// CHSH combination from the exact twin-world distributions.
    pub e_twin_exact: f64,
    /// Quantum-mechanical value.
    pub e_exact: f64,
    /// Accepted pairs per setting, in the order of [`oracle::chsh_settings`].
    pub n_accepted: [usize; 4],
    pub n_drawn: usize,
}

pub fn chsh_sweep(cfg: &ExperimentConfig) -> Result<Vec<ChshRow>> {
    cfg.phi_grid()
        .into_iter()
        .enumerate()
        .map(|(i, phi)| {
            let mut e_emulated = 0.0;
            let mut e_twin_exact = 0.0;
            let mut n_accepted = [0; 4];
            for (s, &(_, t1, t2, sign)) in oracle::chsh_settings(phi).iter().enumerate() {
                let program = circuits::chsh(t1, t2);
                let run = twin::run_twin_sampled_with(&program, cfg.n_samples, streams(cfg.seed, i, s, 4), cfg.mode)?;
                n_accepted[s] = run.n_accepted;
                e_emulated += sign * if run.n_accepted > 0 {
                    circuits::correlator(&run.frequencies())
                } else {
                    f64::NAN
                };
                let exact = twin::run_twin_distribution(&program)?;
                e_twin_exact += sign * circuits::correlator(&exact.outcome_probs);
            }
            Ok(ChshRow {
                phi,
                e_emulated,
                e_twin_exact,
                e_exact: oracle::chsh_combination(phi),
                n_accepted,
                n_drawn: cfg.n_samples,
            })
        })
        .collect()
}

/// Emulated and exact realified states at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub step: usize,
    pub time: f64,
    /// `Φ`, 2-normalized.
    pub exact: RealifiedState,
    /// `φ/‖φ‖₂` after gauge alignment.
    pub emulated: RealifiedState,
}

impl StatePair {
    pub fn metric(&self, metric: Metric) -> Result<f64> {
        oracle::compare(&self.exact, &self.emulated, metric)
    }
}

/// Gauge used to align emulated and exact states in every lattice run.
pub const GAUGE: Gauge = Gauge::Phase;

/// Emulates from `p0` and compares with the exact evolution of `psi0` at the
/// requested steps.
pub fn lattice_comparison(
    cfg: &ExperimentConfig,
    p0: &PpvDistribution,
    psi0: &ComplexState,
    steps: &[usize],
) -> Result<Vec<StatePair>> {
    let spec = cfg.lattice()?;
    let w = cfg.potential()?;
    let dt = cfg.dt();
    let emulator = Emulator::new(spec.clone(), w.clone(), dt)?;
    let exact = ExactPropagator::new(&spec, &w)?;
    let psi0 = psi0.normalized()?;
    emulator
        .propagate(p0, cfg.n_steps(), steps)?
        .into_iter()
        .map(|snap| {
            let reference = realify(&exact.evolve(&psi0, snap.time)?);
            let phi = snap.dist.extract_phi().normalized(crate::state::Norm::Two)?;
            Ok(StatePair {
                step: snap.step,
                time: snap.time,
                emulated: oracle::align_gauge(&reference, &phi, GAUGE)?,
                exact: reference,
            })
        })
        .collect()
}

/// `count + 1` evenly spread step indices from 0 to `n_steps`.
pub fn spread_steps(n_steps: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=count)
        .map(|j| ((j as f64 * n_steps as f64) / count as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Free particle started on site `x0` with real amplitude; snapshots on
/// every tenth of a step grid of 50 intervals.
pub fn free_particle_run(cfg: &ExperimentConfig) -> Result<Vec<StatePair>> {
    let spec = cfg.lattice()?;
    let x0 = cfg.x0 as usize;
    let p0 = PpvDistribution::localized(spec.clone(), 0, 0, x0)?;
    let psi0 = ComplexState::basis(spec.n_configs(), x0);
    lattice_comparison(cfg, &p0, &psi0, &spread_steps(cfg.n_steps(), 50))
}

/// Gaussian packet against a barrier: snapshots at 41 evenly spread steps.
pub fn tunneling_run(cfg: &ExperimentConfig) -> Result<Vec<StatePair>> {
    let spec = cfg.lattice()?;
    let psi0 = dynamics::gaussian_packet(&spec, cfg.x0, cfg.k, cfg.sigma_x)?;
    let p0 = dynamics::distribution_from_state(&spec, &psi0)?;
    lattice_comparison(cfg, &p0, &psi0, &spread_steps(cfg.n_steps(), 40))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalityRow {
    pub phi: f64,
    pub setting: &'static str,
    pub theta1: f64,
    pub theta2: f64,
    pub free_a: usize,
    pub free_b: usize,
    pub q_min: f64,
}

pub fn locality_sweep(cfg: &ExperimentConfig) -> Result<Vec<LocalityRow>> {
    let mut rows = Vec::new();
    for phi in cfg.phi_grid() {
        for (setting, t1, t2, _) in oracle::chsh_settings(phi) {
            let problem = locality::chsh_refresh_problem(t1, t2)?;
            let (free_a, free_b) = problem.free_vars();
            let min = locality::minimize_q(&problem, cfg.restarts, cfg.seed);
            rows.push(LocalityRow {
                phi,
                setting,
                theta1: t1,
                theta2: t2,
                free_a,
                free_b,
                q_min: min.q,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Output.

/// Summary of a finished run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Mean coincidence acceptance rate, for sampled experiments.
    pub acceptance: Option<f64>,
    pub wall_time: f64,
    /// One-line description of the headline result.
    pub summary: String,
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `git describe` of the working tree if available, else the crate version.
pub fn version() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .map(|s| format!("{} ({s})", env!("CARGO_PKG_VERSION")))
        .unwrap_or_else(|| env!("CARGO_PKG_VERSION").to_string())
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Runs the experiment and writes its CSV files and `run.meta`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.out_dir)?;
    let out = |name: &str| cfg.out_dir.join(name);
    let mut files = Vec::new();
    let mut acceptance = None;
    let mut gauge = None;
    let summary;
    match cfg.experiment {
        ExperimentKind::PhaseRotation => {
            let rows = phase_rotation_sweep(cfg)?;
            let path = out("phase_rotation.csv");
            write_csv(
                &path,
                &["phi", "p0_emulated", "p0_exact", "n_accepted"],
                rows.iter().map(|r| {
                    vec![float(r.phi), float(r.p0_emulated), float(r.p0_exact), r.n_accepted.to_string()]
                }),
            )?;
            files.push(path);
            acceptance = Some(mean(rows.iter().map(|r| r.n_accepted as f64 / r.n_drawn as f64)));
            let worst = rows.iter().map(|r| (r.p0_emulated - r.p0_exact).abs()).fold(0.0, f64::max);
            summary = format!("{} grid points, max |p0 - exact| = {worst:.3e}", rows.len());
        }
        ExperimentKind::Chsh => {
            let rows = chsh_sweep(cfg)?;
            let path = out("chsh.csv");
            write_csv(
                &path,
                &[
                    "phi",
                    "E_emulated",
                    "E_exact",
                    "n_accepted_QS",
                    "n_accepted_RS",
                    "n_accepted_RT",
                    "n_accepted_QT",
                ],
                rows.iter().map(|r| {
                    let mut row = vec![float(r.phi), float(r.e_emulated), float(r.e_exact)];
                    row.extend(r.n_accepted.iter().map(|n| n.to_string()));
                    row
                }),
            )?;
            files.push(path);
            acceptance = Some(mean(
                rows.iter()
                    .flat_map(|r| r.n_accepted.map(|n| n as f64 / r.n_drawn as f64)),
            ));
            let best = rows.iter().map(|r| r.e_emulated.abs()).fold(0.0, f64::max);
            summary = format!("{} grid points, max |E| = {best:.4}", rows.len());
        }
        ExperimentKind::FreeParticle => {
            let pairs = free_particle_run(cfg)?;
            let last = pairs.last().expect("snapshots include the final step");
            let path = out("free_particle_wavefunction.csv");
            let n = cfg.n;
            write_csv(
                &path,
                &["rho", "x", "phi_exact", "phi_emulated", "t"],
                (0..2 * n).map(|i| {
                    vec![
                        (i / n).to_string(),
                        (i % n).to_string(),
                        float(last.exact.values()[i]),
                        float(last.emulated.values()[i]),
                        float(last.time),
                    ]
                }),
            )?;
            files.push(path);
            let path = out("free_particle_variance.csv");
            let mut rows = Vec::new();
            for p in &pairs {
                let (_, ve) = oracle::position_moments(&oracle::density(p.exact.values()));
                let (_, vm) = oracle::position_moments(&oracle::density(p.emulated.values()));
                rows.push(vec![float(p.time), float(ve), float(vm)]);
            }
            write_csv(&path, &["t", "variance_exact", "variance_emulated"], rows)?;
            files.push(path);
            gauge = Some(GAUGE);
            summary = format!(
                "t = {}: two-norm difference {:.4e}",
                last.time,
                last.metric(Metric::TwoNormDiff)?
            );
        }
        ExperimentKind::Tunneling => {
            let pairs = tunneling_run(cfg)?;
            let quarters = spread_steps(cfg.n_steps(), 4);
            let path = out("tunneling_snapshots.csv");
            let mut rows = Vec::new();
            for p in pairs.iter().filter(|p| quarters.contains(&p.step)) {
                let de = oracle::density(p.exact.values());
                let dm = oracle::density(p.emulated.values());
                for x in 0..cfg.n {
                    rows.push(vec![x.to_string(), float(de[x]), float(dm[x]), float(p.time)]);
                }
            }
            write_csv(&path, &["x", "p_exact", "p_emulated", "t"], rows)?;
            files.push(path);
            let path = out("tunneling_error.csv");
            let rows = pairs
                .iter()
                .map(|p| {
                    Ok(vec![
                        float(p.time),
                        float(p.metric(Metric::TwoNormDiff)?),
                        cfg.n_t.to_string(),
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            write_csv(&path, &["t", "two_norm_diff", "N_t"], rows)?;
            files.push(path);
            gauge = Some(GAUGE);
            let last = pairs.last().expect("snapshots include the final step");
            summary = format!(
                "t = {}: two-norm difference {:.4e}",
                last.time,
                last.metric(Metric::TwoNormDiff)?
            );
        }
        ExperimentKind::Locality => {
            let rows = locality_sweep(cfg)?;
            let path = out("locality.csv");
            write_csv(
                &path,
                &["phi", "setting", "theta1", "theta2", "free_a", "free_b", "q_min"],
                rows.iter().map(|r| {
                    vec![
                        float(r.phi),
                        r.setting.to_string(),
                        float(r.theta1),
                        float(r.theta2),
                        r.free_a.to_string(),
                        r.free_b.to_string(),
                        float(r.q_min),
                    ]
                }),
            )?;
            files.push(path);
            let path = out("locality_swap.csv");
            let mut swap_rows = Vec::new();
            for p in [0.0, 0.5, 1.0] {
                let rep = locality::verify_swap_lemma(p, cfg.restarts, cfg.seed)?;
                swap_rows.push(vec![float(p), rep.contradiction.to_string(), float(rep.q_min)]);
            }
            write_csv(&path, &["p", "contradiction", "q_min"], swap_rows)?;
            files.push(path);
            let first = &rows[0];
            summary = format!(
                "{} at phi = {:.4}: {} free variables, Q_min = {:.4e}",
                first.setting,
                first.phi,
                first.free_a + first.free_b,
                first.q_min
            );
        }
    }

    let wall_time = start.elapsed().as_secs_f64();
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut meta = String::new();
    let _ = writeln!(meta, "version = {}", version());
    let _ = writeln!(meta, "seed = {}", cfg.seed);
    if let Some(a) = acceptance {
        let _ = writeln!(meta, "acceptance_rate = {}", float(a));
    }
    if let Some(g) = gauge {
        let _ = writeln!(meta, "gauge = {}", g.name());
    }
    let _ = writeln!(meta, "wall_time_s = {wall_time:.3}");
    let _ = writeln!(meta, "timestamp_unix = {timestamp}");
    let _ = writeln!(meta, "# config");
    meta.push_str(&cfg.to_text());
    let path = out("run.meta");
    fs::write(&path, meta)?;
    files.push(path);

    Ok(RunReport {
        files,
        acceptance,
        wall_time,
        summary,
    })
}

/// Process exit code for an error: 2 for invalid input, 3 for a degenerate
/// state, 1 for I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DegenerateState(_) => 3,
        Error::Io(_) | Error::Csv(_) => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config_with_comments_and_angles() {
        let cfg = ExperimentConfig::parse(
            "# sweep\nexperiment = chsh\nmode=distribution\nphi_min = -pi/4\nphi_max = 0.5*pi # end\nphi_points = 3\nn_samples = 1e3\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Chsh);
        assert_eq!(cfg.mode, WorldSampling::Distribution);
        assert_eq!(cfg.n_samples, 1000);
        assert_eq!(cfg.phi_grid(), vec![-FRAC_PI_4, FRAC_PI_4 / 2.0, PI / 2.0]);
    }

    #[test]
    fn rejects_bad_fields_by_name() {
        let field = |text: &str| match ExperimentConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("mode = ensemble"), "experiment");
        assert_eq!(field("experiment = foo"), "experiment");
        assert_eq!(field("experiment = chsh\ncolour = red"), "colour");
        assert_eq!(field("experiment = chsh\nseed = 1\nseed = 2"), "seed");
        assert_eq!(field("experiment = chsh\nn_samples = 2.5"), "n_samples");
        assert_eq!(field("experiment = chsh\nphi_min = 1\nphi_max = 0"), "phi_max");
        assert_eq!(field("experiment = free_particle\nN_t = 3"), "N_t");
        assert_eq!(field("experiment = free_particle\nx0 = 7"), "x0");
        assert_eq!(field("experiment = tunneling\nbarrier_hi = 200"), "barrier_hi");
        assert_eq!(field("experiment = tunneling\nD = 2"), "D");
        assert_eq!(field("experiment = chsh\nphi_min = tau"), "phi_min");
    }

    #[test]
    fn config_round_trips_through_text() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Tunneling);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn step_spreads() {
        assert_eq!(spread_steps(500, 50).len(), 51);
        assert_eq!(spread_steps(4000, 4), vec![0, 1000, 2000, 3000, 4000]);
        assert_eq!(spread_steps(3, 10), vec![0, 1, 2, 3]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::DegenerateState("x".into())), 3);
        assert_eq!(exit_code(&Error::config("seed", "bad")), 2);
    }
}
