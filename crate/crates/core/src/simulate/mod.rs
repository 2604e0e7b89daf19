//! Interacting-particle Euler–Maruyama integration.
//!
//! Each replica is an `N`-particle system in which the law `μ_t` is replaced
//! by the equal-weight empirical measure of the replica's own particles. A
//! step freezes that measure, then moves every particle:
//!
//! ```text
//! x_i ← x_i + b(x_i, μ_N) dt + σ(x_i, μ_N) √dt z_i
//! ```
//!
//! Replicas are independent and run in parallel; every normal variate is
//! addressed by `(seed, replica, step, particle, component)`, so ensembles
//! are bit-identical for any worker count.
//!
//! When the noise dimension `l` exceeds the state dimension `d`, the
//! increment `σ z` (with `l` normals) is drawn as `C z'` with `d` normals,
//! where `C` is the Cholesky factor of `σσ*`. Both have law `N(0, σσ*)`.

mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::model::ModelSpec;
use crate::numeric::cholesky_psd;
use crate::rng::{Domain, NoiseKey};

pub use io::{read_csv, read_ensemble, read_packed, write_csv, write_ensemble, write_packed, EnsembleFormat, PACKED_MAGIC};

/// A replica is aborted once any coordinate exceeds this magnitude.
pub const BLOWUP_RADIUS: f64 = 1e8;

/// Initial law `ξ` of every particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitLaw {
    /// Deterministic start `ξ = x₀`.
    Point { x0: Vec<f64> },
    /// Independent `N(mean, cov)` draws.
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// An explicit starting configuration with one row per particle.
    Points { points: Vec<Vec<f64>> },
}

impl InitLaw {
    pub fn point(x0: &[f64]) -> Self {
        InitLaw::Point { x0: x0.to_vec() }
    }

    /// `N(mean·1, var·I)` in `dim` dimensions.
    pub fn gaussian(dim: usize, mean: f64, var: f64) -> Self {
        InitLaw::Gaussian {
            mean: vec![mean; dim],
            cov: (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { var } else { 0.0 }).collect())
                .collect(),
        }
    }

    fn validate(&self, dim: usize, n_particles: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::config("sim.init", msg));
        match self {
            InitLaw::Point { x0 } => {
                if x0.len() != dim {
                    return bad(format!("x0 has length {}, model dim is {dim}", x0.len()));
                }
                if !x0.iter().all(|v| v.is_finite()) {
                    return bad("x0 must be finite".into());
                }
            }
            InitLaw::Gaussian { mean, cov } => {
                if mean.len() != dim || cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
                    return bad(format!("mean and cov must have dim {dim}"));
                }
                let flat: Vec<f64> = cov.concat();
                if !flat.iter().chain(mean).all(|v| v.is_finite()) {
                    return bad("mean and cov must be finite".into());
                }
                for i in 0..dim {
                    for j in 0..i {
                        if (cov[i][j] - cov[j][i]).abs() > 1e-12 * (1.0 + cov[i][j].abs()) {
                            return bad("cov must be symmetric".into());
                        }
                    }
                }
                let mut l = vec![0.0; dim * dim];
                cholesky_psd(&flat, dim, &mut l);
                let mut back = vec![0.0; dim * dim];
                crate::model::gram(&l, dim, dim, &mut back);
                let scale = flat.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
                if back.iter().zip(&flat).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
                    return bad("cov must be positive semidefinite".into());
                }
            }
            InitLaw::Points { points } => {
                if points.len() != n_particles {
                    return bad(format!("{} initial points for {n_particles} particles", points.len()));
                }
                if points.iter().any(|p| p.len() != dim || !p.iter().all(|v| v.is_finite())) {
                    return bad(format!("initial points must be finite vectors of length {dim}"));
                }
            }
        }
        Ok(())
    }
}

fn default_stride() -> usize {
    1
}

/// Simulation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_particles: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub init: InitLaw,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Ceiling on the per-replica second and fourth empirical moments;
    /// exceeding it flags the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_ceiling: Option<f64>,
}

impl SimConfig {
    pub fn new(n_particles: usize, n_paths: usize, dt: f64, t_end: f64, seed: u64, init: InitLaw) -> Self {
        Self {
            n_particles,
            n_paths,
            dt,
            t_end,
            seed,
            init,
            record_stride: 1,
            moment_ceiling: None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.moment_ceiling = Some(ceiling);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("sim.{key}"), msg));
        if self.n_particles < 2 {
            return bad("n_particles", format!("need at least 2 particles, got {}", self.n_particles));
        }
        if self.n_paths < 1 {
            return bad("n_paths", "need at least one replica".into());
        }
        if self.n_paths > u32::MAX as usize || self.n_particles > u32::MAX as usize {
            return bad("n_paths", "replica and particle counts must fit in 32 bits".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end.is_finite() && self.dt <= self.t_end) {
            return bad("t_end", format!("t_end = {} must be at least dt = {}", self.t_end, self.dt));
        }
        if self.n_steps() > u32::MAX as usize {
            return bad("dt", "more than 2³² steps".into());
        }
        if self.record_stride == 0 {
            return bad("record_stride", "stride must be positive".into());
        }
        if let Some(c) = self.moment_ceiling {
            if !(c > 0.0) {
                return bad("moment_ceiling", format!("ceiling must be positive, got {c}"));
            }
        }
        self.init.validate(dim, self.n_particles)
    }

    /// `⌊t_end / dt⌋`, tolerant to representation error in the ratio.
    pub fn n_steps(&self) -> usize {
        let r = self.t_end / self.dt;
        (r * (1.0 + 1e-12)).floor() as usize
    }

    pub fn is_recorded(&self, step: usize) -> bool {
        step % self.record_stride == 0 || step == self.n_steps()
    }

    /// Recorded step indices: every `record_stride`-th step plus the last.
    pub fn recorded_steps(&self) -> Vec<usize> {
        (0..=self.n_steps()).filter(|&s| self.is_recorded(s)).collect()
    }
}

/// Where a replica stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub replica: usize,
    pub step: usize,
    pub message: String,
}

/// How the noise of a run was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngProvenance {
    pub generator: String,
    pub seed: u64,
    pub key_derivation: String,
    pub dynamics_counter: String,
    pub initial_counter: String,
    pub normals: String,
    pub noise_components: usize,
}

impl RngProvenance {
    fn new(seed: u64, noise_components: usize) -> Self {
        Self {
            generator: "philox4x32-10".into(),
            seed,
            key_derivation: "splitmix64(seed xor domain << 56), domain 1 = dynamics, 2 = initial law".into(),
            dynamics_counter: "[replica, step, particle, pair]".into(),
            initial_counter: "[replica, 0, particle, pair]".into(),
            normals: "inverse normal CDF of a 52-bit open-interval uniform".into(),
            noise_components,
        }
    }
}

/// Initial states of one replica, `N × d` row-major.
pub fn draw_initial(config: &SimConfig, dim: usize, replica: usize) -> Vec<f64> {
    let n = config.n_particles;
    match &config.init {
        InitLaw::Point { x0 } => x0.repeat(n),
        InitLaw::Points { points } => points.concat(),
        InitLaw::Gaussian { mean, cov } => {
            let key = NoiseKey::new(config.seed, Domain::InitialLaw);
            let mut l = vec![0.0; dim * dim];
            cholesky_psd(&cov.concat(), dim, &mut l);
            let mut z = vec![0.0; dim];
            let mut out = Vec::with_capacity(n * dim);
            for i in 0..n {
                key.fill_normals(replica as u32, 0, i as u32, &mut z);
                for a in 0..dim {
                    let v: f64 = (0..=a).map(|b| l[a * dim + b] * z[b]).sum();
                    out.push(mean[a] + v);
                }
            }
            out
        }
    }
}

struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    gram: Vec<f64>,
    chol: Vec<f64>,
    z: Vec<f64>,
    inc: Vec<f64>,
}

/// The frozen-measure update shared by every replica.
struct Engine<'a> {
    model: &'a ModelSpec,
    d: usize,
    l: usize,
    reduced: bool,
    dt: f64,
    sqrt_dt: f64,
    key: NoiseKey,
}

impl<'a> Engine<'a> {
    fn new(model: &'a ModelSpec, dt: f64, seed: u64) -> Self {
        let (d, l) = (model.dim_state(), model.dim_noise());
        Self {
            model,
            d,
            l,
            reduced: l > d,
            dt,
            sqrt_dt: dt.sqrt(),
            key: NoiseKey::new(seed, Domain::DynamicsNoise),
        }
    }

    fn noise_components(&self) -> usize {
        if self.reduced {
            self.d
        } else {
            self.l
        }
    }

    fn scratch(&self) -> Scratch {
        let (d, l) = (self.d, self.l);
        Scratch {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * l],
            gram: vec![0.0; d * d],
            chol: vec![0.0; d * d],
            z: vec![0.0; self.noise_components()],
            inc: vec![0.0; d],
        }
    }

    /// Advances `states` by one step. Returns the offending particle on
    /// blow-up.
    fn advance(&self, states: &mut [f64], replica: u32, step: u32, s: &mut Scratch) -> std::result::Result<(), String> {
        let d = self.d;
        let mu = EmpiricalMeasure::uniform_trusted(d, states.to_vec());
        let view = MeasureView::new(&mu);
        let coeffs = self.model.coefficients();
        for (i, x) in mu.points_flat().chunks_exact(d).enumerate() {
            coeffs.drift(x, &view, &mut s.drift);
            self.key.fill_normals(replica, step, i as u32, &mut s.z);
            if self.reduced {
                coeffs.diffusion_gram(x, &view, &mut s.gram);
                if d == 1 {
                    s.inc[0] = s.gram[0].max(0.0).sqrt() * s.z[0];
                } else {
                    cholesky_psd(&s.gram, d, &mut s.chol);
                    for a in 0..d {
                        s.inc[a] = (0..=a).map(|b| s.chol[a * d + b] * s.z[b]).sum();
                    }
                }
            } else {
                coeffs.diffusion(x, &view, &mut s.sigma);
                for a in 0..d {
                    s.inc[a] = (0..self.l).map(|k| s.sigma[a * self.l + k] * s.z[k]).sum();
                }
            }
            for a in 0..d {
                let next = x[a] + s.drift[a] * self.dt + self.sqrt_dt * s.inc[a];
                if !next.is_finite() || next.abs() > BLOWUP_RADIUS {
                    return Err(format!("particle {i} reached {next} (coordinate {a})"));
                }
                states[i * d + a] = next;
            }
        }
        Ok(())
    }
}

/// One Euler–Maruyama step with caller-supplied standard normals
/// (`noise` is `N × l` row-major). The empirical measure of `states` is
/// frozen for the whole step.
pub fn step(states: &[f64], model: &ModelSpec, dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    let (d, l) = (model.dim_state(), model.dim_noise());
    if states.is_empty() || states.len() % d != 0 {
        return Err(Error::structural(format!("state buffer of length {} is not N × {d}", states.len())));
    }
    let n = states.len() / d;
    if noise.len() != n * l {
        return Err(Error::structural(format!("noise has length {}, expected {n} × {l}", noise.len())));
    }
    if !noise.iter().all(|z| z.is_finite()) {
        return Err(Error::usage("noise entries must be finite"));
    }
    if !(dt > 0.0) {
        return Err(Error::usage(format!("dt must be positive, got {dt}")));
    }
    let mu = EmpiricalMeasure::from_flat(d, states.to_vec(), vec![1.0 / n as f64; n])?;
    let view = MeasureView::new(&mu);
    let coeffs = model.coefficients();
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * l];
    let mut out = states.to_vec();
    for i in 0..n {
        let x = mu.point(i);
        coeffs.drift(x, &view, &mut b);
        coeffs.diffusion(x, &view, &mut sigma);
        let z = &noise[i * l..(i + 1) * l];
        for a in 0..d {
            let inc: f64 = (0..l).map(|k| sigma[a * l + k] * z[k]).sum();
            let next = x[a] + b[a] * dt + dt.sqrt() * inc;
            if !next.is_finite() {
                return Err(Error::Integration {
                    replica: 0,
                    step: 0,
                    message: format!("particle {i} update is {next}"),
                });
            }
            out[i * d + a] = next;
        }
    }
    Ok(out)
}

/// Receives the states of one replica at every recorded step.
pub trait StepObserver: Send {
    fn observe(&mut self, step: usize, time: f64, states: &[f64]) -> Result<()>;
}

/// Result of one replica under [`run_replicas`].
pub struct ReplicaRun<O> {
    pub replica: usize,
    pub observer: O,
    pub failure: Option<ReplicaFailure>,
}

/// Runs every replica of `config`, feeding recorded frames to a fresh
/// observer per replica. Output order is replica order.
pub fn run_replicas<O, F>(model: &ModelSpec, config: &SimConfig, make_observer: F) -> Result<Vec<ReplicaRun<O>>>
where
    O: StepObserver,
    F: Fn(usize) -> O + Sync,
{
    let d = model.dim_state();
    config.validate(d)?;
    let engine = Engine::new(model, config.dt, config.seed);
    let n_steps = config.n_steps();
    (0..config.n_paths)
        .into_par_iter()
        .map(|r| {
            let mut observer = make_observer(r);
            let mut states = draw_initial(config, d, r);
            let mut scratch = engine.scratch();
            observer.observe(0, 0.0, &states)?;
            let mut failure = None;
            for k in 0..n_steps {
                if let Err(message) = engine.advance(&mut states, r as u32, k as u32, &mut scratch) {
                    failure = Some(ReplicaFailure {
                        replica: r,
                        step: k + 1,
                        message,
                    });
                    break;
                }
                if config.is_recorded(k + 1) {
                    observer.observe(k + 1, (k + 1) as f64 * config.dt, &states)?;
                }
            }
            Ok(ReplicaRun {
                replica: r,
                observer,
                failure,
            })
        })
        .collect()
}

struct Recorder {
    frames: Vec<f64>,
}

impl StepObserver for Recorder {
    fn observe(&mut self, _step: usize, _time: f64, states: &[f64]) -> Result<()> {
        self.frames.extend_from_slice(states);
        Ok(())
    }
}

/// `M` replicas of an `N`-particle system on a recorded time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    dim: usize,
    n_particles: usize,
    times: Vec<f64>,
    /// Per replica, frames × particles × coordinates; failed replicas hold
    /// the frames recorded before the failure.
    replicas: Vec<Vec<f64>>,
    failures: Vec<ReplicaFailure>,
    pub model_label: String,
    pub config: Option<SimConfig>,
    pub provenance: Option<RngProvenance>,
    pub warnings: Vec<String>,
}

impl PathEnsemble {
    /// Builds an ensemble from explicit frames, for fixtures and readers.
    pub fn from_frames(dim: usize, n_particles: usize, times: Vec<f64>, replicas: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_parts(dim, n_particles, times, replicas, Vec::new())
    }

    pub(crate) fn from_parts(
        dim: usize,
        n_particles: usize,
        times: Vec<f64>,
        replicas: Vec<Vec<f64>>,
        failures: Vec<ReplicaFailure>,
    ) -> Result<Self> {
        if dim == 0 || n_particles == 0 || times.is_empty() || replicas.is_empty() {
            return Err(Error::structural("ensemble needs a nonempty grid, particles and replicas"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::structural("ensemble times must be strictly increasing"));
        }
        let frame = dim * n_particles;
        for (r, data) in replicas.iter().enumerate() {
            let failed = failures.iter().any(|f| f.replica == r);
            if data.len() % frame != 0 || data.len() / frame > times.len() || (!failed && data.len() / frame != times.len()) {
                return Err(Error::structural(format!("replica {r} has {} values, frame size {frame}", data.len())));
            }
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::structural(format!("replica {r} has non-finite states")));
            }
        }
        Ok(Self {
            dim,
            n_particles,
            times,
            replicas,
            failures,
            model_label: String::new(),
            config: None,
            provenance: None,
            warnings: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    /// Number of replicas, including failed ones.
    pub fn n_paths(&self) -> usize {
        self.replicas.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn failures(&self) -> &[ReplicaFailure] {
        &self.failures
    }

    pub fn is_failed(&self, replica: usize) -> bool {
        self.failures.iter().any(|f| f.replica == replica)
    }

    /// Indices of replicas that completed.
    pub fn completed(&self) -> Vec<usize> {
        (0..self.n_paths()).filter(|&r| !self.is_failed(r)).collect()
    }

    /// Number of frames stored for `replica`.
    pub fn n_frames(&self, replica: usize) -> usize {
        self.replicas[replica].len() / (self.dim * self.n_particles)
    }

    /// States of `replica` at recorded time index `k`, `N × d` row-major.
    pub fn frame(&self, replica: usize, k: usize) -> &[f64] {
        let size = self.dim * self.n_particles;
        &self.replicas[replica][k * size..(k + 1) * size]
    }

    /// Path of particle `i` in `replica`, one `d`-vector per recorded time.
    pub fn particle_path(&self, replica: usize, i: usize) -> Vec<&[f64]> {
        (0..self.n_frames(replica))
            .map(|k| &self.frame(replica, k)[i * self.dim..(i + 1) * self.dim])
            .collect()
    }

    /// Largest per-replica empirical second and fourth moments over the
    /// recorded grid.
    pub fn moment_maxima(&self) -> (f64, f64) {
        let mut m2: f64 = 0.0;
        let mut m4: f64 = 0.0;
        for r in 0..self.n_paths() {
            for k in 0..self.n_frames(r) {
                let (a, b) = frame_moments(self.frame(r, k), self.dim);
                m2 = m2.max(a);
                m4 = m4.max(b);
            }
        }
        (m2, m4)
    }
}

fn frame_moments(frame: &[f64], dim: usize) -> (f64, f64) {
    let n = (frame.len() / dim) as f64;
    let (mut s2, mut s4) = (0.0, 0.0);
    for x in frame.chunks_exact(dim) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        s2 += r2;
        s4 += r2 * r2;
    }
    (s2 / n, s4 / n)
}

/// Simulates `config.n_paths` replicas and records them. Replicas that blow
/// up are marked failed; an ensemble in which every replica failed is an
/// integration error.
pub fn run_ensemble(model: &ModelSpec, config: &SimConfig) -> Result<PathEnsemble> {
    let d = model.dim_state();
    let frames_per = config.recorded_steps().len();
    let frame = d * config.n_particles;
    let runs = run_replicas(model, config, |_| Recorder {
        frames: Vec::with_capacity(frames_per * frame),
    })?;
    let mut failures = Vec::new();
    let mut replicas = Vec::with_capacity(runs.len());
    for run in runs {
        if let Some(f) = run.failure {
            failures.push(f);
        }
        replicas.push(run.observer.frames);
    }
    if failures.len() == config.n_paths {
        let f = &failures[0];
        return Err(Error::Integration {
            replica: f.replica,
            step: f.step,
            message: format!("every replica failed; first: {}", f.message),
        });
    }
    let times = config.recorded_steps().iter().map(|&s| s as f64 * config.dt).collect();
    let mut ens = PathEnsemble::from_parts(d, config.n_particles, times, replicas, failures)?;
    ens.model_label = model.label().to_string();
    ens.provenance = Some(RngProvenance::new(config.seed, Engine::new(model, config.dt, config.seed).noise_components()));
    ens.config = Some(config.clone());
    ens.warnings = run_warnings(&ens, config);
    Ok(ens)
}

/// Fourth-moment audit of the initial draw, moment ceiling, failures.
fn run_warnings(ens: &PathEnsemble, config: &SimConfig) -> Vec<String> {
    let mut out = Vec::new();
    if let InitLaw::Points { .. } = config.init {
        let frame = ens.frame(0, 0);
        let r4: Vec<f64> = frame
            .chunks_exact(ens.dim)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().powi(2))
            .collect();
        let total: f64 = r4.iter().sum();
        let top = r4.iter().fold(0.0f64, |a, &b| a.max(b));
        if !total.is_finite() || (total > 0.0 && top / total > 0.5) {
            out.push(format!(
                "initial fourth moment {:.6e} is dominated by one particle; finiteness of E|ξ|⁴ is not verified",
                total / r4.len() as f64
            ));
        }
    }
    if let Some(c) = config.moment_ceiling {
        let (m2, m4) = ens.moment_maxima();
        if m2 > c || m4 > c {
            out.push(format!("moment ceiling {c} exceeded: max second moment {m2:.6e}, max fourth moment {m4:.6e}"));
        }
    }
    for f in &ens.failures {
        out.push(format!("replica {} aborted at step {}: {}", f.replica, f.step, f.message));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, m: usize, dt: f64, t: f64, init: InitLaw) -> SimConfig {
        SimConfig::new(n, m, dt, t, 17, init)
    }

    #[test]
    fn step_examples() {
        let ode = ModelSpec::linear(-1.0, 0.0, 1);
        assert_eq!(step(&[1.0, 1.0], &ode, 0.1, &[0.3, -0.2]).unwrap(), vec![0.9, 0.9]);
        let zero = ModelSpec::zero(1);
        assert_eq!(step(&[1.5, -2.0], &zero, 0.1, &[0.3, -0.2]).unwrap(), vec![1.5, -2.0]);
        let ex = ModelSpec::example61(0.25, 3);
        let noise = [0.5, -1.0, 2.0, 1.0, 1.0, 1.0];
        assert_eq!(step(&[0.0, 0.0], &ex, 0.01, &noise).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn step_shape_errors() {
        let ode = ModelSpec::linear(-1.0, 0.0, 1);
        assert!(step(&[1.0, 1.0], &ode, 0.1, &[0.3]).is_err());
        assert!(step(&[1.0], &ode, 0.1, &[f64::NAN]).is_err());
    }

    #[test]
    fn config_grid() {
        let c = cfg(2, 1, 0.1, 1.0, InitLaw::point(&[0.0])).with_stride(3);
        assert_eq!(c.n_steps(), 10);
        assert_eq!(c.recorded_steps(), vec![0, 3, 6, 9, 10]);
        assert!(cfg(1, 1, 0.1, 1.0, InitLaw::point(&[0.0])).validate(1).is_err());
        assert!(cfg(2, 1, 2.0, 1.0, InitLaw::point(&[0.0])).validate(1).is_err());
        assert!(cfg(2, 1, 0.1, 1.0, InitLaw::point(&[0.0, 1.0])).validate(1).is_err());
        let not_psd = InitLaw::Gaussian {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        };
        assert!(cfg(2, 1, 0.1, 1.0, not_psd).validate(2).is_err());
    }

    #[test]
    fn zero_model_keeps_initial_draw() {
        let c = cfg(5, 3, 0.1, 1.0, InitLaw::gaussian(1, 0.0, 1.0));
        let ens = run_ensemble(&ModelSpec::zero(1), &c).unwrap();
        for r in 0..3 {
            let first = ens.frame(r, 0).to_vec();
            assert_eq!(first, draw_initial(&c, 1, r));
            for k in 0..ens.n_frames(r) {
                assert_eq!(ens.frame(r, k), &first[..]);
            }
        }
        assert_ne!(ens.frame(0, 0), ens.frame(1, 0));
    }

    #[test]
    fn deterministic_mean_field_decay() {
        let c = cfg(4, 1, 1e-3, 2.0, InitLaw::point(&[1.0])).with_stride(100);
        let ens = run_ensemble(&ModelSpec::meanfield_ou(0.25, 0.0), &c).unwrap();
        for (k, t) in ens.times().iter().enumerate() {
            for x in ens.frame(0, k) {
                assert!((x - (-0.75 * t).exp()).abs() < 1e-3 * t.max(1e-3));
            }
        }
    }

    #[test]
    fn runs_are_repeatable_and_thread_independent() {
        let model = ModelSpec::example61(0.25, 5);
        let c = cfg(16, 6, 0.01, 0.5, InitLaw::gaussian(1, 0.0, 1.0)).with_stride(5);
        let a = run_ensemble(&model, &c).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| run_ensemble(&model, &c).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn permuting_initial_points_permutes_paths() {
        let model = ModelSpec::example61(0.25, 4);
        let pts = vec![vec![0.5], vec![-1.0], vec![2.0]];
        let perm = vec![vec![2.0], vec![0.5], vec![-1.0]];
        let base = cfg(3, 1, 0.01, 0.3, InitLaw::Points { points: pts });
        let swapped = cfg(3, 1, 0.01, 0.3, InitLaw::Points { points: perm });
        // Noise is addressed by particle index; without noise the scheme is
        // exactly exchangeable.
        let det = ModelSpec::meanfield_ou(0.25, 0.0);
        let a = run_ensemble(&det, &base).unwrap();
        let b = run_ensemble(&det, &swapped).unwrap();
        let last = a.n_frames(0) - 1;
        let (fa, fb) = (a.frame(0, last), b.frame(0, last));
        assert_eq!((fa[0], fa[1], fa[2]), (fb[1], fb[2], fb[0]));
        assert!(run_ensemble(&model, &base).is_ok());
    }

    #[test]
    fn blowup_marks_replica_and_full_failure_errors() {
        let c = cfg(2, 2, 0.1, 100.0, InitLaw::point(&[1.0]));
        let err = run_ensemble(&ModelSpec::linear(5.0, 0.0, 1), &c).unwrap_err();
        match err {
            Error::Integration { step, .. } => assert!(step > 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn moment_ceiling_flags_run() {
        let c = cfg(2, 1, 0.1, 1.0, InitLaw::point(&[3.0])).with_ceiling(1.0);
        let ens = run_ensemble(&ModelSpec::zero(1), &c).unwrap();
        assert!(ens.warnings.iter().any(|w| w.contains("ceiling")));
    }

    #[test]
    fn reduced_noise_has_the_right_variance() {
        // One step from x = π/2 with l = 1 and l = 3 components: the increment
        // variance is ‖σ‖² dt in both cases.
        for l in [1usize, 3] {
            let model = ModelSpec::example61(0.0, l);
            let c = cfg(20_000, 1, 0.01, 0.01, InitLaw::point(&[std::f64::consts::FRAC_PI_2]));
            let ens = run_ensemble(&model, &c).unwrap();
            let x0 = std::f64::consts::FRAC_PI_2;
            let incs: Vec<f64> = ens.frame(0, 1).iter().map(|x| x - x0 + x0 * 0.01).collect();
            let var = incs.iter().map(|v| v * v).sum::<f64>() / incs.len() as f64;
            let expect: f64 = (1..=l).map(|k| ((k as f64) * x0).sin().powi(2) / (k as f64).powi(3)).sum::<f64>() * 0.01;
            assert!((var / expect - 1.0).abs() < 0.05, "l={l}: {var} vs {expect}");
        }
    }
}
