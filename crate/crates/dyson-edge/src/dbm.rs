//! Euler–Maruyama integration of β-Dyson Brownian motion
//!
//! dλ_i = √(2/(βN)) dB_i + (1/N) Σ_{j≠i} dt/(λ_i − λ_j) − V′(λ_i)/2 dt
//!
//! with particles kept in descending order. The repulsion between nearest
//! neighbours is taken implicitly, which keeps the order for any noise and
//! stays accurate when a pair comes very close (at β = 1 gaps of 1e-9 and
//! below are routine). Everything else is explicit. A step whose explicit
//! move exceeds a fraction of the neighbour gap is split in two, and the
//! Gaussian increment is refined by Brownian-bridge halving so the noise
//! path stays the same.

use crate::model::{Derivatives, ModelError, ParticleState, Potential};
use crate::seeds::{derive_seed, fill_normals, rng_from_seed, Purpose};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const MAX_HALVINGS: u32 = 40;
pub const DEFAULT_GUARD: f64 = 0.5;
const COLLISION_REL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("particles {index} and {} collided (gap {gap:e})", index + 1)]
    CollisionDetected { index: usize, gap: f64 },
    #[error("step needed more than {MAX_HALVINGS} halvings")]
    SubstepLimitExceeded,
    #[error("at t = {t}: {source}")]
    AtTime { t: f64, source: Box<DbmError> },
    #[error("invalid sample times: {0}")]
    SampleTimes(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbmConfig {
    pub n: usize,
    pub beta: f64,
    pub potential: Potential,
    pub dt: f64,
    pub t_end: f64,
    pub collision_guard: f64,
    pub seed: u64,
}

impl DbmConfig {
    pub fn new(n: usize, beta: f64, potential: Potential, dt: f64, t_end: f64, seed: u64) -> Self {
        Self { n, beta, potential, dt, t_end, collision_guard: DEFAULT_GUARD, seed }
    }

    pub fn validate(&self) -> Result<(), DbmError> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("n must be positive".to_string());
        }
        if !(self.beta >= 1.0) {
            errs.push(format!("beta must be >= 1, got {}", self.beta));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            errs.push(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if !(self.collision_guard > 0.0 && self.collision_guard < 1.0) {
            errs.push(format!("collision_guard must lie in (0, 1), got {}", self.collision_guard));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(DbmError::InvalidConfig(errs.join("; ")))
        }
    }

    /// SHA-256 of the canonical text form, seed excluded.
    pub fn hash(&self) -> String {
        let text = format!(
            "n={};beta={:e};coeffs={:?};radius={:e};dt={:e};t_end={:e};guard={:e}",
            self.n,
            self.beta,
            self.potential.coeffs(),
            self.potential.radius(),
            self.dt,
            self.t_end,
            self.collision_guard
        );
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn noise_scale(&self) -> f64 {
        (2.0 / (self.beta * self.n as f64)).sqrt()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<ParticleState>,
    pub seed: u64,
    pub config_hash: String,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Option<&ParticleState> {
        self.snapshots.iter().find(|s| s.t == t)
    }

    pub fn last(&self) -> &ParticleState {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,index,lambda")?;
        for s in &self.snapshots {
            for (i, l) in s.particles.iter().enumerate() {
                writeln!(w, "{},{},{}", s.t, i + 1, l)?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

fn collision_check(p: &[f64]) -> Result<(), DbmError> {
    let scale = p.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for (i, w) in p.windows(2).enumerate() {
        let gap = w[0] - w[1];
        if !(gap >= COLLISION_REL * scale) {
            return Err(DbmError::CollisionDetected { index: i + 1, gap });
        }
    }
    Ok(())
}

/// Drift into `out`, without validation.
///
/// Each pair is visited once. The repulsion felt by particle i from its right
/// and from its left is accumulated in two separate same-sign sums, so no
/// cancellation happens inside a sum.
pub fn drift_into(p: &[f64], der: &Derivatives, out: &mut [f64], left: &mut [f64]) {
    let n = p.len();
    out[..n].iter_mut().for_each(|x| *x = 0.0);
    left[..n].iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        let li = p[i];
        let mut acc = 0.0;
        let tail = &p[i + 1..];
        let sink = &mut left[i + 1..n];
        for (lj, s) in tail.iter().zip(sink.iter_mut()) {
            let inv = 1.0 / (li - lj);
            acc += inv;
            *s += inv;
        }
        out[i] = acc;
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        out[i] = (out[i] - left[i]) * inv_n - 0.5 * der.at(1, p[i]);
    }
}

/// Like [`drift_into`] with the nearest-neighbour repulsion left out.
fn far_drift_into(p: &[f64], der: &Derivatives, out: &mut [f64], left: &mut [f64]) {
    let n = p.len();
    out[..n].iter_mut().for_each(|x| *x = 0.0);
    left[..n].iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        let li = p[i];
        let mut acc = 0.0;
        if i + 2 < n {
            let tail = &p[i + 2..];
            let sink = &mut left[i + 2..n];
            for (lj, s) in tail.iter().zip(sink.iter_mut()) {
                let inv = 1.0 / (li - lj);
                acc += inv;
                *s += inv;
            }
        }
        out[i] = acc;
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        out[i] = (out[i] - left[i]) * inv_n - 0.5 * der.at(1, p[i]);
    }
}

/// driftᵢ = (1/N) Σ_{j≠i} 1/(λᵢ − λⱼ) − V′(λᵢ)/2.
pub fn drift(state: &ParticleState, potential: &Potential) -> Result<Vec<f64>, DbmError> {
    collision_check(&state.particles)?;
    let n = state.n();
    let mut out = vec![0.0; n];
    let mut left = vec![0.0; n];
    drift_into(&state.particles, &potential.derivatives(1), &mut out, &mut left);
    Ok(out)
}

struct Scratch {
    drift: Vec<f64>,
    left: Vec<f64>,
    proposal: Vec<f64>,
    target: Vec<f64>,
    newton: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            drift: vec![0.0; n],
            left: vec![0.0; n],
            proposal: vec![0.0; n],
            target: vec![0.0; n],
            newton: vec![0.0; 4 * n],
        }
    }
}

/// Integration parameters shared by coupled slices.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub sigma: f64,
    pub guard: f64,
}

/// Advances every slice over `dt` driven by the same Brownian increment
/// `dw` (already scaled by √dt). If any slice violates the gap guard, all
/// slices are halved together, so coupled slices never see different noise.
pub fn advance_coupled<R: Rng + ?Sized>(
    slices: &mut [&mut Vec<f64>],
    derivs: &[&Derivatives],
    params: StepParams,
    dt: f64,
    dw: &[f64],
    rng: &mut R,
) -> Result<(), DbmError> {
    let n = dw.len();
    let mut scratch: Vec<Scratch> = (0..slices.len()).map(|_| Scratch::new(n)).collect();
    advance_rec(slices, derivs, params, dt, dw, rng, &mut scratch, 0)
}

#[allow(clippy::too_many_arguments)]
fn advance_rec<R: Rng + ?Sized>(
    slices: &mut [&mut Vec<f64>],
    derivs: &[&Derivatives],
    params: StepParams,
    dt: f64,
    dw: &[f64],
    rng: &mut R,
    scratch: &mut [Scratch],
    depth: u32,
) -> Result<(), DbmError> {
    let mut ok = true;
    for ((p, der), s) in slices.iter().zip(derivs).zip(scratch.iter_mut()) {
        collision_check(p)?;
        if !ok {
            continue;
        }
        far_drift_into(p, der, &mut s.drift, &mut s.left);
        let n = p.len();
        for i in 0..n {
            s.target[i] = p[i] + s.drift[i] * dt + params.sigma * dw[i];
        }
        ok = move_guard_holds(p, &s.drift, dt, params.guard)
            && implicit_neighbours(p, &s.target[..n], dt / n as f64, &mut s.proposal[..n], &mut s.newton);
    }
    if ok {
        for (p, s) in slices.iter_mut().zip(scratch.iter()) {
            let n = p.len();
            p.copy_from_slice(&s.proposal[..n]);
        }
        return Ok(());
    }
    if depth >= MAX_HALVINGS {
        return Err(DbmError::SubstepLimitExceeded);
    }
    // Brownian bridge: W(dt/2) given W(dt) = dw is dw/2 + (√dt/2) ξ.
    let mut xi = vec![0.0; dw.len()];
    fill_normals(rng, &mut xi);
    let half = 0.5 * dt.sqrt();
    let first: Vec<f64> = dw.iter().zip(&xi).map(|(w, x)| 0.5 * w + half * x).collect();
    let second: Vec<f64> = dw.iter().zip(&first).map(|(w, a)| w - a).collect();
    advance_rec(slices, derivs, params, 0.5 * dt, &first, rng, scratch, depth + 1)?;
    advance_rec(slices, derivs, params, 0.5 * dt, &second, rng, scratch, depth + 1)
}

/// The explicit part of every move must stay within `guard` times the
/// distance to the nearest neighbour.
fn move_guard_holds(p: &[f64], drift: &[f64], dt: f64, guard: f64) -> bool {
    let n = p.len();
    (0..n).all(|i| {
        let mut gap = f64::INFINITY;
        if i > 0 {
            gap = gap.min(p[i - 1] - p[i]);
        }
        if i + 1 < n {
            gap = gap.min(p[i] - p[i + 1]);
        }
        (drift[i] * dt).abs() <= guard * gap
    })
}

/// Solves x = y + c·a(x), where a_i(x) = 1/(x_i − x_{i+1}) − 1/(x_{i−1} − x_i)
/// is the nearest-neighbour repulsion, by damped Newton on the strictly
/// convex function ½|x − y|² − c Σ log(x_k − x_{k+1}). Starts from the
/// ordered `start`, so every iterate stays ordered. Returns false if Newton
/// does not converge.
fn implicit_neighbours(start: &[f64], y: &[f64], c: f64, x: &mut [f64], work: &mut [f64]) -> bool {
    let n = start.len();
    x.copy_from_slice(start);
    if n == 1 {
        x[0] = y[0];
        return true;
    }
    let (grad, rest) = work.split_at_mut(n);
    let (diag, rest) = rest.split_at_mut(n);
    let (off, trial) = rest.split_at_mut(n);
    let objective = |x: &[f64]| -> f64 {
        let mut f = 0.0;
        for i in 0..n {
            f += 0.5 * (x[i] - y[i]) * (x[i] - y[i]);
        }
        for k in 0..n - 1 {
            f -= c * (x[k] - x[k + 1]).ln();
        }
        f
    };
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut f = objective(x);
    for _ in 0..NEWTON_MAX_ITER {
        for i in 0..n {
            grad[i] = x[i] - y[i];
            diag[i] = 1.0;
        }
        for k in 0..n - 1 {
            let g = x[k] - x[k + 1];
            let a = c / g;
            let h = a / g;
            grad[k] -= a;
            grad[k + 1] += a;
            diag[k] += h;
            diag[k + 1] += h;
            off[k] = -h;
        }
        // Thomas algorithm; the matrix is symmetric and diagonally dominant.
        // The solution overwrites grad with the Newton direction.
        for k in 1..n {
            let m = off[k - 1] / diag[k - 1];
            diag[k] -= m * off[k - 1];
            grad[k] -= m * grad[k - 1];
        }
        grad[n - 1] /= diag[n - 1];
        for k in (0..n - 1).rev() {
            grad[k] = (grad[k] - off[k] * grad[k + 1]) / diag[k];
        }
        let size = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !size.is_finite() {
            return false;
        }
        let mut step = 1.0;
        loop {
            for i in 0..n {
                trial[i] = x[i] - step * grad[i];
            }
            if trial.windows(2).all(|w| w[0] > w[1]) {
                let ft = objective(trial);
                if ft <= f || step * size <= 4.0 * f64::EPSILON * scale {
                    f = ft;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                return false;
            }
        }
        x.copy_from_slice(trial);
        if step * size <= 4.0 * f64::EPSILON * scale {
            return true;
        }
    }
    false
}

/// One Euler–Maruyama step of length `dt` with standard normal `noise`.
/// Extra normals for bridge refinement come from `rng`.
pub fn step<R: Rng + ?Sized>(
    state: &ParticleState,
    dt: f64,
    noise: &[f64],
    config: &DbmConfig,
    rng: &mut R,
) -> Result<ParticleState, DbmError> {
    if noise.len() != state.n() {
        return Err(DbmError::InvalidConfig(format!("noise has {} entries for {} particles", noise.len(), state.n())));
    }
    let der = config.potential.derivatives(1);
    let mut p = state.particles.clone();
    let dw: Vec<f64> = noise.iter().map(|x| x * dt.sqrt()).collect();
    let params = StepParams { sigma: config.noise_scale(), guard: config.collision_guard };
    advance_coupled(&mut [&mut p], &[&der], params, dt, &dw, rng)?;
    Ok(ParticleState { t: state.t + dt, beta: state.beta, particles: p })
}

/// Splits [from, to] into steps no longer than `dt`; the last lands on `to`.
pub fn step_grid(from: f64, to: f64, dt: f64) -> Vec<f64> {
    let span = to - from;
    if span <= 0.0 {
        return vec![];
    }
    let k = (span / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = span / k as f64;
    (1..=k).map(|j| if j == k { to } else { from + h * j as f64 }).collect()
}

fn check_samples(initial_t: f64, t_end: f64, sample_times: &[f64]) -> Result<Vec<f64>, DbmError> {
    let times: Vec<f64> = if sample_times.is_empty() { vec![initial_t + t_end] } else { sample_times.to_vec() };
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DbmError::SampleTimes("must be strictly increasing".into()));
    }
    let hi = initial_t + t_end;
    if let Some(t) = times.iter().find(|&&t| !(t >= initial_t && t <= hi * (1.0 + 1e-12) + 1e-15)) {
        return Err(DbmError::SampleTimes(format!("{t} outside [{initial_t}, {hi}]")));
    }
    Ok(times)
}

/// Integrates from `initial` and records the state at each sample time.
/// Sample times are absolute and must lie in [initial.t, initial.t + t_end].
pub fn simulate(config: &DbmConfig, initial: &ParticleState, sample_times: &[f64]) -> Result<Trajectory, DbmError> {
    config.validate()?;
    if initial.n() != config.n {
        return Err(DbmError::InvalidConfig(format!(
            "initial state has {} particles, config says {}",
            initial.n(),
            config.n
        )));
    }
    let times = check_samples(initial.t, config.t_end, sample_times)?;
    let mut rng = rng_from_seed(config.seed);
    let der = config.potential.derivatives(1);
    let params = StepParams { sigma: config.noise_scale(), guard: config.collision_guard };
    let n = config.n;
    let mut p = initial.particles.clone();
    let mut t = initial.t;
    let mut noise = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut scratch = vec![Scratch::new(n)];
    let mut snapshots = Vec::with_capacity(times.len());
    for &ts in &times {
        for next in step_grid(t, ts, config.dt) {
            let h = next - t;
            fill_normals(&mut rng, &mut noise);
            let sq = h.sqrt();
            for (d, z) in dw.iter_mut().zip(&noise) {
                *d = z * sq;
            }
            advance_rec(&mut [&mut p], &[&der], params, h, &dw, &mut rng, &mut scratch, 0)
                .map_err(|e| DbmError::AtTime { t, source: Box::new(e) })?;
            t = next;
        }
        let snap = ParticleState::new(ts, initial.beta, p.clone())
            .map_err(|e| DbmError::AtTime { t: ts, source: Box::new(e.into()) })?;
        snapshots.push(snap);
    }
    Ok(Trajectory { snapshots, seed: config.seed, config_hash: config.hash() })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SupportReport {
    pub bound: f64,
    pub snapshots: usize,
    pub exceeding: usize,
    pub fraction: f64,
    pub max_abs: f64,
    pub violated: bool,
}

/// Fraction of snapshots whose extreme particle lies beyond `bound`.
pub fn support_check(traj: &Trajectory, bound: f64) -> SupportReport {
    let mut exceeding = 0;
    let mut max_abs: f64 = 0.0;
    for s in &traj.snapshots {
        let m = s.particles[0].abs().max(s.particles[s.n() - 1].abs());
        max_abs = max_abs.max(m);
        if m >= bound {
            exceeding += 1;
        }
    }
    let total = traj.snapshots.len();
    SupportReport {
        bound,
        snapshots: total,
        exceeding,
        fraction: if total == 0 { 0.0 } else { exceeding as f64 / total as f64 },
        max_abs,
        violated: exceeding > 0,
    }
}

/// Runs `count` independent trajectories on a pool of `workers` threads.
///
/// Trajectory k uses the seed `derive_seed(master, k, Trajectory)` and the
/// initial state `initial(k)`. Results come back in index order regardless of
/// scheduling.
pub fn run_ensemble<F>(
    base: &DbmConfig,
    master_seed: u64,
    count: usize,
    workers: usize,
    sample_times: &[f64],
    initial: F,
) -> Vec<Result<Trajectory, DbmError>>
where
    F: Fn(usize) -> Result<ParticleState, DbmError> + Sync,
{
    let job = |k: usize| {
        let mut cfg = base.clone();
        cfg.seed = derive_seed(master_seed, k as u64, Purpose::Trajectory);
        let init = initial(k)?;
        simulate(&cfg, &init, sample_times)
    };
    map_indexed(count, workers, job)
}

/// Parallel map over 0..count with results in index order.
pub fn map_indexed<T, F>(count: usize, workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1);
    if workers == 1 {
        return (0..count).map(job).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&job).collect()),
        Err(_) => (0..count).map(job).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SquareRootMeasure;

    fn state(p: Vec<f64>) -> ParticleState {
        ParticleState::new(0.0, 2.0, p).unwrap()
    }

    #[test]
    fn two_particle_drift() {
        let d = drift(&state(vec![1.0, -1.0]), &Potential::quadratic()).unwrap();
        assert!((d[0] + 0.25).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15);
        let a = 0.3;
        let d = drift(&state(vec![a, -a]), &Potential::zero()).unwrap();
        assert!((d[0] - 1.0 / (4.0 * a)).abs() < 1e-14);
        assert_eq!(d[0], -d[1]);
    }

    #[test]
    fn equilibrium_drift_nearly_cancels() {
        let n = 500;
        let sc = SquareRootMeasure::semicircle();
        let p: Vec<f64> = (0..n).map(|i| sc.quantile_from_edge((i as f64 + 0.5) / n as f64)).collect();
        let d = drift(&state(p), &Potential::quadratic()).unwrap();
        let worst = d[49..450].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(worst < 0.5, "{worst}");
    }

    #[test]
    fn collision_is_reported() {
        let s = ParticleState { t: 0.0, beta: 2.0, particles: vec![1.0, 1.0] };
        assert!(matches!(drift(&s, &Potential::zero()), Err(DbmError::CollisionDetected { .. })));
    }

    #[test]
    fn pure_ou_step() {
        let cfg = DbmConfig::new(1, 2.0, Potential::quadratic(), 0.01, 0.01, 0);
        let s = state(vec![1.0]);
        let out = step(&s, 0.01, &[0.0], &cfg, &mut rng_from_seed(0)).unwrap();
        assert!((out.particles[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn repulsion_opens_gap() {
        let cfg = DbmConfig::new(2, 2.0, Potential::zero(), 1e-3, 1e-3, 0);
        let s = state(vec![0.1, -0.1]);
        let out = step(&s, 1e-3, &[0.0, 0.0], &cfg, &mut rng_from_seed(0)).unwrap();
        assert!(out.particles[0] - out.particles[1] > 0.2);
    }

    #[test]
    fn large_noise_keeps_order() {
        let cfg = DbmConfig::new(3, 2.0, Potential::zero(), 1e-3, 1.0, 0);
        let s = state(vec![0.01, 0.0, -0.01]);
        let out = step(&s, 1e-3, &[-3.0, 0.0, 3.0], &cfg, &mut rng_from_seed(5)).unwrap();
        assert!(out.is_sorted());
    }

    #[test]
    fn implicit_pair_matches_quadratic_root() {
        // Two particles: the gap solves g² − d g − 2c = 0 with d = y₀ − y₁.
        let (c, y) = (1e-3, [0.01, 0.02]);
        let mut x = [0.0; 2];
        let mut work = vec![0.0; 8];
        assert!(implicit_neighbours(&[0.5, -0.5], &y, c, &mut x, &mut work));
        let d = y[0] - y[1];
        let g = 0.5 * (d + (d * d + 8.0 * c).sqrt());
        assert!((x[0] - x[1] - g).abs() < 1e-14);
        assert!((x[0] + x[1] - (y[0] + y[1])).abs() < 1e-14);
    }

    #[test]
    fn close_pairs_at_beta_one_survive() {
        let mut cfg = DbmConfig::new(3, 1.0, Potential::quadratic(), 1e-3, 0.5, 11);
        cfg.collision_guard = 0.5;
        let s = ParticleState::new(0.0, 1.0, vec![1e-9, 0.0, -1.0]).unwrap();
        let tr = simulate(&cfg, &s, &[0.5]).unwrap();
        assert!(tr.last().particles.is_sorted_by(|a, b| a > b));
    }

    #[test]
    fn step_grid_lands_on_target() {
        let g = step_grid(0.0, 0.1, 0.03);
        assert_eq!(g.len(), 4);
        assert_eq!(*g.last().unwrap(), 0.1);
        assert_eq!(step_grid(0.0, 0.1, 0.025).len(), 4);
        assert!(step_grid(0.2, 0.2, 0.1).is_empty());
    }

    #[test]
    fn zero_horizon_and_determinism() {
        let sc = SquareRootMeasure::semicircle();
        let p: Vec<f64> = (0..50).map(|i| sc.quantile_from_edge((i as f64 + 0.5) / 50.0)).collect();
        let init = state(p);
        let cfg = DbmConfig::new(50, 2.0, Potential::quadratic(), 1e-3, 0.0, 9);
        let tr = simulate(&cfg, &init, &[0.0]).unwrap();
        assert_eq!(tr.snapshots, vec![init.clone()]);
        let cfg = DbmConfig { t_end: 0.05, ..cfg };
        let a = simulate(&cfg, &init, &[0.02, 0.05]).unwrap();
        let b = simulate(&cfg, &init, &[0.02, 0.05]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots[1].t, 0.05);
    }

    #[test]
    fn support_check_degenerate_bounds() {
        let tr = Trajectory { snapshots: vec![state(vec![1.0, -1.0])], seed: 0, config_hash: String::new() };
        assert_eq!(support_check(&tr, 0.0).fraction, 1.0);
        assert_eq!(support_check(&tr, f64::INFINITY).fraction, 0.0);
    }

    #[test]
    fn rejects_small_beta() {
        let cfg = DbmConfig::new(2, 0.5, Potential::zero(), 1e-3, 1.0, 0);
        assert!(matches!(cfg.validate(), Err(DbmError::InvalidConfig(_))));
    }
}
