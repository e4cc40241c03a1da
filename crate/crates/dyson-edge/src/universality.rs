//! Edge universality: a tridiagonal β-ensemble sampler used as the reference
//! law, quantile interpolation of measures, coupled interpolating dynamics
//! and two-sample comparison of the rescaled extreme particle.

use crate::dbm::{advance_coupled, map_indexed, step_grid, DbmError, StepParams, Trajectory};
use crate::mkv::{MkvError, MkvSolution};
use crate::model::{ModelError, ParticleState, Potential, SquareRootMeasure};
use crate::seeds::{derive_seed, fill_normals, rng_from_seed, Purpose};
use crate::stats;
use rand_distr::{ChiSquared, Distribution, Normal};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Number of particles compared in the coupling report.
pub const DEFAULT_COUPLED_PARTICLES: usize = 10;
/// Size of the y-grid on which the interpolated quantile function is checked
/// for monotonicity.
pub const QUANTILE_GRID: usize = 4096;
const PROFILE_NODES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UniversalityError {
    #[error("tridiagonal eigensolver did not converge at index {0}")]
    EigensolverFailure(usize),
    #[error("interpolated quantile function is not monotone near y = {0}")]
    QuantileNonMonotone(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dbm(#[from] DbmError),
    #[error("no snapshot at t = {0}")]
    MissingSnapshot(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mkv(#[from] MkvError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for UniversalityError {
    fn from(e: std::io::Error) -> Self {
        UniversalityError::Io(e.to_string())
    }
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (e[k] couples k and k+1), by implicit QL with Wilkinson
/// shifts. Returned in descending order.
pub fn tridiagonal_eigenvalues(d: &[f64], e: &[f64]) -> Result<Vec<f64>, UniversalityError> {
    let n = d.len();
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).take(n).collect();
    e.resize(n, 0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(UniversalityError::EigensolverFailure(l));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// Samples the β-ensemble with density ∝ ∏|μ_i − μ_j|^β exp(−βN Σ μ_i²/4),
/// whose limit is the semicircle on [−2, 2], from the tridiagonal model.
pub fn sample_beta_ensemble(n: usize, beta: f64, seed: u64) -> Result<ParticleState, UniversalityError> {
    let (d, e) = tridiagonal_model(n, beta, seed)?;
    let eig = tridiagonal_eigenvalues(&d, &e)?;
    Ok(ParticleState::new(0.0, beta, eig)?)
}

/// Largest particle of the same sample `sample_beta_ensemble` would draw
/// for this seed, without the full spectrum.
pub fn sample_top_particle(n: usize, beta: f64, seed: u64) -> Result<f64, UniversalityError> {
    let (d, e) = tridiagonal_model(n, beta, seed)?;
    Ok(top_eigenvalue(&d, &e))
}

fn tridiagonal_model(n: usize, beta: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>), UniversalityError> {
    if n == 0 || !(beta >= 1.0) {
        return Err(UniversalityError::Invalid(format!("need n >= 1 and beta >= 1, got n = {n}, beta = {beta}")));
    }
    let mut rng = rng_from_seed(seed);
    let scale = 1.0 / (beta * n as f64).sqrt();
    let normal = Normal::new(0.0, (2.0 / (beta * n as f64)).sqrt()).expect("positive variance");
    let d: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let mut e = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let dof = beta * (n - k) as f64;
        let chi2 = ChiSquared::new(dof).expect("positive degrees of freedom");
        e.push(chi2.sample(&mut rng).sqrt() * scale);
    }
    Ok((d, e))
}

/// Number of eigenvalues below `x` (Sturm sequence of the LDLᵀ pivots).
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for k in 0..d.len() {
        let off = if k == 0 { 0.0 } else { e[k - 1] * e[k - 1] };
        q = d[k] - x - if k == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = f64::EPSILON * (x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue by bisection inside the Gershgorin interval.
fn top_eigenvalue(d: &[f64], e: &[f64]) -> f64 {
    let n = d.len();
    let radius = |k: usize| (if k > 0 { e[k - 1].abs() } else { 0.0 }) + e.get(k).map_or(0.0, |v| v.abs());
    let mut lo = (0..n).map(|k| d[k] - radius(k)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|k| d[k] + radius(k)).fold(f64::NEG_INFINITY, f64::max);
    while hi - lo > 4.0 * f64::EPSILON * (lo.abs().max(hi.abs()) + 1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(d, e, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// N^{2/3}(λ_1 − E).
pub fn edge_statistic(state: &ParticleState, edge: f64) -> f64 {
    (state.n() as f64).powf(2.0 / 3.0) * (state.particles[0] - edge)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Comparison {
    pub ks: f64,
    pub cvm: f64,
    /// Asymptotic 1% critical value of the KS distance for these sizes.
    pub ks_critical_1pct: f64,
}

pub fn compare_distributions(a: &[f64], b: &[f64]) -> Comparison {
    Comparison {
        ks: stats::ks_two_sample(a, b),
        cvm: stats::cvm_two_sample(a, b),
        ks_critical_1pct: stats::ks_critical(0.01, a.len(), b.len()),
    }
}

/// N^{2/3}(λ_1(t) − E_t) with the edge taken from the deterministic solution.
pub fn edge_statistic_at(traj: &Trajectory, sol: &MkvSolution, t: f64) -> Result<f64, UniversalityError> {
    let state = traj.at(t).ok_or(UniversalityError::MissingSnapshot(t))?;
    let (edge, _) = sol.edge_interp(t)?;
    Ok(edge_statistic(state, edge))
}

/// V(x) = a x²/2 + g x⁴ with a chosen so that the equilibrium density has
/// the semicircle's edge amplitude 1/π, together with that equilibrium
/// measure
///
/// ρ(x) = (a + 2gR² + 4g x²) √(R² − x²) / (2π),  3gR⁴/4 + aR²/4 = 1.
///
/// Edge statistics of this V are then directly comparable with the oracle
/// without rescaling. Solutions exist for 0 ≤ g ≤ 0.015.
pub fn matched_quartic(g: f64) -> Result<(Potential, SquareRootMeasure), UniversalityError> {
    if !(0.0..=0.015).contains(&g) {
        return Err(UniversalityError::Invalid(format!("quartic coefficient {g} outside [0, 0.015]")));
    }
    let radius_sq = |a: f64| {
        if g == 0.0 {
            4.0 / a
        } else {
            let (qa, qb) = (0.75 * g, 0.25 * a);
            (-qb + (qb * qb + 4.0 * qa).sqrt()) / (2.0 * qa)
        }
    };
    // (a + 6gR²)√(2R) − 2 vanishes at a = 1 when g = 0; follow that root.
    let excess = |a: f64| {
        let r2 = radius_sq(a);
        (a + 6.0 * g * r2) * (2.0 * r2.sqrt()).sqrt() - 2.0
    };
    let mut hi = 1.0;
    let mut lo = hi;
    if excess(hi) != 0.0 {
        let mut found = false;
        for k in 1..=400 {
            lo = 1.0 - k as f64 * 0.0025;
            if excess(lo) <= 0.0 {
                found = true;
                break;
            }
            hi = lo;
        }
        if !found {
            return Err(UniversalityError::Invalid(format!("no amplitude match for g = {g}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let a = 0.5 * (lo + hi);
    let r2 = radius_sq(a);
    let r = r2.sqrt();
    let v = Potential::new(vec![0.0, 0.0, 0.5 * a, 0.0, g], crate::model::DEFAULT_RADIUS)?;
    let inv_2pi = 0.5 / std::f64::consts::PI;
    let rho = SquareRootMeasure::from_profile_fn(r, -r, |x| (a + 2.0 * g * r2 + 4.0 * g * x * x) * inv_2pi, 1e-9)?;
    Ok((v, rho))
}

/// Pushes a configuration forward by the monotone map carrying `from` onto
/// `to` (equal edge mass on both sides). Points beyond an edge are moved
/// rigidly with that edge.
pub fn transport(particles: &[f64], from: &SquareRootMeasure, to: &SquareRootMeasure) -> Vec<f64> {
    let (mf, mt) = (from.mass(), to.mass());
    particles
        .iter()
        .map(|&x| {
            if x >= from.edge {
                to.edge + (x - from.edge)
            } else if x <= from.support_left {
                to.support_left + (x - from.support_left)
            } else {
                to.quantile_from_edge(from.mass_right_of(x) / mf * mt)
            }
        })
        .collect()
}

/// Edge statistics N^{2/3}(μ_1 − 2) of `count` independent oracle samples.
pub fn oracle_edge_samples(
    n: usize,
    beta: f64,
    master_seed: u64,
    count: usize,
    workers: usize,
) -> Result<Vec<f64>, UniversalityError> {
    map_indexed(count, workers, |k| {
        let seed = derive_seed(master_seed, k as u64, Purpose::Oracle);
        sample_top_particle(n, beta, seed).map(|top| (n as f64).powf(2.0 / 3.0) * (top - 2.0))
    })
    .into_iter()
    .collect()
}

/// Writes `sample_id,value,source` rows for the two samples.
pub fn write_edge_samples_csv<W: Write>(mut w: W, dbm: &[f64], oracle: &[f64]) -> std::io::Result<()> {
    writeln!(w, "sample_id,value,source")?;
    for (k, v) in dbm.iter().enumerate() {
        writeln!(w, "{k},{v:e},dbm")?;
    }
    for (k, v) in oracle.iter().enumerate() {
        writeln!(w, "{k},{v:e},oracle")?;
    }
    Ok(())
}

/// Quantile interpolation of two measures: the point carrying edge mass y is
/// x_α(y) = α x_A(y) + (1 − α) x_B(y).
///
/// The profile of the result is sampled at Chebyshev nodes of
/// [L_α, E_α] by solving x_α(y) = x for y, with density
/// 1/(α/ρ_A(x_A) + (1 − α)/ρ_B(x_B)) there. Both edges interpolate linearly.
pub fn interpolate_measure(
    a: &SquareRootMeasure,
    b: &SquareRootMeasure,
    alpha: f64,
) -> Result<SquareRootMeasure, UniversalityError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(UniversalityError::Invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mix = |xa: f64, xb: f64| alpha * xa + (1.0 - alpha) * xb;
    let (ta, tb) = (a.mass(), b.mass());
    let quantiles = |y: f64| (a.quantile_from_edge(y * ta), b.quantile_from_edge(y * tb));
    let mut prev = f64::INFINITY;
    for k in 0..=QUANTILE_GRID {
        let y = k as f64 / QUANTILE_GRID as f64;
        let (xa, xb) = quantiles(y);
        let x = mix(xa, xb);
        if !(x < prev || k == 0) {
            return Err(UniversalityError::QuantileNonMonotone(y));
        }
        prev = x;
    }
    let edge = mix(a.edge, b.edge);
    let left = mix(a.support_left, b.support_left);
    let (c, r) = ((edge + left) / 2.0, (edge - left) / 2.0);
    let mut values = Vec::with_capacity(PROFILE_NODES);
    for k in 0..PROFILE_NODES {
        let x = c + r * ((k as f64 + 0.5) * std::f64::consts::PI / PROFILE_NODES as f64).cos();
        // x_α is decreasing in y.
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let (xa, xb) = quantiles(mid);
            if mix(xa, xb) > x {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-17 {
                break;
            }
        }
        let (xa, xb) = quantiles(0.5 * (lo + hi));
        let mut inv = 0.0;
        if alpha > 0.0 {
            inv += alpha * ta / (a.profile(xa) * ((a.edge - xa) * (xa - a.support_left)).sqrt());
        }
        if alpha < 1.0 {
            inv += (1.0 - alpha) * tb / (b.profile(xb) * ((b.edge - xb) * (xb - b.support_left)).sqrt());
        }
        if !(inv.is_finite() && inv > 0.0) {
            return Err(UniversalityError::QuantileNonMonotone(0.5 * (lo + hi)));
        }
        values.push(1.0 / inv / ((edge - x) * (x - left)).sqrt());
    }
    Ok(SquareRootMeasure::from_profile_values(edge, left, &values, 1e-6)?)
}

/// Coupled dynamics for V_α = αV + (1 − α)W started from
/// αλ(0) + (1 − α)μ(0).
#[derive(Debug, Clone)]
pub struct InterpolationConfig {
    pub n: usize,
    pub beta: f64,
    pub v: Potential,
    pub w: Potential,
    pub alphas: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub guard: f64,
}

impl InterpolationConfig {
    pub fn validate(&self) -> Result<(), UniversalityError> {
        let mut errs = Vec::new();
        if self.n < 2 {
            errs.push(format!("n must be >= 2, got {}", self.n));
        }
        if !(self.beta >= 1.0) {
            errs.push(format!("beta must be >= 1, got {}", self.beta));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            errs.push("alphas must be a non-empty list in [0, 1]".into());
        }
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            errs.push(format!("need dt > 0 and t_end >= 0, got {} and {}", self.dt, self.t_end));
        }
        if !(self.guard > 0.0 && self.guard < 1.0) {
            errs.push(format!("guard must lie in (0, 1), got {}", self.guard));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(UniversalityError::Invalid(errs.join("; ")))
        }
    }

    /// V_α, with the larger of the two radii.
    pub fn potential(&self, alpha: f64) -> Potential {
        let (cv, cw) = (self.v.coeffs(), self.w.coeffs());
        let len = cv.len().max(cw.len());
        let at = |c: &[f64], k: usize| c.get(k).copied().unwrap_or(0.0);
        let coeffs = (0..len).map(|k| alpha * at(cv, k) + (1.0 - alpha) * at(cw, k)).collect();
        Potential::new(coeffs, self.v.radius().max(self.w.radius())).expect("finite mix of valid potentials")
    }
}

#[derive(Debug, Clone)]
pub struct InterpolationFamily {
    pub alphas: Vec<f64>,
    pub potentials: Vec<Potential>,
    pub initial: Vec<Vec<f64>>,
    pub finals: Vec<ParticleState>,
}

impl InterpolationFamily {
    pub fn slice(&self, alpha: f64) -> Option<&ParticleState> {
        self.alphas.iter().position(|&a| a == alpha).map(|k| &self.finals[k])
    }
}

/// Runs every α-slice in lockstep on one noise stream. The stream is drawn
/// exactly as a standalone simulation with the same seed draws it, and bridge
/// refinements are shared, so a one-slice family equals that simulation.
pub fn run_interpolation(
    cfg: &InterpolationConfig,
    lambda0: &[f64],
    mu0: &[f64],
    seed: u64,
) -> Result<InterpolationFamily, UniversalityError> {
    cfg.validate()?;
    if lambda0.len() != cfg.n || mu0.len() != cfg.n {
        return Err(UniversalityError::Invalid(format!(
            "initial data have {} and {} particles, config says {}",
            lambda0.len(),
            mu0.len(),
            cfg.n
        )));
    }
    let potentials: Vec<Potential> = cfg.alphas.iter().map(|&a| cfg.potential(a)).collect();
    let derivs: Vec<_> = potentials.iter().map(|p| p.derivatives(1)).collect();
    let der_refs: Vec<_> = derivs.iter().collect();
    let initial: Vec<Vec<f64>> =
        cfg.alphas.iter().map(|&a| lambda0.iter().zip(mu0).map(|(l, m)| a * l + (1.0 - a) * m).collect()).collect();
    for z in &initial {
        ParticleState::new(0.0, cfg.beta, z.clone())?;
    }
    let mut slices = initial.clone();
    let params = StepParams { sigma: (2.0 / (cfg.beta * cfg.n as f64)).sqrt(), guard: cfg.guard };
    let mut rng = rng_from_seed(seed);
    let mut noise = vec![0.0; cfg.n];
    let mut dw = vec![0.0; cfg.n];
    let mut t = 0.0;
    for next in step_grid(0.0, cfg.t_end, cfg.dt) {
        let h = next - t;
        fill_normals(&mut rng, &mut noise);
        let sq = h.sqrt();
        for (d, z) in dw.iter_mut().zip(&noise) {
            *d = z * sq;
        }
        let mut refs: Vec<&mut Vec<f64>> = slices.iter_mut().collect();
        advance_coupled(&mut refs, &der_refs, params, h, &dw, &mut rng)
            .map_err(|e| DbmError::AtTime { t, source: Box::new(e) })?;
        t = next;
    }
    let finals =
        slices.into_iter().map(|p| ParticleState::new(cfg.t_end, cfg.beta, p)).collect::<Result<Vec<_>, _>>()?;
    Ok(InterpolationFamily { alphas: cfg.alphas.clone(), potentials, initial, finals })
}

/// N^{2/3} |(z_i(1) − E(1)) − (z_i(0) − E(0))| for i = 1..=k.
pub fn coupling_distances(
    family: &InterpolationFamily,
    edge_v: f64,
    edge_w: f64,
    k: usize,
) -> Result<Vec<f64>, UniversalityError> {
    let missing = || UniversalityError::Invalid("family needs the slices alpha = 0 and alpha = 1".into());
    let one = family.slice(1.0).ok_or_else(missing)?;
    let zero = family.slice(0.0).ok_or_else(missing)?;
    let scale = (one.n() as f64).powf(2.0 / 3.0);
    Ok((0..k.min(one.n()))
        .map(|i| scale * ((one.particles[i] - edge_v) - (zero.particles[i] - edge_w)).abs())
        .collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IndexQuantiles {
    pub i: usize,
    pub q50: f64,
    pub q90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CouplingReport {
    pub n: usize,
    pub t: f64,
    pub couplings: usize,
    pub per_index: Vec<IndexQuantiles>,
    /// Median over i of the scaled distance, one entry per coupling.
    pub per_coupling_median: Vec<f64>,
    /// Median over couplings of `per_coupling_median`.
    pub median: f64,
}

impl CouplingReport {
    /// `rows[c][i]` is the scaled distance of particle i + 1 in coupling c.
    pub fn new(n: usize, t: f64, rows: &[Vec<f64>]) -> Result<Self, UniversalityError> {
        let k = rows.first().map_or(0, |r| r.len());
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(UniversalityError::Invalid("coupling rows must be non-empty and equal length".into()));
        }
        let per_index = (0..k)
            .map(|i| {
                let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
                IndexQuantiles {
                    i: i + 1,
                    q50: stats::quantile(&col, 0.5),
                    q90: stats::quantile(&col, 0.9),
                    max: col.iter().fold(0.0f64, |m, v| m.max(*v)),
                }
            })
            .collect();
        let per_coupling_median: Vec<f64> = rows.iter().map(|r| stats::median(r)).collect();
        let median = stats::median(&per_coupling_median);
        Ok(Self { n, t, couplings: rows.len(), per_index, per_coupling_median, median })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), UniversalityError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| UniversalityError::Io(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_tridiagonal() {
        let ev = tridiagonal_eigenvalues(&[2.0, 2.0], &[1.0]).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
        let n = 50;
        let ev = tridiagonal_eigenvalues(&vec![0.0; n], &vec![1.0; n - 1]).unwrap();
        for (k, l) in ev.iter().enumerate() {
            let exact = 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((l - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn top_particle_matches_full_spectrum() {
        for (n, beta, seed) in [(1, 2.0, 3), (2, 1.0, 4), (40, 2.0, 5), (300, 4.0, 6)] {
            let full = sample_beta_ensemble(n, beta, seed).unwrap().particles[0];
            let top = sample_top_particle(n, beta, seed).unwrap();
            assert!((full - top).abs() <= 1e-12, "n = {n}: {full} vs {top}");
        }
    }

    #[test]
    fn matched_quartic_has_reference_amplitude() {
        let (v, rho) = matched_quartic(0.01).unwrap();
        assert_eq!(v.coeffs()[4], 0.01);
        assert!((rho.mass() - 1.0).abs() < 1e-9);
        let d = 1e-6;
        let amp = rho.density(rho.edge - d) / d.sqrt();
        assert!((amp * std::f64::consts::PI - 1.0).abs() < 1e-4, "{amp}");
        let sol = crate::mkv::evolve(&rho, &v, &[], 0.1, 1e-3).unwrap();
        let (e, c) = sol.edge_interp(0.1).unwrap();
        assert!((e - rho.edge).abs() < 1e-6 && (c * std::f64::consts::PI - 1.0).abs() < 1e-4);
        assert!(matched_quartic(-0.1).is_err());
    }

    #[test]
    fn transport_identity_and_edges() {
        let sc = SquareRootMeasure::semicircle();
        let xs = [2.3, 1.5, 0.2, -1.9, -2.1];
        let same = transport(&xs, &sc, &sc);
        for (a, b) in xs.iter().zip(&same) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let wide = SquareRootMeasure::scaled_semicircle(0.0, 4.0);
        let moved = transport(&xs, &sc, &wide);
        assert!((moved[0] - 4.3).abs() < 1e-12 && (moved[4] + 4.1).abs() < 1e-12);
        assert!((moved[1] - 3.0).abs() < 1e-8, "{}", moved[1]);
    }

    #[test]
    fn one_particle_is_gaussian() {
        let xs: Vec<f64> = (0..4000).map(|s| sample_beta_ensemble(1, 2.0, s).unwrap().particles[0]).collect();
        let v = stats::variance(&xs);
        assert!((v - 1.0).abs() < 0.06, "{v}");
    }

    #[test]
    fn edge_statistic_examples() {
        let s = ParticleState::new(0.0, 2.0, vec![2.0, 0.0]).unwrap();
        assert_eq!(edge_statistic(&s, 2.0), 0.0);
        let n = 8.0f64;
        let s = ParticleState::new(0.0, 2.0, vec![2.0 + n.powf(-2.0 / 3.0), 0.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0])
            .unwrap();
        assert!((edge_statistic(&s, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn comparisons() {
        let a: Vec<f64> = (0..300).map(|i| (i as f64 * 0.731).sin()).collect();
        assert_eq!(compare_distributions(&a, &a).ks, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!(compare_distributions(&a, &b).ks >= 0.2);
    }

    fn max_density_gap(a: &SquareRootMeasure, b: &SquareRootMeasure) -> f64 {
        let (lo, hi) = (a.support_left.min(b.support_left), a.edge.max(b.edge));
        (0..=2000)
            .map(|k| lo + (hi - lo) * k as f64 / 2000.0)
            .map(|x| (a.density(x) - b.density(x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn interpolation_endpoints_and_translation() {
        let sc = SquareRootMeasure::semicircle();
        let km = SquareRootMeasure::kesten_mckay(3.0).unwrap();
        let b0 = interpolate_measure(&sc, &km, 0.0).unwrap();
        assert!(max_density_gap(&b0, &km) < 1e-8);
        let a1 = interpolate_measure(&sc, &km, 1.0).unwrap();
        assert!(max_density_gap(&a1, &sc) < 1e-8);
        let shifted = SquareRootMeasure::scaled_semicircle(1.0, 2.0);
        let half = interpolate_measure(&sc, &shifted, 0.5).unwrap();
        assert!(max_density_gap(&half, &SquareRootMeasure::scaled_semicircle(0.5, 2.0)) < 1e-8);
    }

    #[test]
    fn interpolation_keeps_edge_linear_and_mass() {
        let sc = SquareRootMeasure::semicircle();
        let km = SquareRootMeasure::kesten_mckay(3.0).unwrap();
        for alpha in [0.1, 0.37, 0.5, 0.9] {
            let m = interpolate_measure(&sc, &km, alpha).unwrap();
            assert_eq!(m.edge, alpha * sc.edge + (1.0 - alpha) * km.edge);
            assert!((m.mass() - 1.0).abs() < 1e-6);
            assert!(m.profile(m.edge) > 0.0);
            // Quantiles of the result are the mixed quantiles.
            for y in [0.01, 0.3, 0.8] {
                let want = alpha * sc.quantile_from_edge(y) + (1.0 - alpha) * km.quantile_from_edge(y);
                assert!((m.quantile_from_edge(y) - want).abs() < 1e-7, "{alpha} {y}");
            }
        }
        assert!(interpolate_measure(&sc, &km, 1.5).is_err());
    }

    fn family_config(v: Potential, alphas: Vec<f64>) -> InterpolationConfig {
        InterpolationConfig {
            n: 20,
            beta: 2.0,
            v,
            w: Potential::quadratic(),
            alphas,
            t_end: 0.05,
            dt: 1e-3,
            guard: 0.5,
        }
    }

    #[test]
    fn identical_endpoints_give_zero_distance() {
        let mu = sample_beta_ensemble(20, 2.0, 3).unwrap().particles;
        let cfg = family_config(Potential::quadratic(), vec![0.0, 0.5, 1.0]);
        let fam = run_interpolation(&cfg, &mu, &mu, 9).unwrap();
        assert_eq!(fam.finals[0], fam.finals[2]);
        assert!(coupling_distances(&fam, 2.0, 2.0, 10).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_slice_matches_standalone_run() {
        use crate::dbm::{simulate, DbmConfig};
        let lam = sample_beta_ensemble(20, 2.0, 4).unwrap().particles;
        let mu = sample_beta_ensemble(20, 2.0, 5).unwrap().particles;
        let v = Potential::quartic(0.05);
        let fam = run_interpolation(&family_config(v.clone(), vec![1.0]), &lam, &mu, 17).unwrap();
        let mut dcfg = DbmConfig::new(20, 2.0, v, 1e-3, 0.05, 17);
        dcfg.collision_guard = 0.5;
        let start = ParticleState::new(0.0, 2.0, lam).unwrap();
        let tr = simulate(&dcfg, &start, &[0.05]).unwrap();
        assert_eq!(fam.finals[0].particles, tr.last().particles);
    }

    #[test]
    fn zero_time_distance_is_initial_offset() {
        let lam = sample_beta_ensemble(20, 2.0, 6).unwrap().particles;
        let mu = sample_beta_ensemble(20, 2.0, 7).unwrap().particles;
        let mut cfg = family_config(Potential::quartic(0.05), vec![0.0, 1.0]);
        cfg.t_end = 0.0;
        let fam = run_interpolation(&cfg, &lam, &mu, 1).unwrap();
        let d = coupling_distances(&fam, 2.1, 2.0, 3).unwrap();
        let s = 20f64.powf(2.0 / 3.0);
        for i in 0..3 {
            assert!((d[i] - s * ((lam[i] - 2.1) - (mu[i] - 2.0)).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_report_quantiles() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![3.0, 4.0, 5.0], vec![0.0, 0.0, 0.0]];
        let r = CouplingReport::new(100, 0.1, &rows).unwrap();
        assert_eq!(r.per_coupling_median, vec![2.0, 4.0, 0.0]);
        assert_eq!(r.median, 2.0);
        assert_eq!(r.per_index[0].max, 3.0);
        assert!(CouplingReport::new(100, 0.1, &[]).is_err());
    }

    #[test]
    fn edge_csv_layout() {
        let mut buf = Vec::new();
        write_edge_samples_csv(&mut buf, &[1.0], &[-2.0, 0.5]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,value,source");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",dbm") && lines[3].ends_with(",oracle"));
    }
}
