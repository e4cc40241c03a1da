//! Mesoscopic fluctuations at the edge: the rescaled Stieltjes field Γ, the
//! edge covariance kernel and its bulk limit, empirical covariances with
//! jackknife errors, linear statistics and the quadratic-variation integral.

use crate::mkv::{MkvError, MkvSolution};
use crate::model::{stieltjes_of_particles, ModelError, ParticleState, SquareRootMeasure};
use crate::rigidity::{measure_at, RigidityError};
use crate::stats;
use num_complex::Complex64;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

/// Fewest trajectories accepted by [`empirical_covariance`].
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluctError {
    #[error("argument {0} lies on the branch cut (-inf, 0]")]
    BranchCut(Complex64),
    #[error("need at least {need} samples per point, got {got}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("test function grid too coarse: {0}")]
    SupportTooCoarse(String),
    #[error("test function does not vanish at the end of its support ({0})")]
    BoundaryJump(f64),
    #[error("outside the time window: {0}")]
    WindowViolated(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mkv(#[from] MkvError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<RigidityError> for FluctError {
    fn from(e: RigidityError) -> Self {
        match e {
            RigidityError::Mkv(e) => FluctError::Mkv(e),
            RigidityError::Model(e) => FluctError::Model(e),
            other => FluctError::Invalid(other.to_string()),
        }
    }
}

fn check_cut(w: Complex64) -> Result<(), FluctError> {
    if w.im == 0.0 && w.re <= 0.0 || !w.re.is_finite() || !w.im.is_finite() {
        return Err(FluctError::BranchCut(w));
    }
    Ok(())
}

/// K_edge(w, w′) = 1/(2β √w √w′ (√w + √w′)²), principal roots.
pub fn k_edge(w: Complex64, w2: Complex64, beta: f64) -> Result<Complex64, FluctError> {
    check_cut(w)?;
    check_cut(w2)?;
    let (a, b) = (w.sqrt(), w2.sqrt());
    Ok(1.0 / (2.0 * beta * a * b * (a + b) * (a + b)))
}

/// Centering term (2 − β)/(4βw) added to Nη(m − m̂).
pub fn mean_shift(beta: f64, w: Complex64) -> Complex64 {
    (2.0 - beta) / (4.0 * beta * w)
}

/// One Γ value of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSample {
    pub traj: usize,
    pub t: f64,
    pub w: Complex64,
    pub eta: f64,
    pub value: Complex64,
}

/// Deterministic side of Γ at fixed (t, η, w): the point and m̂ there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaProbe {
    pub t: f64,
    pub w: Complex64,
    pub eta: f64,
    pub z: Complex64,
    pub mhat: Complex64,
}

impl GammaProbe {
    pub fn new(sol: &MkvSolution, t: f64, w: Complex64, eta: f64) -> Result<Self, FluctError> {
        check_cut(w)?;
        if !(eta > 0.0) || w.im < 0.0 {
            return Err(FluctError::Invalid(format!("need eta > 0 and Im w >= 0, got eta {eta}, w {w}")));
        }
        let (e, _) = sol.edge_interp(t)?;
        let z = e + w * eta;
        let mhat = sol.mhat(t, z)?;
        Ok(Self { t, w, eta, z, mhat })
    }

    /// Nη[m_N(z) − m̂(z)] + (2 − β)/(4βw).
    pub fn gamma(&self, state: &ParticleState) -> Result<Complex64, FluctError> {
        let n = state.n() as f64;
        let m = stieltjes_of_particles(&state.particles, self.z)?;
        Ok(n * self.eta * (m - self.mhat) + mean_shift(state.beta, self.w))
    }
}

/// Γ at E_t + wη for one configuration.
pub fn gamma_statistic(
    state: &ParticleState,
    sol: &MkvSolution,
    w: Complex64,
    eta: f64,
) -> Result<Complex64, FluctError> {
    GammaProbe::new(sol, state.t, w, eta)?.gamma(state)
}

/// CSV `traj,t,w_re,w_im,eta,gamma_re,gamma_im`.
pub fn write_gamma_csv<W: Write>(samples: &[GammaSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "traj,t,w_re,w_im,eta,gamma_re,gamma_im")?;
    for s in samples {
        writeln!(out, "{},{},{},{},{},{},{}", s.traj, s.t, s.w.re, s.w.im, s.eta, s.value.re, s.value.im)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BulkLimitRow {
    pub kappa: f64,
    /// K_edge(κ + i, κ − i) / (2/(β(w − w′)²)).
    pub opposite_ratio: Complex64,
    /// |K_edge(κ + i, κ + i)| / |2/(β(w − w′)²)| with the opposite-sign w′.
    pub same_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BulkLimitReport {
    pub beta: f64,
    pub rows: Vec<BulkLimitRow>,
    /// |ratio − 1| shrinks along the κ sequence.
    pub opposite_monotone: bool,
    /// |ratio + 1| shrinks along the κ sequence.
    pub opposite_monotone_to_minus_one: bool,
    pub same_monotone: bool,
}

/// K_edge against the bulk kernel 2/(β(w − w′)²) at w = κ ± i.
pub fn k_bulk_limit_check(kappas: &[f64], beta: f64) -> Result<BulkLimitReport, FluctError> {
    let mut rows = Vec::new();
    for &kappa in kappas {
        if !(kappa < 0.0) {
            return Err(FluctError::Invalid(format!("kappa must be negative, got {kappa}")));
        }
        let (up, down) = (Complex64::new(kappa, 1.0), Complex64::new(kappa, -1.0));
        let bulk = 2.0 / (beta * (up - down) * (up - down));
        rows.push(BulkLimitRow {
            kappa,
            opposite_ratio: k_edge(up, down, beta)? / bulk,
            same_relative: k_edge(up, up, beta)?.norm() / bulk.norm(),
        });
    }
    let shrinks = |f: &dyn Fn(&BulkLimitRow) -> f64| rows.windows(2).all(|p| f(&p[1]) <= f(&p[0]));
    Ok(BulkLimitReport {
        beta,
        opposite_monotone: shrinks(&|r| (r.opposite_ratio - 1.0).norm()),
        opposite_monotone_to_minus_one: shrinks(&|r| (r.opposite_ratio + 1.0).norm()),
        same_monotone: shrinks(&|r| r.same_relative),
        rows,
    })
}

/// Model covariance of the real vector (Re Γ(w_1), Im Γ(w_1), …), assuming
/// E[Γ(w)Γ(w′)] = K(w, w′) and Γ(w̄) = conj Γ(w).
pub fn model_covariance(points: &[Complex64], beta: f64) -> Result<Vec<Vec<f64>>, FluctError> {
    let k = points.len();
    let mut c = vec![vec![0.0; 2 * k]; 2 * k];
    for (j, &a) in points.iter().enumerate() {
        for (l, &b) in points.iter().enumerate() {
            let same = k_edge(a, b, beta)?;
            let conj = k_edge(a, b.conj(), beta)?;
            let conj_t = k_edge(a.conj(), b, beta)?;
            c[2 * j][2 * l] = 0.5 * (same + conj).re;
            c[2 * j + 1][2 * l + 1] = 0.5 * (conj - same).re;
            c[2 * j][2 * l + 1] = 0.5 * (same.im - conj.im);
            c[2 * j + 1][2 * l] = 0.5 * (same.im - conj_t.im);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub points: Vec<Complex64>,
    pub beta: f64,
    pub samples: usize,
    /// Component labels, "re(w)" / "im(w)".
    pub labels: Vec<String>,
    pub model: Vec<Vec<f64>>,
    pub empirical: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// (empirical − model)/SE, zero where both sides vanish identically.
    pub z_scores: Vec<Vec<f64>>,
    pub max_abs_z: f64,
    pub means: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub max_abs_mean_z: f64,
}

impl CovarianceReport {
    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }
}

fn ratio(resid: f64, se: f64) -> f64 {
    if resid.abs() <= 1e-12 * (1.0 + se) {
        0.0
    } else {
        resid / se
    }
}

/// Sample covariance in the real 2k representation with jackknife standard
/// errors, against the kernel model.
pub fn empirical_covariance(
    samples: &[GammaSample],
    points: &[Complex64],
    beta: f64,
) -> Result<CovarianceReport, FluctError> {
    let k = points.len();
    let mut trajs: Vec<usize> = samples.iter().map(|s| s.traj).collect();
    trajs.sort_unstable();
    trajs.dedup();
    let n = trajs.len();
    let mut rows = vec![vec![f64::NAN; 2 * k]; n];
    for s in samples {
        let r = trajs.binary_search(&s.traj).unwrap();
        let Some(p) = points.iter().position(|&w| w == s.w) else { continue };
        rows[r][2 * p] = s.value.re;
        rows[r][2 * p + 1] = s.value.im;
    }
    let complete: Vec<Vec<f64>> = rows.into_iter().filter(|r| r.iter().all(|x| x.is_finite())).collect();
    if complete.len() < MIN_SAMPLES {
        return Err(FluctError::InsufficientSamples { got: complete.len(), need: MIN_SAMPLES });
    }
    let nf = complete.len() as f64;
    let d = 2 * k;
    let col = |a: usize| -> Vec<f64> { complete.iter().map(|r| r[a]).collect() };
    let cols: Vec<Vec<f64>> = (0..d).map(col).collect();
    let sums: Vec<f64> = cols.iter().map(|c| stats::compensated_sum(c.iter().copied())).collect();
    let means: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let mean_se: Vec<f64> = cols.iter().map(|c| stats::std_error(c)).collect();
    let mut emp = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a..d {
            let sab =
                stats::compensated_sum(cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - means[a]) * (y - means[b])));
            let full = sab / (nf - 1.0);
            // Leave-one-out covariances from the centred cross sum.
            let loo: Vec<f64> = (0..complete.len())
                .map(|i| {
                    let (x, y) = (cols[a][i] - means[a], cols[b][i] - means[b]);
                    (sab - x * y * nf / (nf - 1.0)) / (nf - 2.0)
                })
                .collect();
            let lm = stats::mean(&loo);
            let var = (nf - 1.0) / nf * stats::compensated_sum(loo.iter().map(|v| (v - lm) * (v - lm)));
            emp[a][b] = full;
            emp[b][a] = full;
            se[a][b] = var.sqrt();
            se[b][a] = var.sqrt();
        }
    }
    let model = model_covariance(points, beta)?;
    let mut z = vec![vec![0.0; d]; d];
    let mut max_abs_z: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            z[a][b] = ratio(emp[a][b] - model[a][b], se[a][b]);
            max_abs_z = max_abs_z.max(z[a][b].abs());
        }
    }
    let max_abs_mean_z = means.iter().zip(&mean_se).map(|(m, s)| ratio(*m, *s).abs()).fold(0.0, f64::max);
    let labels = points.iter().flat_map(|w| [format!("re({w})"), format!("im({w})")]).collect();
    Ok(CovarianceReport {
        points: points.to_vec(),
        beta,
        samples: complete.len(),
        labels,
        model,
        empirical: emp,
        se,
        z_scores: z,
        max_abs_z,
        means,
        mean_se,
        max_abs_mean_z,
    })
}

/// A test function ψ with compact support [lo, hi].
pub struct TestFunction<'a> {
    pub f: &'a dyn Fn(f64) -> f64,
    pub lo: f64,
    pub hi: f64,
}

impl TestFunction<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            0.0
        } else {
            (self.f)(x)
        }
    }
}

/// σ_ψ² = (1/(4π²β)) ∬_{ℝ²} ((ψ(x²) − ψ(y²))/(x − y))² dx dy.
///
/// With g(x) = ψ(x²) supported in [−X, X], X = √hi, the plane splits into
/// the square (trapezoid on `grid` + 1 nodes, diagonal replaced by g′² from
/// centred differences) and the outside strips, which integrate in closed
/// form to 2∫ g(y)² (1/(X − y) + 1/(X + y)) dy.
pub fn sigma_psi_sq(psi: &TestFunction, beta: f64, grid: usize) -> Result<f64, FluctError> {
    if grid < 64 {
        return Err(FluctError::SupportTooCoarse(format!("{grid} intervals, need at least 64")));
    }
    if !(psi.hi > 0.0) {
        return Ok(0.0);
    }
    let x_end = psi.hi.sqrt();
    let g = |x: f64| psi.eval(x * x);
    let edge = g(x_end);
    let scale = (0..=grid).map(|k| g(-x_end + 2.0 * x_end * k as f64 / grid as f64).abs()).fold(0.0, f64::max);
    if edge.abs() > 1e-9 * scale.max(1e-300) {
        return Err(FluctError::BoundaryJump(edge));
    }
    let h = 2.0 * x_end / grid as f64;
    let xs: Vec<f64> = (0..=grid).map(|k| -x_end + k as f64 * h).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let wt = |k: usize| if k == 0 || k == grid { 0.5 * h } else { h };
    let deriv = |k: usize| {
        let (a, b) = (if k == 0 { 0.0 } else { vals[k - 1] }, if k == grid { 0.0 } else { vals[k + 1] });
        (b - a) / (2.0 * h)
    };
    let mut square = stats::Compensated::default();
    for j in 0..=grid {
        let mut row = stats::Compensated::default();
        for k in 0..=grid {
            let q = if j == k { deriv(k).powi(2) } else { ((vals[j] - vals[k]) / (xs[j] - xs[k])).powi(2) };
            row.add(wt(k) * q);
        }
        square.add(wt(j) * row.value());
    }
    let mut tails = stats::Compensated::default();
    for k in 1..grid {
        let y = xs[k];
        tails.add(wt(k) * vals[k] * vals[k] * (1.0 / (x_end - y) + 1.0 / (x_end + y)));
    }
    let total = square.value() + 2.0 * tails.value();
    Ok(total / (4.0 * std::f64::consts::PI.powi(2) * beta))
}

/// Σψ((λ_i − E)/η) − N∫ψ((x − E)/η) dρ̂ with the deterministic part fixed.
pub struct LinearStatistic<'a> {
    psi: &'a TestFunction<'a>,
    edge: f64,
    eta: f64,
    deterministic: f64,
}

const LINEAR_NODES: usize = 4000;

impl<'a> LinearStatistic<'a> {
    /// Fixes E and N∫ψ_η dρ̂ for the measure `rho` (its edge is E).
    pub fn new(rho: &SquareRootMeasure, psi: &'a TestFunction<'a>, eta: f64, n: usize) -> Result<Self, FluctError> {
        if !(eta > 0.0) {
            return Err(FluctError::Invalid(format!("eta must be positive, got {eta}")));
        }
        let e = rho.edge;
        // x = E − s², so the square-root edge becomes smooth in s.
        let lo = (e + psi.lo * eta).max(rho.support_left);
        let hi = (e + psi.hi * eta).min(e);
        let mut integral = 0.0;
        if hi > lo {
            let (s0, s1) = ((e - hi).sqrt(), (e - lo).sqrt());
            let h = (s1 - s0) / LINEAR_NODES as f64;
            let mut acc = stats::Compensated::default();
            for k in 0..=LINEAR_NODES {
                let s = s0 + k as f64 * h;
                let x = e - s * s;
                let w = if k == 0 || k == LINEAR_NODES {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc.add(w * psi.eval((x - e) / eta) * rho.density(x) * 2.0 * s);
            }
            integral = acc.value() * h / 3.0;
        }
        Ok(Self { psi, edge: e, eta, deterministic: n as f64 * integral })
    }

    pub fn deterministic_part(&self) -> f64 {
        self.deterministic
    }

    pub fn eval(&self, state: &ParticleState) -> f64 {
        let sum = stats::compensated_sum(state.particles.iter().map(|&l| self.psi.eval((l - self.edge) / self.eta)));
        sum - self.deterministic
    }
}

/// Linear statistic of one configuration against ρ̂ at the state's time.
pub fn linear_statistic(
    state: &ParticleState,
    sol: &MkvSolution,
    psi: &TestFunction,
    eta: f64,
) -> Result<f64, FluctError> {
    let rho = measure_at(sol, state.t)?;
    Ok(LinearStatistic::new(&rho, psi, eta, state.n())?.eval(state))
}

/// Mean shift of the linear statistic, −(2 − β)/(4β)·ψ(0).
pub fn linear_mean_shift(beta: f64, psi: &TestFunction) -> f64 {
    -(2.0 - beta) / (4.0 * beta) * psi.eval(0.0)
}

/// Admissible window: (t − s)² ≤ `max_ratio` · min(√|w_t|, √|w′_t|).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvWindow {
    pub max_ratio: f64,
}

impl Default for QvWindow {
    fn default() -> Self {
        Self { max_ratio: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QvReport {
    pub s: f64,
    pub t: f64,
    pub w: Complex64,
    pub w2: Complex64,
    /// Time integral of the weighted fourth-order Stieltjes integral.
    pub integral: Complex64,
    pub closed_form: Complex64,
    /// |integral − closed_form| / |t-endpoint term|.
    pub deviation: f64,
    /// (t − s)² / min √|w_t|.
    pub window_ratio: f64,
}

struct Track {
    w: Vec<Complex64>,
    z: Vec<Complex64>,
    m: Vec<Complex64>,
    dm: Vec<Complex64>,
}

fn track(sol: &MkvSolution, target: Complex64, from: usize, to: usize) -> Result<Track, FluctError> {
    let t = sol.times[to];
    let flip = target.im < 0.0;
    let up = if flip { target.conj() } else { target };
    let u = sol.shoot(t, up, None)?;
    let c = sol.trace(u, to, false)?;
    let mut out = Track { w: vec![], z: vec![], m: vec![], dm: vec![] };
    for s in &c.samples[from..=to] {
        let (e, _) = sol.edge_interp(s.t)?;
        let (z, m, dm) = if flip { (s.z.conj(), s.mhat.conj(), s.mhat_z().conj()) } else { (s.z, s.mhat, s.mhat_z()) };
        out.w.push(z - e);
        out.z.push(z);
        out.m.push(m);
        out.dm.push(dm);
    }
    Ok(out)
}

/// Integrates ∫_s^t √w_q√w′_q/(√w_t√w′_t) ∫ρ̂_q(x)/((x − z_q)²(x − z′_q)²)dx dq
/// along the characteristics ending at E_t + w and E_t + w′, and compares it
/// with 1/(4√w_t√w′_t)·(1/(√w_t + √w′_t)² − 1/(√w_s + √w′_s)²).
pub fn quadratic_variation_check(
    sol: &MkvSolution,
    w: Complex64,
    w2: Complex64,
    s: f64,
    t: f64,
    window: QvWindow,
) -> Result<QvReport, FluctError> {
    check_cut(w)?;
    check_cut(w2)?;
    if (w - w2).norm() < 1e-9 * w.norm().max(w2.norm()) {
        return Err(FluctError::Invalid("the two points must differ".into()));
    }
    if !(s <= t) {
        return Err(FluctError::WindowViolated(format!("s = {s} exceeds t = {t}")));
    }
    let window_ratio = (t - s).powi(2) / w.norm().sqrt().min(w2.norm().sqrt());
    if window_ratio > window.max_ratio {
        return Err(FluctError::WindowViolated(format!(
            "(t - s)^2 / sqrt|w| = {window_ratio} exceeds {}",
            window.max_ratio
        )));
    }
    let (ks, kt) = (sol.step_index(s)?, sol.step_index(t)?);
    let (e, _) = sol.edge_interp(t)?;
    let a = track(sol, e + w, ks, kt)?;
    let b = track(sol, e + w2, ks, kt)?;
    let last = a.w.len() - 1;
    let (rt, rt2) = (a.w[last].sqrt(), b.w[last].sqrt());
    let integrand: Vec<Complex64> = (0..=last)
        .map(|q| {
            let d = a.z[q] - b.z[q];
            let inner = (a.dm[q] + b.dm[q]) / (d * d) - 2.0 * (a.m[q] - b.m[q]) / (d * d * d);
            a.w[q].sqrt() * b.w[q].sqrt() / (rt * rt2) * inner
        })
        .collect();
    let h = sol.step_size();
    let mut integral = Complex64::new(0.0, 0.0);
    for p in integrand.windows(2) {
        integral += 0.5 * h * (p[0] + p[1]);
    }
    let term = |x: Complex64, y: Complex64| 1.0 / (4.0 * rt * rt2 * (x + y) * (x + y));
    let head = term(rt, rt2);
    let closed_form = head - term(a.w[0].sqrt(), b.w[0].sqrt());
    Ok(QvReport {
        s,
        t,
        w,
        w2,
        integral,
        closed_form,
        deviation: (integral - closed_form).norm() / head.norm(),
        window_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mkv::evolve;
    use crate::model::Potential;
    use crate::seeds::{normals, rng_from_seed};
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kernel_values() {
        assert!((k_edge(c(1.0, 0.0), c(1.0, 0.0), 2.0).unwrap().re - 0.0625).abs() < 1e-15);
        assert!((k_edge(c(4.0, 0.0), c(4.0, 0.0), 1.0).unwrap().re - 1.0 / 128.0).abs() < 1e-15);
        assert!(matches!(k_edge(c(-1.0, 0.0), c(1.0, 0.0), 2.0), Err(FluctError::BranchCut(_))));
        assert!(matches!(k_edge(c(0.0, 0.0), c(1.0, 0.0), 2.0), Err(FluctError::BranchCut(_))));
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_inverse_in_beta(a in -5.0..5.0f64, b in 0.01..5.0f64, x in -5.0..5.0f64, y in -5.0..5.0f64) {
            let (w, w2) = (c(a, b), c(x, y));
            prop_assume!(!(y == 0.0 && x <= 0.0));
            prop_assert_eq!(k_edge(w, w2, 2.0).unwrap(), k_edge(w2, w, 2.0).unwrap());
            prop_assert_eq!(k_edge(w, w2, 1.0).unwrap(), 2.0 * k_edge(w, w2, 2.0).unwrap());
        }
    }

    #[test]
    fn bulk_limit_has_opposite_sign() {
        let rep = k_bulk_limit_check(&[-1e2, -1e3, -1e4], 2.0).unwrap();
        let last = rep.rows.last().unwrap();
        assert!((last.opposite_ratio + 1.0).norm() < 1e-2, "{:?}", last);
        assert!(last.same_relative < 1e-2);
        assert!(rep.opposite_monotone_to_minus_one && rep.same_monotone && !rep.opposite_monotone);
    }

    #[test]
    fn model_is_positive_definite() {
        let mut rng = rng_from_seed(7);
        for _ in 0..50 {
            let v = normals(&mut rng, 8);
            let pts: Vec<Complex64> = (0..4).map(|j| c(v[2 * j], 0.05 + v[2 * j + 1].abs())).collect();
            let m = model_covariance(&pts, 2.0).unwrap();
            assert!(stats::cholesky(&m).is_some(), "{pts:?}");
        }
    }

    fn synthetic(points: &[Complex64], n: usize, seed: u64) -> Vec<GammaSample> {
        let cov = model_covariance(points, 2.0).unwrap();
        let l = stats::cholesky(&cov).unwrap();
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::new();
        for traj in 0..n {
            let e = normals(&mut rng, cov.len());
            let x: Vec<f64> = (0..cov.len()).map(|i| (0..=i).map(|j| l[i][j] * e[j]).sum()).collect();
            for (p, &w) in points.iter().enumerate() {
                out.push(GammaSample { traj, t: 0.0, w, eta: 1.0, value: c(x[2 * p], x[2 * p + 1]) });
            }
        }
        out
    }

    #[test]
    fn estimator_reproduces_synthetic_truth() {
        let pts = [c(1.0, 0.5), c(2.0, 1.0), c(-1.0, 1.0)];
        let mut hits = 0;
        for rep in 0..100 {
            let r = empirical_covariance(&synthetic(&pts, 400, rep), &pts, 2.0).unwrap();
            if r.max_abs_z <= 3.5 {
                hits += 1;
            }
        }
        // 21 distinct entries per repetition, so a few 3σ excursions are expected.
        assert!(hits >= 95, "{hits}");
        let few = synthetic(&pts, 50, 1);
        assert!(matches!(empirical_covariance(&few, &pts, 2.0), Err(FluctError::InsufficientSamples { got: 50, .. })));
    }

    #[test]
    fn gamma_examples() {
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::quadratic(), &[], 0.01, 1e-3).unwrap();
        let n = 300;
        let g = crate::rigidity::classical_locations(&SquareRootMeasure::semicircle(), n, n);
        let st = ParticleState::new(0.01, 2.0, g).unwrap();
        let eta = (n as f64).powf(-0.4);
        for w in [c(1.0, 0.0), c(2.0, 0.0), c(1.0, 1.0)] {
            let v = gamma_statistic(&st, &sol, w, eta).unwrap();
            assert!(v.norm() < 5.0, "{w} {v}");
        }
        let st1 = ParticleState::new(0.01, 1.0, st.particles.clone()).unwrap();
        let d = gamma_statistic(&st1, &sol, c(1.0, 1.0), eta).unwrap()
            - gamma_statistic(&st, &sol, c(1.0, 1.0), eta).unwrap();
        assert!((d - mean_shift(1.0, c(1.0, 1.0))).norm() < 1e-12);
    }

    fn quartic(x: f64) -> f64 {
        (1.0 - x * x).powi(2)
    }

    #[test]
    fn sigma_psi_sq_examples() {
        let zero = TestFunction { f: &|_| 0.0, lo: -1.0, hi: 1.0 };
        assert_eq!(sigma_psi_sq(&zero, 2.0, 200).unwrap(), 0.0);
        let psi = TestFunction { f: &quartic, lo: -1.0, hi: 1.0 };
        let a = sigma_psi_sq(&psi, 2.0, 1000).unwrap();
        let b = sigma_psi_sq(&psi, 2.0, 2000).unwrap();
        assert!((a - b).abs() < 1e-3 * b, "{a} {b}");
        let scaled_f = |x: f64| 3.0 * quartic(x);
        let scaled = TestFunction { f: &scaled_f, lo: -1.0, hi: 1.0 };
        assert!((sigma_psi_sq(&scaled, 2.0, 1000).unwrap() - 9.0 * a).abs() < 1e-12 * a);
        assert!((sigma_psi_sq(&psi, 1.0, 1000).unwrap() - 2.0 * a).abs() < 1e-12 * a);
        let step = TestFunction { f: &|_| 1.0, lo: -1.0, hi: 1.0 };
        assert!(matches!(sigma_psi_sq(&step, 2.0, 200), Err(FluctError::BoundaryJump(_))));
        assert!(matches!(sigma_psi_sq(&psi, 2.0, 10), Err(FluctError::SupportTooCoarse(_))));
    }

    #[test]
    fn sigma_psi_sq_matches_monte_carlo() {
        // Independent estimate: uniform samples on the square plus an
        // exponential-tail sampler for the outside region.
        let g = |x: f64| if x.abs() <= 1.0 { quartic(x * x) } else { 0.0 };
        let mut rng = rng_from_seed(11);
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if x != y {
                acc += ((g(x) - g(y)) / (x - y)).powi(2);
            }
        }
        let square = 4.0 * acc / samples as f64;
        // Outside strips in closed form over x, midpoint rule in y.
        let m = 200_000;
        let mut tails = 0.0;
        for k in 0..m {
            let y = -1.0 + (k as f64 + 0.5) * 2.0 / m as f64;
            tails += g(y).powi(2) * (1.0 / (1.0 - y) + 1.0 / (1.0 + y)) * 2.0 / m as f64;
        }
        let oracle = (square + 2.0 * tails) / (8.0 * std::f64::consts::PI.powi(2));
        let psi = TestFunction { f: &quartic, lo: -1.0, hi: 1.0 };
        let q = sigma_psi_sq(&psi, 2.0, 2000).unwrap();
        assert!((q - oracle).abs() < 0.01 * oracle, "{q} {oracle}");
        assert!((q - 0.1235).abs() < 5e-4, "{q}");
    }

    #[test]
    fn linear_statistic_examples() {
        let sc = SquareRootMeasure::semicircle();
        let far = TestFunction { f: &|x| (1.0 - (x - 3.0).powi(2)).max(0.0).powi(2), lo: 2.0, hi: 4.0 };
        let st = ParticleState::new(0.0, 2.0, crate::rigidity::classical_locations(&sc, 200, 200)).unwrap();
        let lin = LinearStatistic::new(&sc, &far, 0.05, 200).unwrap();
        assert_eq!(lin.eval(&st), 0.0);
        let psi = TestFunction { f: &quartic, lo: -1.0, hi: 1.0 };
        // N∫ψ((x − 2)/η)ρ: compare against a brute midpoint rule.
        let eta = 0.1;
        let lin = LinearStatistic::new(&sc, &psi, eta, 1000).unwrap();
        let m = 200_000;
        let brute: f64 = (0..m)
            .map(|k| {
                let x = 2.0 - eta + (k as f64 + 0.5) * eta / m as f64;
                quartic((x - 2.0) / eta) * sc.density(x) * eta / m as f64
            })
            .sum::<f64>()
            * 1000.0;
        assert!((lin.deterministic_part() - brute).abs() < 1e-6 * brute);
    }

    #[test]
    fn quadratic_variation_examples() {
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::quadratic(), &[], 0.2, 1e-3).unwrap();
        let (w, w2) = (c(0.0, 0.01), c(0.01, 0.02));
        let zero = quadratic_variation_check(&sol, w, w2, 0.2, 0.2, QvWindow::default()).unwrap();
        assert_eq!(zero.deviation, 0.0);
        let r = quadratic_variation_check(&sol, w, w2, 0.1, 0.2, QvWindow::default()).unwrap();
        assert!(r.deviation < 0.15, "{r:?}");
        assert!(matches!(
            quadratic_variation_check(&sol, w, w2, 0.0, 0.2, QvWindow { max_ratio: 0.1 }),
            Err(FluctError::WindowViolated(_))
        ));
    }
}
