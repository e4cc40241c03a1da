//! Classical locations, the interpolation scale f(t), the spectral domains
//! and Monte Carlo verdicts for edge rigidity.

use crate::dbm::Trajectory;
use crate::mkv::{MkvError, MkvSolution};
use crate::model::{stieltjes_of_particles, ModelError, ParticleState, SquareRootMeasure};
use crate::stats;
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

const GRID: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigidityError {
    #[error("sample time {0} does not match a solved time")]
    TimeMismatch(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error(transparent)]
    Mkv(#[from] MkvError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RigidityConfig {
    /// Initial regularity scale η*.
    pub eta_star: f64,
    /// Slope 𝔠 > 0 of √f.
    pub frak_c: f64,
    /// Control parameter M.
    pub m: f64,
    /// Radius r of the ball around the edge.
    pub r: f64,
    /// Far-field distance 𝔯.
    pub frak_r: f64,
    /// Largest index as a fraction of N for classical locations.
    pub edge_fraction: f64,
    /// Pass threshold for max_i N^{2/3} i^{1/3} |λ_i − γ_i|.
    pub threshold: f64,
}

impl RigidityConfig {
    /// Defaults for size N: η* = N^{−1/3+0.2}, 𝔠 = 0.5, M = 5, r = 0.5,
    /// 𝔯 = 3, threshold M².
    pub fn for_size(n: usize) -> Self {
        let m = 5.0;
        Self {
            eta_star: (n as f64).powf(-1.0 / 3.0 + 0.2),
            frak_c: 0.5,
            m,
            r: 0.5,
            frak_r: 3.0,
            edge_fraction: 0.2,
            threshold: m * m,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), RigidityError> {
        let mut errs = Vec::new();
        if !(self.frak_c > 0.0) {
            errs.push(format!("frak_c must be positive, got {}", self.frak_c));
        }
        if !(self.eta_star >= (n as f64).powf(-2.0 / 3.0)) {
            errs.push(format!("eta_star {} is below N^(-2/3)", self.eta_star));
        }
        if !(self.m > 0.0 && self.r > 0.0 && self.frak_r > 1.0) {
            errs.push("need M > 0, r > 0 and frak_r > 1".into());
        }
        if !(self.edge_fraction > 0.0 && self.edge_fraction <= 1.0) {
            errs.push(format!("edge_fraction must lie in (0, 1], got {}", self.edge_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RigidityError::InvalidConfig(errs.join("; ")))
        }
    }

    /// Start of the rigidity window, √η*/𝔠.
    pub fn rigidity_time(&self) -> f64 {
        self.eta_star.sqrt() / self.frak_c
    }
}

/// f(t) = (max{√η* − 𝔠t, M N^{−1/3}})².
pub fn f_of_t(cfg: &RigidityConfig, n: usize, t: f64) -> f64 {
    let floor = cfg.m * (n as f64).powf(-1.0 / 3.0);
    (cfg.eta_star.sqrt() - cfg.frak_c * t).max(floor).powi(2)
}

/// γ_1..γ_{i_max} with (i − 1)/N = ρ([γ_i, E]).
pub fn classical_locations(rho: &SquareRootMeasure, n: usize, i_max: usize) -> Vec<f64> {
    (1..=i_max.min(n)).map(|i| rho.quantile_from_edge((i - 1) as f64 / n as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainMargin {
    /// Smallest bound/|m_0 − m̂_0| over the grid (≥ 1 passes).
    pub worst_ratio: f64,
    pub points: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialAssumptionReport {
    pub edge_ok: bool,
    pub lambda_1: f64,
    pub edge_bound: f64,
    pub inner: DomainMargin,
    pub outer: DomainMargin,
    pub far: DomainMargin,
}

impl InitialAssumptionReport {
    pub fn pass(&self) -> bool {
        self.edge_ok && self.inner.pass && self.outer.pass && self.far.pass
    }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn margin(
    points: impl Iterator<Item = (Complex64, f64)>,
    m0: impl Fn(Complex64) -> Result<Complex64, ModelError>,
    mhat: &SquareRootMeasure,
) -> Result<DomainMargin, ModelError> {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for (z, bound) in points {
        let diff = (m0(z)? - mhat.stieltjes_unchecked(z)).norm();
        worst = worst.min(bound / diff.max(1e-300));
        count += 1;
    }
    Ok(DomainMargin { worst_ratio: worst, points: count, pass: worst >= 1.0 })
}

/// Points z = x + iy of the upper stadium at distance `d` from [left, edge],
/// `count` of them, avoiding the real axis.
fn stadium(left: f64, edge: f64, d: f64, count: usize) -> Vec<Complex64> {
    let cap = std::f64::consts::FRAC_PI_2 * d;
    let total = 2.0 * cap + (edge - left);
    (0..count)
        .map(|k| {
            let s = total * (k as f64 + 0.5) / count as f64;
            if s < cap {
                let phi = s / d;
                Complex64::new(edge, 0.0) + d * Complex64::from_polar(1.0, phi)
            } else if s < cap + (edge - left) {
                Complex64::new(edge - (s - cap), d)
            } else {
                let phi = std::f64::consts::FRAC_PI_2 + (s - cap - (edge - left)) / d;
                Complex64::new(left, 0.0) + d * Complex64::from_polar(1.0, phi)
            }
        })
        .collect()
}

/// Checks the initial-data assumption on 40×40 grids in each domain.
pub fn check_initial_assumption(
    mu0: &ParticleState,
    rho0: &SquareRootMeasure,
    cfg: &RigidityConfig,
) -> Result<InitialAssumptionReport, RigidityError> {
    let n = mu0.n();
    let nf = n as f64;
    let e0 = rho0.edge;
    let eta_floor = 1.0 / nf;
    let m0 = |z: Complex64| stieltjes_of_particles(&mu0.particles, z);
    let in_ball = |z: Complex64| (z - e0).norm() <= cfg.r;

    // Inner: offsets on both sides of the edge, log-spaced heights.
    let offsets: Vec<f64> = logspace(1e-4 * cfg.r, cfg.r, GRID / 2).into_iter().flat_map(|k| [k, -k]).collect();
    let heights = logspace(eta_floor, cfg.r, GRID);
    let inner_pts: Vec<(Complex64, f64)> = offsets
        .iter()
        .flat_map(|&k| heights.iter().map(move |&y| Complex64::new(e0 + k, y)))
        .filter(|&z| in_ball(z) && z.im * rho0.stieltjes_unchecked(z).im >= cfg.eta_star.powf(1.5))
        .map(|z| (z, cfg.m / (nf * z.im)))
        .collect();
    let inner = margin(inner_pts.into_iter(), m0, rho0)?;

    let right = logspace(cfg.eta_star, cfg.r, GRID);
    let outer_pts: Vec<(Complex64, f64)> = right
        .iter()
        .flat_map(|&k| heights.iter().map(move |&y| Complex64::new(e0 + k, y)))
        .filter(|&z| in_ball(z))
        .map(|z| (z, 1.0 / (cfg.m * nf * z.im)))
        .collect();
    let outer = margin(outer_pts.into_iter(), m0, rho0)?;

    let far_pts: Vec<(Complex64, f64)> = (0..GRID)
        .flat_map(|j| {
            let d = cfg.frak_r - 1.0 + 2.0 * j as f64 / (GRID - 1) as f64;
            stadium(rho0.support_left, e0, d, GRID)
        })
        .map(|z| (z, cfg.m / nf))
        .collect();
    let far = margin(far_pts.into_iter(), m0, rho0)?;

    let lambda_1 = mu0.particles[0];
    Ok(InitialAssumptionReport {
        edge_ok: lambda_1 <= e0 + cfg.eta_star,
        lambda_1,
        edge_bound: e0 + cfg.eta_star,
        inner,
        outer,
        far,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Domains {
    pub inner: bool,
    pub outer: bool,
    pub far: bool,
}

impl Domains {
    pub fn any(&self) -> bool {
        self.inner || self.outer || self.far
    }
}

/// Which of the three spectral domains at time t contain z.
pub fn domain_membership(
    z: Complex64,
    t: f64,
    sol: &MkvSolution,
    cfg: &RigidityConfig,
    n: usize,
) -> Result<Domains, RigidityError> {
    if !(z.im > 0.0) {
        return Ok(Domains::default());
    }
    let (e, _) = sol.edge_interp(t)?;
    let left = sol.left_edge_interp(t)?;
    let f = f_of_t(cfg, n, t);
    let ball = (z - e).norm() <= cfg.r - t / cfg.frak_c;
    let inner = ball && z.im * sol.mhat(t, z)?.im >= f.powf(1.5);
    let outer = ball && z.re >= e + f;
    let dist = if z.re > e {
        (z - e).norm()
    } else if z.re < left {
        (z - left).norm()
    } else {
        z.im
    };
    let far = dist >= cfg.frak_r - 1.0 + t / cfg.frak_c && dist <= cfg.frak_r + 1.0 - t / cfg.frak_c;
    Ok(Domains { inner, outer, far })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeStats {
    pub t: f64,
    pub in_rigidity_window: bool,
    /// Quantiles (50, 90, 95, 99 %) over trajectories of max_i s_{i,t}.
    pub q50: f64,
    pub q90: f64,
    pub q95: f64,
    pub q99: f64,
    /// Fraction of trajectories with max_i s_{i,t} ≤ threshold.
    pub pass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityReport {
    pub n: usize,
    pub i_max: usize,
    pub trajectories: usize,
    pub threshold: f64,
    pub rigidity_time: f64,
    pub per_time: Vec<TimeStats>,
    /// Per trajectory, max of s over i ≤ i_max and times in the window.
    pub window_max: Vec<f64>,
    pub window_q95: f64,
    pub window_pass_fraction: f64,
    /// Per trajectory, max of s over i ≤ i_max and every sample time.
    pub overall_max: Vec<f64>,
    pub overall_q95: f64,
    #[serde(skip)]
    deviations: Vec<(f64, Vec<Vec<f64>>)>,
}

impl RigidityReport {
    /// Long CSV `t,i,s_scaled_deviation`, one row per trajectory.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,i,s_scaled_deviation")?;
        for (t, rows) in &self.deviations {
            for row in rows {
                for (i, s) in row.iter().enumerate() {
                    writeln!(w, "{},{},{}", t, i + 1, s)?;
                }
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }
}

/// ρ̂_t as a measure: the initial one at t = 0, otherwise reconstructed.
pub fn measure_at(sol: &MkvSolution, t: f64) -> Result<SquareRootMeasure, RigidityError> {
    if sol.step_index(t)? == 0 {
        return Ok(sol.initial.clone());
    }
    Ok(sol.invert_stieltjes(t)?.measure)
}

fn sample_times(ensemble: &[Trajectory]) -> Result<Vec<f64>, RigidityError> {
    let first = ensemble.first().ok_or(RigidityError::EmptyEnsemble)?;
    let times: Vec<f64> = first.snapshots.iter().map(|s| s.t).collect();
    for tr in ensemble {
        if tr.snapshots.len() != times.len() || tr.snapshots.iter().zip(&times).any(|(s, t)| s.t != *t) {
            return Err(RigidityError::TimeMismatch(tr.snapshots.first().map_or(f64::NAN, |s| s.t)));
        }
    }
    Ok(times)
}

/// Scaled deviations s_{i,t} = N^{2/3} i^{1/3} |λ_i(t) − γ_i(t)| for every
/// trajectory and sample time, with summary statistics.
pub fn rigidity_verdict(
    ensemble: &[Trajectory],
    sol: &MkvSolution,
    cfg: &RigidityConfig,
    i_max: usize,
) -> Result<RigidityReport, RigidityError> {
    let times = sample_times(ensemble)?;
    let n = ensemble[0].snapshots[0].n();
    let i_max = i_max.min(((cfg.edge_fraction * n as f64).floor() as usize).max(1)).min(n);
    let nf = n as f64;
    let t_rigid = cfg.rigidity_time();
    let mut per_time = Vec::new();
    let mut deviations = Vec::new();
    let mut window_max = vec![f64::NEG_INFINITY; ensemble.len()];
    let mut overall_max = vec![f64::NEG_INFINITY; ensemble.len()];
    let mut cache: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (k, &t) in times.iter().enumerate() {
        sol.step_index(t).map_err(|_| RigidityError::TimeMismatch(t))?;
        let gamma = match cache.get(&t.to_bits()) {
            Some(g) => g.clone(),
            None => {
                let g = classical_locations(&measure_at(sol, t)?, n, i_max);
                cache.insert(t.to_bits(), g.clone());
                g
            }
        };
        let rows: Vec<Vec<f64>> = ensemble
            .iter()
            .map(|tr| {
                let p = &tr.snapshots[k].particles;
                (0..i_max).map(|i| nf.powf(2.0 / 3.0) * ((i + 1) as f64).cbrt() * (p[i] - gamma[i]).abs()).collect()
            })
            .collect();
        let maxes: Vec<f64> = rows.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
        for (w, m) in overall_max.iter_mut().zip(&maxes) {
            *w = w.max(*m);
        }
        let in_window = t >= t_rigid - 1e-12;
        if in_window {
            for (w, m) in window_max.iter_mut().zip(&maxes) {
                *w = w.max(*m);
            }
        }
        per_time.push(TimeStats {
            t,
            in_rigidity_window: in_window,
            q50: stats::quantile(&maxes, 0.5),
            q90: stats::quantile(&maxes, 0.9),
            q95: stats::quantile(&maxes, 0.95),
            q99: stats::quantile(&maxes, 0.99),
            pass_fraction: maxes.iter().filter(|&&m| m <= cfg.threshold).count() as f64 / maxes.len() as f64,
        });
        deviations.push((t, rows));
    }
    let any_window = window_max.iter().all(|w| w.is_finite());
    let (window_q95, window_pass_fraction) = if any_window {
        (
            stats::quantile(&window_max, 0.95),
            window_max.iter().filter(|&&m| m <= cfg.threshold).count() as f64 / window_max.len() as f64,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RigidityReport {
        n,
        i_max,
        trajectories: ensemble.len(),
        threshold: cfg.threshold,
        rigidity_time: t_rigid,
        per_time,
        window_max,
        window_q95,
        window_pass_fraction,
        overall_q95: stats::quantile(&overall_max, 0.95),
        overall_max,
        deviations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeBoundReport {
    pub pass_fraction: f64,
    pub trajectories: usize,
    /// Per sample time: (t, E_t + f(t), fraction with λ_1 ≤ E_t + f(t)).
    pub per_time: Vec<(f64, f64, f64)>,
}

/// Fraction of trajectories with λ_1(t) ≤ E_t + f(t) at every sample time.
pub fn edge_bound_verdict(
    ensemble: &[Trajectory],
    sol: &MkvSolution,
    cfg: &RigidityConfig,
) -> Result<EdgeBoundReport, RigidityError> {
    let times = sample_times(ensemble)?;
    let n = ensemble[0].snapshots[0].n();
    let mut ok = vec![true; ensemble.len()];
    let mut per_time = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let (e, _) = sol.edge_interp(t).map_err(|_| RigidityError::TimeMismatch(t))?;
        let bound = e + f_of_t(cfg, n, t);
        let mut pass = 0;
        for (flag, tr) in ok.iter_mut().zip(ensemble) {
            let good = tr.snapshots[k].particles[0] <= bound;
            pass += good as usize;
            *flag &= good;
        }
        per_time.push((t, bound, pass as f64 / ensemble.len() as f64));
    }
    Ok(EdgeBoundReport {
        pass_fraction: ok.iter().filter(|&&b| b).count() as f64 / ok.len() as f64,
        trajectories: ensemble.len(),
        per_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mkv::evolve;
    use crate::model::Potential;

    fn cfg() -> RigidityConfig {
        RigidityConfig {
            eta_star: 0.01,
            frak_c: 0.5,
            m: 0.001 * 10.0,
            r: 0.5,
            frak_r: 3.0,
            edge_fraction: 0.2,
            threshold: 25.0,
        }
    }

    #[test]
    fn f_examples() {
        // M N^{-1/3} = 0.001 with N = 1000 and M = 0.01.
        let c = cfg();
        assert!((f_of_t(&c, 1000, 0.0) - 0.01).abs() < 1e-15);
        assert!((f_of_t(&c, 1000, 0.1) - 0.0025).abs() < 1e-15);
        assert!((f_of_t(&c, 1000, 1.0) - 1e-6).abs() < 1e-18);
        let ts: Vec<f64> = (0..200).map(|k| k as f64 * 0.002).collect();
        for &s in &ts {
            for &t in ts.iter().filter(|&&t| t >= s) {
                assert!(f_of_t(&c, 1000, s).sqrt() <= f_of_t(&c, 1000, t).sqrt() + c.frak_c * (t - s) + 1e-15);
            }
        }
    }

    #[test]
    fn classical_locations_of_semicircle() {
        let sc = SquareRootMeasure::semicircle();
        let g = classical_locations(&sc, 1000, 200);
        assert_eq!(g[0], 2.0);
        assert!((g[1] - 1.97190).abs() < 5e-5, "{}", g[1]);
        for (i, &x) in g.iter().enumerate() {
            assert!((sc.mass_right_of(x) - i as f64 / 1000.0).abs() < 1e-10);
        }
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn classical_start_passes_and_shift_fails() {
        let sc = SquareRootMeasure::semicircle();
        let n = 400;
        let mut c = RigidityConfig::for_size(n);
        c.m = 5.0;
        let g = classical_locations(&sc, n, n);
        let mu = ParticleState::new(0.0, 2.0, g.clone()).unwrap();
        let rep = check_initial_assumption(&mu, &sc, &c).unwrap();
        assert!(rep.edge_ok && rep.far.pass && rep.inner.pass, "{rep:?}");
        let shifted: Vec<f64> = g.iter().map(|x| x + 2.0 * c.eta_star).collect();
        let mu = ParticleState::new(0.0, 2.0, shifted).unwrap();
        assert!(!check_initial_assumption(&mu, &sc, &c).unwrap().edge_ok);
    }

    #[test]
    fn domains_in_stationary_case() {
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::quadratic(), &[], 0.05, 1e-3).unwrap();
        let c = cfg();
        let f = f_of_t(&c, 1000, 0.05);
        let d = domain_membership(Complex64::new(2.0 + 2.0 * f, 1e-6), 0.05, &sol, &c, 1000).unwrap();
        assert!(d.outer);
        let d = domain_membership(Complex64::new(2.0 + 3.0, 0.01), 0.05, &sol, &c, 1000).unwrap();
        assert!(d.far && !d.outer);
        let d = domain_membership(Complex64::new(1.9, 0.05), 0.05, &sol, &c, 1000).unwrap();
        assert!(d.inner && !d.outer);
    }

    #[test]
    fn classical_trajectories_have_zero_deviation() {
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::quadratic(), &[], 0.02, 1e-3).unwrap();
        let n = 200;
        let g = classical_locations(&SquareRootMeasure::semicircle(), n, n);
        let snaps: Vec<ParticleState> =
            [0.0, 0.01, 0.02].iter().map(|&t| ParticleState::new(t, 2.0, g.clone()).unwrap()).collect();
        let tr = Trajectory { snapshots: snaps, seed: 0, config_hash: String::new() };
        let c = RigidityConfig::for_size(n);
        let rep = rigidity_verdict(std::slice::from_ref(&tr), &sol, &c, 20).unwrap();
        assert!(rep.per_time.iter().all(|p| p.q99 < 1e-6), "{:?}", rep.per_time);
        assert_eq!(edge_bound_verdict(&[tr], &sol, &c).unwrap().pass_fraction, 1.0);
    }
}
