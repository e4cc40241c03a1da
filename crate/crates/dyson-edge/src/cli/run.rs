//! Subcommand drivers. Each writes its artifacts under the output directory
//! and returns a manifest; statistics files depend only on the config and
//! the master seed, never on the worker count.

use super::config::*;
use crate::dbm::{run_ensemble, DbmConfig, DbmError, Trajectory};
use crate::fluct::{
    empirical_covariance, linear_mean_shift, sigma_psi_sq, write_gamma_csv, FluctError, GammaProbe, GammaSample,
    LinearStatistic, TestFunction,
};
use crate::mkv::{check_gap_growth, check_im_estimates, check_sqrt_growth, SqrtGrowthWindow};
use crate::mkv::{evolve, MkvError};
use crate::model::{ModelError, ParticleState, Potential, SquareRootMeasure, DEFAULT_RADIUS};
use crate::rigidity::{edge_bound_verdict, rigidity_verdict, RigidityConfig, RigidityError};
use crate::seeds::{derive_seed, Purpose};
use crate::series::{solve_from_mkv, SeriesError};
use crate::stats;
use crate::universality::{
    compare_distributions, coupling_distances, edge_statistic_at, matched_quartic, oracle_edge_samples,
    run_interpolation, sample_beta_ensemble, transport, write_edge_samples_csv, CouplingReport, InterpolationConfig,
    UniversalityError,
};
use crate::Complex64;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("trajectory {index} failed: {message}")]
    FailFast { index: usize, message: String },
    #[error("every trajectory failed")]
    NoTrajectories,
    #[error(transparent)]
    Dbm(#[from] DbmError),
    #[error(transparent)]
    Mkv(#[from] MkvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Rigidity(#[from] RigidityError),
    #[error(transparent)]
    Fluct(#[from] FluctError),
    #[error(transparent)]
    Universality(#[from] UniversalityError),
}

impl RunError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Io { .. } => "io",
            RunError::FailFast { .. } => "fail_fast",
            RunError::NoTrajectories => "no_trajectories",
            RunError::Dbm(_) => "dbm",
            RunError::Mkv(_) => "mkv",
            RunError::Model(_) => "model",
            RunError::Series(_) => "series",
            RunError::Rigidity(_) => "rigidity",
            RunError::Fluct(_) => "fluct",
            RunError::Universality(_) => "universality",
        }
    }
}

/// Settings that come from flags rather than the config file.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
    pub workers: usize,
    pub master_seed: u64,
    pub quiet: bool,
}

impl RunContext {
    /// Flags override the config; the config supplies the rest.
    pub fn resolve(
        cfg: &RunConfig,
        out: Option<PathBuf>,
        seed: Option<u64>,
        workers: Option<usize>,
        quiet: bool,
    ) -> Self {
        Self {
            out: out.unwrap_or_else(|| PathBuf::from(&cfg.global.out_dir)),
            workers: workers.unwrap_or(cfg.global.workers).max(1),
            master_seed: seed.unwrap_or(cfg.global.master_seed),
            quiet,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrajectoryFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Manifest {
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    pub failures: Vec<TrajectoryFailure>,
    pub started_unix: u64,
    pub wall_time_s: f64,
}

struct Recorder<'a> {
    ctx: &'a RunContext,
    artifacts: Vec<String>,
    seeds: Vec<u64>,
    failures: Vec<TrajectoryFailure>,
}

impl<'a> Recorder<'a> {
    fn new(ctx: &'a RunContext) -> Self {
        Self { ctx, artifacts: Vec::new(), seeds: Vec::new(), failures: Vec::new() }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.ctx.path(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn text(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        let path = self.ctx.path(name);
        write(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        let path = self.ctx.path(name);
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(std::io::Error::other)
            .and_then(|_| writeln!(w))
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&path, e))
    }

    /// Keeps the successful trajectories, recording the failures.
    fn collect(
        &mut self,
        master_seed: u64,
        results: Vec<Result<Trajectory, DbmError>>,
        fail_fast: bool,
    ) -> Result<Vec<Trajectory>, RunError> {
        let mut good = Vec::with_capacity(results.len());
        for (index, r) in results.into_iter().enumerate() {
            let seed = derive_seed(master_seed, index as u64, Purpose::Trajectory);
            self.seeds.push(seed);
            match r {
                Ok(t) => good.push(t),
                Err(e) => {
                    if fail_fast {
                        return Err(RunError::FailFast { index, message: e.to_string() });
                    }
                    self.failures.push(TrajectoryFailure { index, seed, message: e.to_string() });
                }
            }
        }
        if good.is_empty() {
            return Err(RunError::NoTrajectories);
        }
        Ok(good)
    }

    fn finish(
        self,
        subcommand: &str,
        cfg: &RunConfig,
        started: SystemTime,
        clock: Instant,
    ) -> Result<Manifest, RunError> {
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config_hash: cfg.hash(),
            master_seed: self.ctx.master_seed,
            workers: self.ctx.workers,
            seeds: self.seeds,
            artifacts: self.artifacts,
            failures: self.failures,
            started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        let path = self.ctx.path(&format!("manifest_{subcommand}.json"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, std::io::Error::other(e)))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(manifest)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn potential_from(coeffs: &[f64]) -> Result<Potential, RunError> {
    Ok(Potential::new(coeffs.to_vec(), DEFAULT_RADIUS)?)
}

fn initial_measure(kind: &str, km_degree: f64) -> Result<SquareRootMeasure, RunError> {
    Ok(match kind {
        "kesten_mckay" => SquareRootMeasure::kesten_mckay(km_degree)?,
        _ => SquareRootMeasure::semicircle(),
    })
}

/// Quantiles at (i − ½)/N, i = 1..N.
fn classical_configuration(rho: &SquareRootMeasure, n: usize) -> Vec<f64> {
    (0..n).map(|i| rho.quantile_from_edge((i as f64 + 0.5) / n as f64)).collect()
}

fn oracle_state(n: usize, beta: f64, master_seed: u64, k: usize) -> Result<ParticleState, DbmError> {
    let seed = derive_seed(master_seed, k as u64, Purpose::InitialData);
    sample_beta_ensemble(n, beta, seed)
        .map_err(|e| DbmError::InvalidConfig(format!("initial data for trajectory {k}: {e}")))
}

/// Steps of roughly `dt` that land exactly on `t_end`.
fn mkv_step(t_end: f64, dt: f64) -> f64 {
    if t_end <= 0.0 {
        return dt;
    }
    t_end / (t_end / dt).ceil()
}

fn prepare(ctx: &RunContext) -> Result<(), RunError> {
    std::fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))
}

/// β-DBM ensemble with per-run trajectory files and a summary table.
pub fn run_simulate(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.dbm.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let mut base = DbmConfig::new(s.n, s.beta, potential_from(&s.potential)?, s.dt, s.t_end, 0);
    base.collision_guard = s.guard;
    let classical = classical_configuration(&SquareRootMeasure::semicircle(), s.n);
    let results = run_ensemble(&base, ctx.master_seed, cfg.global.ensemble_size, ctx.workers, &s.sample_times, |k| {
        if s.initial == "classical" {
            Ok(ParticleState::new(0.0, s.beta, classical.clone())?)
        } else {
            oracle_state(s.n, s.beta, ctx.master_seed, k)
        }
    });
    let mut saved = Vec::new();
    for (k, r) in results.iter().enumerate() {
        if let Ok(t) = r {
            let name = format!("traj_{k:04}.csv");
            rec.text(&name, |w| t.write_csv(w))?;
            saved.push((k, t.clone()));
        }
    }
    rec.collect(ctx.master_seed, results, cfg.global.fail_fast)?;
    rec.text("simulate_stats.csv", |w| {
        writeln!(w, "trajectory,t,lambda_max,lambda_min,mean")?;
        for (k, t) in &saved {
            for snap in &t.snapshots {
                let p = &snap.particles;
                writeln!(w, "{k},{:e},{:e},{:e},{:e}", snap.t, p[0], p[p.len() - 1], stats::mean(p))?;
            }
        }
        Ok(())
    })?;
    ctx.note(&format!("simulate: {} trajectories, {} failed", saved.len(), rec.failures.len()));
    rec.finish("simulate", cfg, started, clock)
}

#[derive(Debug, Clone, serde::Serialize)]
struct ProbeChecks {
    z0: Complex64,
    im_estimates: crate::mkv::ImEstimateReport,
    gap: Option<crate::mkv::GapReport>,
    sqrt_growth: Option<f64>,
}

/// Deterministic solve with edge path, probe characteristics and checks.
pub fn run_mkv(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.mkv.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let m0 = initial_measure(&s.initial, s.km_degree)?;
    let probes: Vec<Complex64> = s.probes_re.iter().zip(&s.probes_im).map(|(&x, &y)| Complex64::new(x, y)).collect();
    let sol = evolve(&m0, &potential_from(&s.potential)?, &probes, s.t_end, mkv_step(s.t_end, s.dt))?;
    rec.text("mkv_edge.csv", |w| sol.write_edge_csv(w))?;
    rec.text("mkv_probes.csv", |w| sol.write_probe_csv(w))?;
    let checks: Vec<ProbeChecks> = sol
        .probe_chars
        .iter()
        .zip(&probes)
        .map(|(c, &z0)| ProbeChecks {
            z0,
            im_estimates: check_im_estimates(c),
            gap: check_gap_growth(&sol, c).ok(),
            sqrt_growth: check_sqrt_growth(&sol, c, SqrtGrowthWindow::default()).ok(),
        })
        .collect();
    rec.json("mkv_checks.json", &checks)?;
    ctx.note(&format!(
        "mkv: {} steps, final edge {:.6}",
        sol.steps(),
        sol.edge_path.last().map_or(f64::NAN, |p| p.edge)
    ));
    rec.finish("mkv", cfg, started, clock)
}

#[derive(Debug, Clone, serde::Serialize)]
struct SeriesCheck {
    order: usize,
    max_edge_difference: f64,
    max_amplitude_relative_difference: f64,
    max_contraction: f64,
    envelope_violations: usize,
}

/// Edge power series solved from the characteristics, cross-checked
/// against their edge path.
pub fn run_series(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.series.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let m0 = initial_measure(&s.initial, s.km_degree)?;
    let sol = evolve(&m0, &potential_from(&s.potential)?, &[], s.t_end, mkv_step(s.t_end, s.dt))?;
    let series = solve_from_mkv(&sol, s.order, sol.t_end(), 1)?;
    rec.text("series_coefficients.csv", |w| series.write_csv(w))?;
    let mut edge_buf = Vec::new();
    series.write_edge_csv(&mut edge_buf)?;
    rec.text("series_edge.csv", |w| w.write_all(&edge_buf))?;
    let (mut de, mut dc) = (0.0f64, 0.0f64);
    for p in &sol.edge_path {
        let q = series.edge_root(p.t)?;
        de = de.max((q.edge - p.edge).abs());
        dc = dc.max((q.amplitude / p.amplitude - 1.0).abs());
    }
    let check = SeriesCheck {
        order: s.order,
        max_edge_difference: de,
        max_amplitude_relative_difference: dc,
        max_contraction: series.max_contraction(),
        envelope_violations: series.envelope_violations(),
    };
    rec.json("series_check.json", &check)?;
    ctx.note(&format!("series: edge difference {de:.2e}, contraction {:.3}", check.max_contraction));
    rec.finish("series", cfg, started, clock)
}

fn even_times(t_end: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| t_end * k as f64 / count as f64).collect()
}

/// Rigidity ensemble from oracle initial data in the quadratic potential.
pub fn run_rigidity(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.rigidity.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let v = Potential::quadratic();
    let sol = evolve(&SquareRootMeasure::semicircle(), &v, &[], s.t_end, mkv_step(s.t_end, 1e-3))?;
    let t_end = sol.t_end();
    let times = even_times(t_end, s.sample_count);
    let base = DbmConfig::new(s.n, s.beta, v, s.dt, t_end, 0);
    let results = run_ensemble(&base, ctx.master_seed, cfg.global.ensemble_size, ctx.workers, &times, |k| {
        oracle_state(s.n, s.beta, ctx.master_seed, k)
    });
    let ensemble = rec.collect(ctx.master_seed, results, cfg.global.fail_fast)?;
    let mut rcfg = RigidityConfig::for_size(s.n);
    rcfg.m = s.m;
    rcfg.threshold = s.m * s.m;
    let report = rigidity_verdict(&ensemble, &sol, &rcfg, s.i_max)?;
    let bound = edge_bound_verdict(&ensemble, &sol, &rcfg)?;
    rec.text("rigidity.csv", |w| report.write_csv(w))?;
    let mut buf = Vec::new();
    report.write_json(&mut buf).map_err(|e| io_err(&ctx.path("rigidity.json"), std::io::Error::other(e)))?;
    rec.text("rigidity.json", |w| w.write_all(&buf))?;
    rec.json("rigidity_edge_bound.json", &bound)?;
    ctx.note(&format!("rigidity: edge bound pass fraction {:.3}, q95 {:.3}", bound.pass_fraction, report.overall_q95));
    rec.finish("rigidity", cfg, started, clock)
}

fn quartic_bump(x: f64) -> f64 {
    (1.0 - x * x).powi(2)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LinearReport {
    pub beta: f64,
    pub samples: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub stated_mean: f64,
    pub variance: f64,
    pub sigma_sq: f64,
    pub variance_ratio: f64,
}

/// Summary of linear-statistic samples against the predicted law.
pub fn linear_report(values: &[f64], beta: f64) -> Result<LinearReport, FluctError> {
    let psi = TestFunction { f: &quartic_bump, lo: -1.0, hi: 1.0 };
    let sigma_sq = sigma_psi_sq(&psi, beta, 2000)?;
    let variance = stats::variance(values);
    Ok(LinearReport {
        beta,
        samples: values.len(),
        mean: stats::mean(values),
        mean_se: stats::std_error(values),
        stated_mean: linear_mean_shift(beta, &psi) + 0.0,
        variance,
        sigma_sq,
        variance_ratio: variance / sigma_sq,
    })
}

/// Γ samples, covariance against the kernel, and the linear statistic of
/// the bump (1 − x²)², in the stationary quadratic setting.
pub fn run_clt(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.clt.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let nf = s.n as f64;
    let (eta, t_target) = (nf.powf(-s.eta_exponent), nf.powf(-s.t_exponent));
    let sc = SquareRootMeasure::semicircle();
    let v = Potential::quadratic();
    let sol = evolve(&sc, &v, &[], t_target, mkv_step(t_target, 1e-3))?;
    let t = sol.t_end();
    let base = DbmConfig::new(s.n, s.beta, v, s.dt, t, 0);
    let results = run_ensemble(&base, ctx.master_seed, cfg.global.ensemble_size, ctx.workers, &[t], |k| {
        oracle_state(s.n, s.beta, ctx.master_seed, k)
    });
    let ensemble = rec.collect(ctx.master_seed, results, cfg.global.fail_fast)?;
    let points: Vec<Complex64> = s.points_re.iter().zip(&s.points_im).map(|(&x, &y)| Complex64::new(x, y)).collect();
    let probes: Vec<GammaProbe> = points.iter().map(|&w| GammaProbe::new(&sol, t, w, eta)).collect::<Result<_, _>>()?;
    let mut samples = Vec::with_capacity(ensemble.len() * points.len());
    for (k, tr) in ensemble.iter().enumerate() {
        let state = tr.last();
        for p in &probes {
            samples.push(GammaSample { traj: k, t, w: p.w, eta, value: p.gamma(state)? });
        }
    }
    rec.text("clt_gamma.csv", |w| write_gamma_csv(&samples, w))?;
    let cov = empirical_covariance(&samples, &points, s.beta)?;
    let mut buf = Vec::new();
    cov.write_json(&mut buf).map_err(|e| io_err(&ctx.path("clt_covariance.json"), std::io::Error::other(e)))?;
    rec.text("clt_covariance.json", |w| w.write_all(&buf))?;
    let psi = TestFunction { f: &quartic_bump, lo: -1.0, hi: 1.0 };
    let lin = LinearStatistic::new(&sc, &psi, eta, s.n)?;
    let values: Vec<f64> = ensemble.iter().map(|tr| lin.eval(tr.last())).collect();
    let report = linear_report(&values, s.beta)?;
    rec.json("clt_linear.json", &report)?;
    ctx.note(&format!("clt: max |z| {:.2}, variance ratio {:.3}", cov.max_abs_z, report.variance_ratio));
    rec.finish("clt", cfg, started, clock)
}

/// Initial data for the universality runs: the classical configuration of
/// the equilibrium measure of V, or an oracle sample transported onto it.
pub fn universality_initial(
    kind: &str,
    rho: &SquareRootMeasure,
    n: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<f64>, UniversalityError> {
    if kind == "classical" {
        return Ok(classical_configuration(rho, n));
    }
    let mu = sample_beta_ensemble(n, beta, seed)?;
    Ok(transport(&mu.particles, &SquareRootMeasure::semicircle(), rho))
}

#[derive(Debug, Clone, serde::Serialize)]
struct TwReport {
    n: usize,
    t: f64,
    edge: f64,
    dbm_samples: usize,
    oracle_samples: usize,
    dbm_mean: f64,
    oracle_mean: f64,
    comparison: crate::universality::Comparison,
}

/// Edge statistic of the dynamics in a matched quartic potential against
/// the oracle.
pub fn run_tw(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.tw.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let (v, rho) = matched_quartic(s.quartic)?;
    let t1 = (s.n as f64).powf(-1.0 / 3.0 + s.omega);
    let sol = evolve(&rho, &v, &[], t1, mkv_step(t1, 1e-3))?;
    let t = sol.t_end();
    let base = DbmConfig::new(s.n, s.beta, v, s.dt, t, 0);
    let count = cfg.global.ensemble_size;
    let results = run_ensemble(&base, ctx.master_seed, count, ctx.workers, &[t], |k| {
        let seed = derive_seed(ctx.master_seed, k as u64, Purpose::InitialData);
        let p = universality_initial(&s.initial, &rho, s.n, s.beta, seed)
            .map_err(|e| DbmError::InvalidConfig(e.to_string()))?;
        Ok(ParticleState::new(0.0, s.beta, p)?)
    });
    let ensemble = rec.collect(ctx.master_seed, results, cfg.global.fail_fast)?;
    let dbm: Vec<f64> = ensemble.iter().map(|tr| edge_statistic_at(tr, &sol, t)).collect::<Result<_, _>>()?;
    let oracle = oracle_edge_samples(s.n, s.beta, ctx.master_seed, count, ctx.workers)?;
    rec.text("tw_edge.csv", |w| write_edge_samples_csv(w, &dbm, &oracle))?;
    let report = TwReport {
        n: s.n,
        t,
        edge: sol.edge_interp(t)?.0,
        dbm_samples: dbm.len(),
        oracle_samples: oracle.len(),
        dbm_mean: stats::mean(&dbm),
        oracle_mean: stats::mean(&oracle),
        comparison: compare_distributions(&dbm, &oracle),
    };
    rec.json("tw_compare.json", &report)?;
    ctx.note(&format!("tw: KS {:.4}", report.comparison.ks));
    rec.finish("tw", cfg, started, clock)
}

/// Shared-noise couplings between the matched quartic dynamics and the
/// quadratic dynamics from an independent oracle sample.
pub fn run_interp(cfg: &RunConfig, ctx: &RunContext) -> Result<Manifest, RunError> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    prepare(ctx)?;
    let s = cfg.interp.clone().unwrap_or_default();
    let mut rec = Recorder::new(ctx);
    let (v, rho) = matched_quartic(s.quartic)?;
    let t1 = (s.n as f64).powf(-1.0 / 3.0 + s.omega);
    let sol = evolve(&rho, &v, &[], t1, mkv_step(t1, 1e-3))?;
    let t = sol.t_end();
    let edge_v = sol.edge_interp(t)?.0;
    let icfg = InterpolationConfig {
        n: s.n,
        beta: s.beta,
        v,
        w: Potential::quadratic(),
        alphas: s.alphas.clone(),
        t_end: t,
        dt: s.dt,
        guard: crate::dbm::DEFAULT_GUARD,
    };
    let count = cfg.global.ensemble_size;
    let master = ctx.master_seed;
    let rows = crate::dbm::map_indexed(count, ctx.workers, |k| -> Result<Vec<f64>, UniversalityError> {
        let lam =
            universality_initial(&s.initial, &rho, s.n, s.beta, derive_seed(master, k as u64, Purpose::InitialData))?;
        let mu = sample_beta_ensemble(s.n, s.beta, derive_seed(master, k as u64, Purpose::Oracle))?.particles;
        let fam = run_interpolation(&icfg, &lam, &mu, derive_seed(master, k as u64, Purpose::Coupling))?;
        coupling_distances(&fam, edge_v, 2.0, s.particles)
    });
    let mut good = Vec::with_capacity(count);
    for (index, r) in rows.into_iter().enumerate() {
        let seed = derive_seed(master, index as u64, Purpose::Coupling);
        rec.seeds.push(seed);
        match r {
            Ok(row) => good.push(row),
            Err(e) if cfg.global.fail_fast => return Err(RunError::FailFast { index, message: e.to_string() }),
            Err(e) => rec.failures.push(TrajectoryFailure { index, seed, message: e.to_string() }),
        }
    }
    if good.is_empty() {
        return Err(RunError::NoTrajectories);
    }
    let report = CouplingReport::new(s.n, t, &good)?;
    rec.json("interp_coupling.json", &report)?;
    ctx.note(&format!("interp: median scaled distance {:.3}", report.median));
    rec.finish("interp", cfg, started, clock)
}

/// Every stage in turn.
pub fn run_all(cfg: &RunConfig, ctx: &RunContext) -> Result<Vec<Manifest>, RunError> {
    Ok(vec![
        run_mkv(cfg, ctx)?,
        run_series(cfg, ctx)?,
        run_simulate(cfg, ctx)?,
        run_rigidity(cfg, ctx)?,
        run_clt(cfg, ctx)?,
        run_tw(cfg, ctx)?,
        run_interp(cfg, ctx)?,
    ])
}
