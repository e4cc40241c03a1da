//! Power series for m̂_t = A_t + √B_t about the initial edge E_0.
//!
//! With D_t = A_t + V′/2 and the polynomial forcing R_t = ∫g dρ̂_t − V′V″/4,
//! the McKean–Vlasov equation splits into
//!
//!   ∂_t D = D D′ + B′/2 + R,   ∂_t B = D B′ + 2 B D′.
//!
//! In the Taylor coefficients d_i, b_i about E_0 this is an infinite ODE
//! system, truncated at order K and solved by Picard iteration on short time
//! windows. The edge E_t is the root of B_t near E_0, and the density
//! amplitude is √B_t′(E_t)/π.

use crate::mkv::{MkvError, MkvSolution};
use crate::model::{poly_c, Potential, SquareRootMeasure};
use num_complex::Complex64;
use std::f64::consts::{E, PI};
use std::io::Write;
use thiserror::Error;

pub const DEFAULT_ORDER: usize = 16;
pub const CAUCHY_NODES: usize = 128;
pub const DEFAULT_MAX_ITER: usize = 200;
const PICARD_TOL: f64 = 1e-12;
const EDGE_TOL: f64 = 1e-12;
const SIMPLE_ROOT_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("Cauchy circle of radius {radius} around {center} is not inside the contour region (limit {limit})")]
    RadiusTooSmall { center: f64, radius: f64, limit: f64 },
    #[error(
        "Picard iteration stopped contracting in the window starting at t = {window_start} (iteration {iteration})"
    )]
    PicardDiverged { window_start: f64, iteration: usize },
    #[error("no root of B within the validity disc at t = {0}")]
    RootNotFound(f64),
    #[error("B has more than one sign change in the validity disc at t = {0}")]
    MultipleRoots(f64),
    #[error("root of B at t = {t} is not simple (B' = {derivative:e})")]
    NotSimple { t: f64, derivative: f64 },
    #[error("time {0} is not on the series grid")]
    OutOfWindow(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mkv(#[from] MkvError),
}

/// Envelope constants: |c_i(t)| ≤ C Mⁱ e^{L t i}/(i + 1)².
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GrowthBounds {
    pub c: f64,
    pub m: f64,
    pub l: f64,
}

impl GrowthBounds {
    /// Fits (C, M) to the given coefficient rows, choosing M on a geometric
    /// grid to minimise C·M, and sets L = 12e·C·M.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]> + Clone) -> Self {
        let mut best = (f64::INFINITY, 1.0, 0.0);
        for k in -16..=120 {
            let m = 2f64.powf(k as f64 / 8.0);
            let mut c: f64 = 0.0;
            for row in rows.clone() {
                for (i, v) in row.iter().enumerate() {
                    c = c.max(((i + 1) * (i + 1)) as f64 * v.abs() / m.powi(i as i32));
                }
            }
            if c * m < best.0 * (1.0 - 1e-12) {
                best = (c * m, m, c);
            }
        }
        let (_, m, c) = best;
        let c = c.max(f64::MIN_POSITIVE);
        // The two growth conditions L > 8eCM and L ≥ 12eCM; the larger wins.
        Self { c, m, l: 12.0 * E * c * m }
    }

    pub fn envelope(&self, i: usize, t: f64) -> f64 {
        self.c * self.m.powi(i as i32) * (self.l * t * i as f64).exp() / ((i + 1) * (i + 1)) as f64
    }

    /// max_i (i + 1)² |x_i| / (Mⁱ e^{L t i}).
    pub fn weighted_norm(&self, x: &[f64], t: f64) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                ((i + 1) * (i + 1)) as f64 * v.abs() / (self.m.powi(i as i32) * (self.l * t * i as f64).exp())
            })
            .fold(0.0, f64::max)
    }
}

/// Taylor coefficients of the forcing R_t about E_0 on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub center: f64,
    pub radius: f64,
    pub times: Vec<f64>,
    pub r: Vec<Vec<f64>>,
}

/// Taylor coefficients 0..=order of a real-symmetric f about `center` from
/// `nodes` samples on the circle of the given radius.
pub fn cauchy_coefficients(
    f: impl Fn(Complex64) -> Complex64,
    center: f64,
    radius: f64,
    order: usize,
    nodes: usize,
) -> Vec<f64> {
    let vals: Vec<(Complex64, Complex64)> = (0..nodes)
        .map(|k| {
            let w = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / nodes as f64);
            (w, f(center + radius * w))
        })
        .collect();
    // Scaled coefficients below the roundoff floor of the samples are noise
    // that 1/rⁱ would otherwise blow up.
    let floor = 100.0 * f64::EPSILON * vals.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
    (0..=order)
        .map(|i| {
            let s: Complex64 = vals.iter().map(|(w, v)| v * w.powi(-(i as i32))).sum();
            let scaled = s.re / nodes as f64;
            if scaled.abs() < floor {
                0.0
            } else {
                scaled / radius.powi(i as i32)
            }
        })
        .collect()
}

/// Default Cauchy radius min(0.1, potential radius / 4).
pub fn default_cauchy_radius(potential: &Potential) -> f64 {
    (potential.radius() / 4.0).min(0.1)
}

fn check_radius(sol: &MkvSolution, center: f64, radius: f64) -> Result<(), SeriesError> {
    let limit = sol.radius - (center - sol.center).abs();
    if !(radius > 0.0 && radius < limit) {
        return Err(SeriesError::RadiusTooSmall { center, radius, limit });
    }
    Ok(())
}

/// Forcing coefficients r_i(t) at the given solution times, with ∫g dρ̂_t
/// taken from the solution's contour moments.
pub fn forcing_coefficients(
    sol: &MkvSolution,
    times: &[f64],
    center: f64,
    order: usize,
    radius: f64,
) -> Result<Forcing, SeriesError> {
    check_radius(sol, center, radius)?;
    let v = &sol.potential;
    let r = times
        .iter()
        .map(|&t| {
            let g = sol.g_poly(t)?;
            Ok(cauchy_coefficients(
                |z| poly_c(&g, z) - v.deriv_c(1, z) * v.deriv_c(2, z) / 4.0,
                center,
                radius,
                order,
                CAUCHY_NODES,
            ))
        })
        .collect::<Result<_, SeriesError>>()?;
    Ok(Forcing { center, radius, times: times.to_vec(), r })
}

/// Forcing coefficients of a fixed measure, with ∫g dρ from its moments.
pub fn forcing_from_measure(m: &SquareRootMeasure, v: &Potential, center: f64, order: usize, radius: f64) -> Vec<f64> {
    let moments: Vec<Complex64> = m.moments(v.g_moment_count()).into_iter().map(Complex64::from).collect();
    let g = v.g_term_poly(&moments);
    cauchy_coefficients(
        |z| poly_c(&g, z) - v.deriv_c(1, z) * v.deriv_c(2, z) / 4.0,
        center,
        radius,
        order,
        CAUCHY_NODES,
    )
}

/// (d_i(0), b_i(0)) from the split m_0 = A_0 + √B_0 about the edge.
pub fn initial_coefficients(m0: &SquareRootMeasure, v: &Potential, order: usize, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let e0 = m0.edge;
    let d =
        cauchy_coefficients(|z| m0.edge_decomposition(z).0 + v.deriv_c(1, z) / 2.0, e0, radius, order, CAUCHY_NODES);
    let b = cauchy_coefficients(|z| m0.edge_decomposition(z).1, e0, radius, order, CAUCHY_NODES);
    (d, b)
}

/// Right-hand side of the truncated coefficient system.
pub fn coefficient_rhs(d: &[f64], b: &[f64], r: &[f64], dd: &mut [f64], db: &mut [f64]) {
    let k = d.len();
    let at = |v: &[f64], i: usize| if i < k { v[i] } else { 0.0 };
    for i in 0..k {
        let mut sd = r[i] + (i + 1) as f64 * at(b, i + 1) / 2.0;
        let mut sb = 0.0;
        for j in 0..=i {
            let w = (j + 1) as f64;
            sd += w * d[i - j] * at(d, j + 1);
            sb += 2.0 * w * b[i - j] * at(d, j + 1) + w * d[i - j] * at(b, j + 1);
        }
        dd[i] = sd;
        db[i] = sb;
    }
}

/// Cumulative integral of samples f on the grid t. Each interval integrates
/// the Lagrange interpolant through up to four surrounding points (cubic, so
/// two-point Gauss–Legendre is exact); short grids drop to lower degree.
pub fn cumulative_integral(t: &[f64], f: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut out = vec![0.0; n];
    let width = n.min(4);
    if width < 2 {
        return out;
    }
    let g = 0.5 / 3f64.sqrt();
    for k in 0..n - 1 {
        let first = k.saturating_sub(1).min(n - width);
        let pts = first..first + width;
        let interp = |x: f64| {
            pts.clone()
                .map(|a| {
                    let w: f64 = pts.clone().filter(|&b| b != a).map(|b| (x - t[b]) / (t[a] - t[b])).product();
                    w * f[a]
                })
                .sum::<f64>()
        };
        let (lo, hi) = (t[k], t[k + 1]);
        let mid = 0.5 * (lo + hi);
        let h = hi - lo;
        out[k + 1] = out[k] + 0.5 * h * (interp(mid - g * h) + interp(mid + g * h));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSeries {
    pub center: f64,
    pub order: usize,
    pub times: Vec<f64>,
    /// d[k][i] = d_i(times[k]).
    pub d: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub bounds: GrowthBounds,
    /// Validity disc radius for the edge root.
    pub radius: f64,
    /// Largest ratio of successive Picard differences in each window.
    pub contraction: Vec<f64>,
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SeriesEdge {
    pub t: f64,
    pub edge: f64,
    pub amplitude: f64,
}

/// Solves the truncated system on the forcing grid by Picard iteration over
/// windows of length at most 1/L (at least three grid intervals).
pub fn picard_solve(
    init: (Vec<f64>, Vec<f64>),
    forcing: &Forcing,
    t_end: f64,
    order: usize,
    max_iter: usize,
) -> Result<EdgeSeries, SeriesError> {
    let (mut d0, mut b0) = init;
    d0.resize(order + 1, 0.0);
    b0.resize(order + 1, 0.0);
    let n_times = forcing.times.partition_point(|&t| t <= t_end + 1e-12);
    if n_times == 0 || forcing.times[0] != 0.0 {
        return Err(SeriesError::Invalid("forcing grid must start at t = 0".into()));
    }
    let times = forcing.times[..n_times].to_vec();
    let r: Vec<Vec<f64>> = forcing.r[..n_times]
        .iter()
        .map(|row| {
            let mut row = row.clone();
            row.resize(order + 1, 0.0);
            row
        })
        .collect();
    let bounds = GrowthBounds::fit([d0.as_slice(), b0.as_slice()].into_iter().chain(r.iter().map(|x| x.as_slice())));
    let window = 1.0 / bounds.l;

    let k1 = order + 1;
    let mut d = vec![d0.clone(); n_times];
    let mut b = vec![b0.clone(); n_times];
    let mut contraction = Vec::new();
    let mut iterations = Vec::new();
    let mut start = 0;
    while start + 1 < n_times {
        let mut end = times.partition_point(|&t| t <= times[start] + window * (1.0 + 1e-12)) - 1;
        end = end.max(start + 3).min(n_times - 1);
        let idx = start..=end;
        let tw: Vec<f64> = times[idx.clone()].to_vec();
        let m = tw.len();
        for k in 1..m {
            d[start + k] = d[start].clone();
            b[start + k] = b[start].clone();
        }
        let mut prev_diff = f64::INFINITY;
        let mut worst_ratio: f64 = 0.0;
        let mut growing = 0;
        let mut iters = 0;
        let mut dd = vec![0.0; k1];
        let mut db = vec![0.0; k1];
        loop {
            iters += 1;
            // f at every window point for every coefficient.
            let mut fd = vec![vec![0.0; m]; k1];
            let mut fb = vec![vec![0.0; m]; k1];
            for k in 0..m {
                coefficient_rhs(&d[start + k], &b[start + k], &r[start + k], &mut dd, &mut db);
                for i in 0..k1 {
                    fd[i][k] = dd[i];
                    fb[i][k] = db[i];
                }
            }
            let mut diff: f64 = 0.0;
            let mut new_d = vec![vec![0.0; k1]; m];
            let mut new_b = vec![vec![0.0; k1]; m];
            for i in 0..k1 {
                let cd = cumulative_integral(&tw, &fd[i]);
                let cb = cumulative_integral(&tw, &fb[i]);
                for k in 0..m {
                    new_d[k][i] = d[start][i] + cd[k];
                    new_b[k][i] = b[start][i] + cb[k];
                }
            }
            let mut scale: f64 = 0.0;
            for k in 1..m {
                let delta_d: Vec<f64> = (0..k1).map(|i| new_d[k][i] - d[start + k][i]).collect();
                let delta_b: Vec<f64> = (0..k1).map(|i| new_b[k][i] - b[start + k][i]).collect();
                diff = diff.max(bounds.weighted_norm(&delta_d, tw[k])).max(bounds.weighted_norm(&delta_b, tw[k]));
                scale = scale.max(bounds.weighted_norm(&new_d[k], tw[k])).max(bounds.weighted_norm(&new_b[k], tw[k]));
                d[start + k] = new_d[k].clone();
                b[start + k] = new_b[k].clone();
            }
            let floor = PICARD_TOL * scale.max(1.0);
            if diff <= floor {
                break;
            }
            // Ratios are only meaningful well above the roundoff floor.
            if prev_diff.is_finite() && prev_diff > 1e3 * floor {
                worst_ratio = worst_ratio.max(diff / prev_diff);
            }
            if diff >= prev_diff {
                growing += 1;
                if growing >= 5 {
                    return Err(SeriesError::PicardDiverged { window_start: tw[0], iteration: iters });
                }
            } else {
                growing = 0;
            }
            prev_diff = diff;
            if iters >= max_iter {
                return Err(SeriesError::PicardDiverged { window_start: tw[0], iteration: iters });
            }
        }
        contraction.push(worst_ratio);
        iterations.push(iters);
        start = end;
    }
    Ok(EdgeSeries {
        center: forcing.center,
        order,
        times,
        d,
        b,
        r,
        bounds,
        radius: forcing.radius,
        contraction,
        iterations,
    })
}

/// Builds the series for an mkv solution: initial coefficients from its
/// initial measure, forcing at every `stride`-th step up to `t_end`.
pub fn solve_from_mkv(sol: &MkvSolution, order: usize, t_end: f64, stride: usize) -> Result<EdgeSeries, SeriesError> {
    let radius = default_cauchy_radius(&sol.potential);
    let center = sol.initial.edge;
    let k_end = sol.step_index(t_end)?;
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..=k_end).step_by(stride).collect();
    if *ks.last().unwrap() != k_end {
        ks.push(k_end);
    }
    let times: Vec<f64> = ks.iter().map(|&k| sol.times[k]).collect();
    let forcing = forcing_coefficients(sol, &times, center, order, radius)?;
    let init = initial_coefficients(&sol.initial, &sol.potential, order, radius);
    picard_solve(init, &forcing, t_end, order, DEFAULT_MAX_ITER)
}

fn horner(c: &[f64], w: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * w + a)
}

fn horner_deriv(c: &[f64], w: f64) -> f64 {
    c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (i, &a)| acc * w + a * i as f64)
}

impl EdgeSeries {
    pub fn time_index(&self, t: f64) -> Result<usize, SeriesError> {
        let k = self.times.partition_point(|&s| s < t - 1e-9);
        if k < self.times.len() && (self.times[k] - t).abs() <= 1e-9 {
            Ok(k)
        } else {
            Err(SeriesError::OutOfWindow(t))
        }
    }

    /// D_t(z) = m̂_t(z) − √B_t(z) + V′(z)/2 from the truncated series.
    pub fn d_at(&self, k: usize, z: f64) -> f64 {
        horner(&self.d[k], z - self.center)
    }

    pub fn b_at(&self, k: usize, z: f64) -> f64 {
        horner(&self.b[k], z - self.center)
    }

    /// Edge and amplitude at a grid time: the simple root of B_t in the
    /// validity disc, and √B_t′(E_t)/π.
    pub fn edge_root(&self, t: f64) -> Result<SeriesEdge, SeriesError> {
        let k = self.time_index(t)?;
        let b = &self.b[k];
        let rad = self.radius;
        // Count sign changes on a fine grid across the disc.
        let n = 400;
        let vals: Vec<f64> = (0..=n).map(|j| horner(b, -rad + 2.0 * rad * j as f64 / n as f64)).collect();
        let changes = vals.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0) && w[0] != 0.0).count();
        if changes > 1 {
            return Err(SeriesError::MultipleRoots(t));
        }
        let mut w = if b[0] == 0.0 { 0.0 } else { -b[0] / b.get(1).copied().unwrap_or(1.0) };
        if !w.is_finite() || w.abs() > rad {
            w = 0.0;
        }
        let mut done = b[0] == 0.0;
        for _ in 0..100 {
            if done {
                break;
            }
            let f = horner(b, w);
            let fp = horner_deriv(b, w);
            if fp == 0.0 {
                return Err(SeriesError::RootNotFound(t));
            }
            let step = f / fp;
            w -= step;
            if w.abs() > rad || !w.is_finite() {
                return Err(SeriesError::RootNotFound(t));
            }
            done = step.abs() < EDGE_TOL;
        }
        if !done {
            return Err(SeriesError::RootNotFound(t));
        }
        let bp = horner_deriv(b, w);
        if !(bp.abs() > SIMPLE_ROOT_MIN) {
            return Err(SeriesError::NotSimple { t, derivative: bp });
        }
        Ok(SeriesEdge { t: self.times[k], edge: self.center + w, amplitude: bp.max(0.0).sqrt() / PI })
    }

    pub fn edge_path(&self) -> Result<Vec<SeriesEdge>, SeriesError> {
        self.times.iter().map(|&t| self.edge_root(t)).collect()
    }

    /// Largest contraction ratio over all windows.
    pub fn max_contraction(&self) -> f64 {
        self.contraction.iter().copied().fold(0.0, f64::max)
    }

    /// Number of (time, coefficient) entries above the growth envelope.
    pub fn envelope_violations(&self) -> usize {
        let mut count = 0;
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..=self.order {
                let env = self.bounds.envelope(i, t) * (1.0 + 1e-9);
                count += (self.d[k][i].abs() > env) as usize + (self.b[k][i].abs() > env) as usize;
            }
        }
        count
    }

    /// Largest residual of the coefficient system over interior grid
    /// points and i ≤ min(max_order, K − 2), relative to the t = 0 envelope
    /// C Mⁱ/(i + 1)².
    /// Time derivatives use the five-point stencil on uniform stretches.
    pub fn ode_residual(&self, max_order: usize) -> f64 {
        let k1 = self.order + 1;
        let mut dd = vec![0.0; k1];
        let mut db = vec![0.0; k1];
        let mut worst: f64 = 0.0;
        let t = &self.times;
        for k in 2..t.len().saturating_sub(2) {
            let h = t[k + 1] - t[k];
            let uniform = (t[k + 2] - t[k + 1] - h).abs() < 1e-9 * h
                && (t[k] - t[k - 1] - h).abs() < 1e-9 * h
                && (t[k - 1] - t[k - 2] - h).abs() < 1e-9 * h;
            if !uniform {
                continue;
            }
            let deriv = |c: &Vec<Vec<f64>>, i: usize| {
                (c[k - 2][i] - 8.0 * c[k - 1][i] + 8.0 * c[k + 1][i] - c[k + 2][i]) / (12.0 * h)
            };
            coefficient_rhs(&self.d[k], &self.b[k], &self.r[k], &mut dd, &mut db);
            for i in 0..k1.saturating_sub(2).min(max_order + 1) {
                let scale = self.bounds.envelope(i, 0.0);
                worst =
                    worst.max((deriv(&self.d, i) - dd[i]).abs() / scale).max((deriv(&self.b, i) - db[i]).abs() / scale);
            }
        }
        worst
    }

    /// Largest |dE/dt + D_t(E_t)| with dE/dt from central differences.
    pub fn edge_ode_residual(&self) -> Result<f64, SeriesError> {
        let path = self.edge_path()?;
        let mut worst: f64 = 0.0;
        for k in 1..path.len().saturating_sub(1) {
            let de = (path[k + 1].edge - path[k - 1].edge) / (path[k + 1].t - path[k - 1].t);
            worst = worst.max((de + self.d_at(k, path[k].edge)).abs());
        }
        Ok(worst)
    }

    /// Series dump `t,i,d_i,b_i,r_i`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,i,d_i,b_i,r_i")?;
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..=self.order {
                writeln!(w, "{},{},{},{},{}", t, i, self.d[k][i], self.b[k][i], self.r[k][i])?;
            }
        }
        Ok(())
    }

    /// Edge extract `t,E,C`.
    pub fn write_edge_csv<W: Write>(&self, mut w: W) -> Result<(), SeriesError> {
        let path = self.edge_path()?;
        let io = |e: std::io::Error| SeriesError::Invalid(e.to_string());
        writeln!(w, "t,E,C").map_err(io)?;
        for p in path {
            writeln!(w, "{},{},{}", p.t, p.edge, p.amplitude).map_err(io)?;
        }
        Ok(())
    }
}
