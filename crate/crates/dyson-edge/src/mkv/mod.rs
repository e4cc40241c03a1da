//! McKean–Vlasov solver by complex characteristics.
//!
//! Along z_t(u) the Stieltjes transform obeys
//!
//!   ż = −m̂(z) − V′(z)/2,   d/dt m̂(z_t) = m̂ V″(z)/2 + G_t(z),
//!
//! where G_t(z) = ∫ g(z, x) dρ̂_t(x). For a polynomial V, G_t is a polynomial
//! in z whose coefficients are moments of ρ̂_t. The moments are read off a
//! ring of characteristics started on a fixed circle around the support: each
//! RK4 stage integrates z^q m̂ dz over the moved ring, and after each step the
//! ring is re-anchored on the circle through the Laurent series of m̂.
//!
//! Every other characteristic (probes, edge tracking, density shooting)
//! replays the stored stage polynomials, so it reproduces the joint
//! integration exactly.

mod checks;

pub use checks::{
    check_gap_growth, check_im_estimates, check_integrating_factor, check_sqrt_growth, GapReport, ImEstimateReport,
    IntegratingFactorWindow, SqrtGrowthWindow,
};

use crate::cheb;
use crate::model::{poly_c, Derivatives, ModelError, Potential, SquareRootMeasure};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_CONTOUR_NODES: usize = 256;
pub const DEFAULT_LAURENT_TERMS: usize = 128;
pub const PROBE_FLOOR: f64 = 1e-8;
// Laurent evaluation is used when support radius / |z − c| is below this.
const LAURENT_RATIO: f64 = 0.78;
const DENSITY_NODES: usize = 192;
const NEGATIVE_DENSITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MkvError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("characteristic from {u} reached the real axis at t = {t}")]
    CharacteristicHitAxis { u: Complex64, t: f64 },
    #[error("contour node left the annulus at t = {t} (distance {distance})")]
    ContourDrift { t: f64, distance: f64 },
    #[error("negative density {rho:e} at x = {x}")]
    NegativeDensity { x: f64, rho: f64 },
    #[error("time {0} is outside the solved window")]
    OutOfWindow(f64),
    #[error("no characteristic reaches {target} at t = {t}")]
    ShootingFailed { target: Complex64, t: f64 },
    #[error("edge critical point not found at t = {0}")]
    EdgeNotFound(f64),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MkvConfig {
    pub dt: f64,
    pub t_end: f64,
    pub contour_nodes: usize,
    pub laurent_terms: usize,
    /// Radius of the fixed evaluation circle; default max(3, 2·half-width).
    pub contour_radius: Option<f64>,
    pub probe_floor: f64,
    /// Record the edge every this many steps; 0 picks about 200 points.
    pub edge_stride: usize,
}

impl MkvConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            dt,
            t_end,
            contour_nodes: DEFAULT_CONTOUR_NODES,
            laurent_terms: DEFAULT_LAURENT_TERMS,
            contour_radius: None,
            probe_floor: PROBE_FLOOR,
            edge_stride: 0,
        }
    }
}

/// One recorded point of a characteristic, with the tangent (∂_u z, ∂_u m̂)
/// carried by the variational equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharSample {
    pub t: f64,
    pub z: Complex64,
    pub mhat: Complex64,
    pub dz_du: Complex64,
    pub dm_du: Complex64,
}

impl CharSample {
    /// ∂_z m̂_t at z_t.
    pub fn mhat_z(&self) -> Complex64 {
        self.dm_du / self.dz_du
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    pub u: Complex64,
    pub samples: Vec<CharSample>,
    /// Set when Im z fell below the floor; samples stop there.
    pub hit_axis: bool,
}

impl Characteristic {
    pub fn last(&self) -> &CharSample {
        self.samples.last().expect("characteristic has samples")
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "t,re_z,im_z,re_m,im_m,u_re,u_im")?;
        }
        for s in &self.samples {
            writeln!(w, "{},{},{},{},{},{},{}", s.t, s.z.re, s.z.im, s.mhat.re, s.mhat.im, self.u.re, self.u.im)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EdgePoint {
    pub t: f64,
    pub edge: f64,
    pub mhat_edge: f64,
    /// Density amplitude C_t with ρ̂_t ≈ C_t √(E_t − x).
    pub amplitude: f64,
    pub left_edge: f64,
    // Critical parameters u = E_0 + s² and u = L_0 − s².
    #[serde(skip)]
    s_right: f64,
    #[serde(skip)]
    s_left: f64,
}

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

#[derive(Debug, Clone)]
pub struct MkvSolution {
    pub potential: Potential,
    pub initial: SquareRootMeasure,
    /// Step times t_0 = 0 < t_1 < … < t_n = T.
    pub times: Vec<f64>,
    pub edge_path: Vec<EdgePoint>,
    pub contour_chars: Vec<Characteristic>,
    pub probe_chars: Vec<Characteristic>,
    pub center: f64,
    pub radius: f64,
    h: f64,
    derivs: Derivatives,
    // G and G′ coefficient vectors for the four RK4 stages of every step.
    stages: Vec<[(Vec<Complex64>, Vec<Complex64>); 4]>,
    // Normalised central moments μ_q = ∫((x − c)/𝔯)^q dρ̂_t at every step time.
    laurent: Vec<Vec<Complex64>>,
    probe_floor: f64,
}

fn poly_deriv_coeffs(p: &[Complex64]) -> Vec<Complex64> {
    if p.len() <= 1 {
        return vec![Complex64::new(0.0, 0.0)];
    }
    p.iter().enumerate().skip(1).map(|(j, &a)| a * j as f64).collect()
}

#[derive(Debug, Clone, Copy)]
struct State {
    z: Complex64,
    m: Complex64,
    zu: Complex64,
    mu: Complex64,
}

impl State {
    fn axpy(self, h: f64, k: State) -> State {
        State { z: self.z + k.z * h, m: self.m + k.m * h, zu: self.zu + k.zu * h, mu: self.mu + k.mu * h }
    }
}

#[inline]
fn rhs(y: State, der: &Derivatives, g: &[Complex64], gp: &[Complex64], tangent: bool) -> State {
    let v1 = der.at_c(1, y.z);
    let v2 = der.at_c(2, y.z);
    let dz = -y.m - v1 / 2.0;
    let dm = y.m * v2 / 2.0 + poly_c(g, y.z);
    if !tangent {
        return State { z: dz, m: dm, zu: Complex64::default(), mu: Complex64::default() };
    }
    let v3 = der.at_c(3, y.z);
    let dzu = -y.mu - v2 * y.zu / 2.0;
    let dmu = y.mu * v2 / 2.0 + (y.m * v3 / 2.0 + poly_c(gp, y.z)) * y.zu;
    State { z: dz, m: dm, zu: dzu, mu: dmu }
}

/// Ring of characteristics on the moving curve.
struct Ring {
    center: f64,
    radius: f64,
    nodes: Vec<Complex64>,
    plans: Plans,
}

impl Ring {
    fn new(center: f64, radius: f64, k: usize) -> Self {
        let nodes = (0..k)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / k as f64;
                Complex64::new(center, 0.0) + radius * Complex64::from_polar(1.0, th)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let plans = Plans { fwd: planner.plan_fft_forward(k), inv: planner.plan_fft_inverse(k) };
        Self { center, radius, nodes, plans }
    }

    /// dz/dθ of a closed curve sampled at equispaced θ, spectrally.
    fn tangent(&self, z: &[Complex64]) -> Vec<Complex64> {
        let k = z.len();
        let mut buf = z.to_vec();
        self.plans.fwd.process(&mut buf);
        for (j, b) in buf.iter_mut().enumerate() {
            let freq = if j < k / 2 {
                j as f64
            } else if j == k / 2 {
                0.0
            } else {
                j as f64 - k as f64
            };
            *b *= Complex64::new(0.0, freq);
        }
        self.plans.inv.process(&mut buf);
        buf.iter().map(|b| b / k as f64).collect()
    }

    /// μ_q = −(1/2πi) ∮ ζ^q m̂ dz with ζ = (z − c)/𝔯, q < count.
    fn moments(&self, z: &[Complex64], m: &[Complex64], count: usize) -> Vec<Complex64> {
        let k = z.len();
        let dz = self.tangent(z);
        let mut out = vec![Complex64::new(0.0, 0.0); count];
        for j in 0..k {
            let zeta = (z[j] - self.center) / self.radius;
            let mut w = m[j] * dz[j];
            for o in out.iter_mut() {
                *o += w;
                w *= zeta;
            }
        }
        let scale = Complex64::new(0.0, 1.0 / k as f64);
        out.iter().map(|o| o * scale).collect()
    }
}

/// Raw moments M_q = ∫ x^q dρ from normalised central moments.
fn raw_moments(mu: &[Complex64], center: f64, radius: f64, count: usize) -> Vec<Complex64> {
    (0..count)
        .map(|q| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut binom = 1.0;
            for j in 0..=q {
                if j > 0 {
                    binom = binom * (q - j + 1) as f64 / j as f64;
                }
                acc += binom
                    * center.powi((q - j) as i32)
                    * radius.powi(j as i32)
                    * mu.get(j).copied().unwrap_or_default();
            }
            acc
        })
        .collect()
}

/// Drops the trailing moments that sit at the roundoff floor. Inside the
/// circle the Laurent series multiplies them by (𝔯/|z − c|)^q.
fn trim_noise(mut mu: Vec<Complex64>) -> Vec<Complex64> {
    let n = mu.len();
    let noise = mu[3 * n / 4..].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let threshold = 10.0 * noise + 1e-15 * mu[0].norm();
    let keep = mu.iter().rposition(|c| c.norm() > threshold).map_or(1, |q| q + 1);
    mu.truncate(keep.max(1));
    mu
}

/// m̂(z) = −(1/𝔯) Σ μ_q ζ^{−(q+1)}.
fn laurent_eval(mu: &[Complex64], center: f64, radius: f64, z: Complex64) -> Complex64 {
    let inv = radius / (z - center);
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in mu.iter().rev() {
        acc = acc * inv + c;
    }
    -acc * inv / radius
}

/// Solves the McKean–Vlasov equation from `m0` up to `t_end`, tracking the
/// given probe characteristics.
pub fn evolve(
    m0: &SquareRootMeasure,
    potential: &Potential,
    probes: &[Complex64],
    t_end: f64,
    dt: f64,
) -> Result<MkvSolution, MkvError> {
    evolve_with(m0, potential, probes, &MkvConfig::new(t_end, dt))
}

pub fn evolve_with(
    m0: &SquareRootMeasure,
    potential: &Potential,
    probes: &[Complex64],
    cfg: &MkvConfig,
) -> Result<MkvSolution, MkvError> {
    if !(cfg.dt > 0.0 && cfg.t_end >= 0.0 && cfg.t_end.is_finite()) {
        return Err(MkvError::InvalidInput(format!("need dt > 0 and t_end >= 0, got {} and {}", cfg.dt, cfg.t_end)));
    }
    if cfg.contour_nodes < 16 || cfg.laurent_terms < 8 || cfg.laurent_terms > cfg.contour_nodes {
        return Err(MkvError::InvalidInput("contour needs >= 16 nodes and 8..=nodes Laurent terms".into()));
    }
    if let Some(p) = probes.iter().find(|p| !(p.im > 0.0)) {
        return Err(MkvError::InvalidInput(format!("probe {p} is not in the upper half plane")));
    }
    let center = m0.center();
    let radius = cfg.contour_radius.unwrap_or_else(|| (2.0 * m0.half_width()).max(3.0));
    if center.abs() + radius + 1.0 > potential.radius() {
        return Err(MkvError::InvalidInput(format!(
            "contour |c| + r + 1 = {} exceeds the potential radius {}",
            center.abs() + radius + 1.0,
            potential.radius()
        )));
    }
    let steps = if cfg.t_end == 0.0 { 0 } else { (cfg.t_end / cfg.dt * (1.0 - 1e-12)).ceil() as usize };
    let h = if steps == 0 { 0.0 } else { cfg.t_end / steps as f64 };
    let times: Vec<f64> = (0..=steps).map(|k| if k == steps { cfg.t_end } else { k as f64 * h }).collect();
    let derivs = potential.derivatives(3);
    let n_moments = potential.g_moment_count();
    let ring = Ring::new(center, radius, cfg.contour_nodes);
    let nl = cfg.laurent_terms;

    let mut m_ring: Vec<Complex64> = ring.nodes.iter().map(|&u| m0.stieltjes_unchecked(u)).collect();
    let mut laurent = Vec::with_capacity(steps + 1);
    laurent.push(trim_noise(ring.moments(&ring.nodes, &m_ring, nl)));
    let mut stages = Vec::with_capacity(steps);
    let stride = if cfg.edge_stride == 0 { (steps / 200).max(1) } else { cfg.edge_stride };
    let mut contour_chars: Vec<Characteristic> = ring
        .nodes
        .iter()
        .zip(&m_ring)
        .map(|(&u, &m)| Characteristic {
            u,
            samples: vec![CharSample {
                t: 0.0,
                z: u,
                mhat: m,
                dz_du: Complex64::new(1.0, 0.0),
                dm_du: Complex64::default(),
            }],
            hit_axis: false,
        })
        .collect();

    let kn = ring.nodes.len();
    let stage_poly = |z: &[Complex64], m: &[Complex64]| {
        let mu = ring.moments(z, m, n_moments);
        let raw = raw_moments(&mu, center, radius, n_moments);
        let g = potential.g_term_poly(&raw);
        let gp = poly_deriv_coeffs(&g);
        (g, gp)
    };
    let eval = |z: &[Complex64], m: &[Complex64], g: &(Vec<Complex64>, Vec<Complex64>)| -> Vec<State> {
        z.iter()
            .zip(m)
            .map(|(&z, &m)| {
                rhs(State { z, m, zu: Complex64::default(), mu: Complex64::default() }, &derivs, &g.0, &g.1, false)
            })
            .collect()
    };
    for step in 0..steps {
        let t = times[step];
        let dt = times[step + 1] - t;
        let z0 = ring.nodes.clone();
        let m0v = m_ring.clone();
        let g1 = stage_poly(&z0, &m0v);
        let k1 = eval(&z0, &m0v, &g1);
        let advance = |a: f64, k: &[State]| -> (Vec<Complex64>, Vec<Complex64>) {
            ((0..kn).map(|j| z0[j] + k[j].z * a).collect(), (0..kn).map(|j| m0v[j] + k[j].m * a).collect())
        };
        let (z2, m2) = advance(dt / 2.0, &k1);
        let g2 = stage_poly(&z2, &m2);
        let k2 = eval(&z2, &m2, &g2);
        let (z3, m3) = advance(dt / 2.0, &k2);
        let g3 = stage_poly(&z3, &m3);
        let k3 = eval(&z3, &m3, &g3);
        let (z4, m4) = advance(dt, &k3);
        let g4 = stage_poly(&z4, &m4);
        let k4 = eval(&z4, &m4, &g4);
        let mut zn = vec![Complex64::default(); kn];
        let mut mn = vec![Complex64::default(); kn];
        for j in 0..kn {
            zn[j] = z0[j] + (k1[j].z + 2.0 * k2[j].z + 2.0 * k3[j].z + k4[j].z) * (dt / 6.0);
            mn[j] = m0v[j] + (k1[j].m + 2.0 * k2[j].m + 2.0 * k3[j].m + k4[j].m) * (dt / 6.0);
            let d = (zn[j] - center).norm();
            if (d - radius).abs() > 1.0 {
                return Err(MkvError::ContourDrift { t: times[step + 1], distance: d });
            }
        }
        stages.push([g1, g2, g3, g4]);
        let mu = ring.moments(&zn, &mn, nl);
        for (j, u) in ring.nodes.iter().enumerate() {
            m_ring[j] = laurent_eval(&mu, center, radius, *u);
        }
        laurent.push(trim_noise(mu));
        if (step + 1) % stride == 0 || step + 1 == steps {
            for (c, m) in contour_chars.iter_mut().zip(&m_ring) {
                c.samples.push(CharSample {
                    t: times[step + 1],
                    z: c.u,
                    mhat: *m,
                    dz_du: Complex64::new(1.0, 0.0),
                    dm_du: Complex64::default(),
                });
            }
        }
    }

    let mut sol = MkvSolution {
        potential: potential.clone(),
        initial: m0.clone(),
        times,
        edge_path: Vec::new(),
        contour_chars,
        probe_chars: Vec::new(),
        center,
        radius,
        h,
        derivs,
        stages,
        laurent,
        probe_floor: cfg.probe_floor,
    };
    sol.track_edges(stride)?;
    sol.probe_chars = probes.iter().map(|&u| sol.trace(u, steps, true)).collect::<Result<_, _>>()?;
    Ok(sol)
}

impl MkvSolution {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Index of the step time equal to `t` (within 1e-9 of a step).
    pub fn step_index(&self, t: f64) -> Result<usize, MkvError> {
        if self.steps() == 0 {
            return if t.abs() < 1e-12 { Ok(0) } else { Err(MkvError::OutOfWindow(t)) };
        }
        let k = (t / self.h).round();
        if !(k >= 0.0 && k as usize <= self.steps()) || (k * self.h - t).abs() > 1e-9 * self.h.max(1.0) + 1e-12 {
            return Err(MkvError::OutOfWindow(t));
        }
        Ok(k as usize)
    }

    fn initial_state(&self, u: Complex64, tangent_dir: Complex64) -> State {
        let m = self.initial.stieltjes_unchecked(u);
        let mp = self.initial.stieltjes_derivative(u);
        State { z: u, m, zu: tangent_dir, mu: mp * tangent_dir }
    }

    fn rk4(&self, mut y: State, upto: usize, tangent: bool, mut visit: impl FnMut(usize, &State) -> bool) -> State {
        for (k, st) in self.stages.iter().take(upto).enumerate() {
            let dt = self.times[k + 1] - self.times[k];
            let k1 = rhs(y, &self.derivs, &st[0].0, &st[0].1, tangent);
            let k2 = rhs(y.axpy(dt / 2.0, k1), &self.derivs, &st[1].0, &st[1].1, tangent);
            let k3 = rhs(y.axpy(dt / 2.0, k2), &self.derivs, &st[2].0, &st[2].1, tangent);
            let k4 = rhs(y.axpy(dt, k3), &self.derivs, &st[3].0, &st[3].1, tangent);
            y = State {
                z: y.z + (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z) * (dt / 6.0),
                m: y.m + (k1.m + 2.0 * k2.m + 2.0 * k3.m + k4.m) * (dt / 6.0),
                zu: y.zu + (k1.zu + 2.0 * k2.zu + 2.0 * k3.zu + k4.zu) * (dt / 6.0),
                mu: y.mu + (k1.mu + 2.0 * k2.mu + 2.0 * k3.mu + k4.mu) * (dt / 6.0),
            };
            if !visit(k + 1, &y) {
                break;
            }
        }
        y
    }

    fn end_state(&self, u: Complex64, dir: Complex64, upto: usize) -> State {
        self.rk4(self.initial_state(u, dir), upto, true, |_, _| true)
    }

    /// Characteristic from `u` up to step `upto`, sampled at every step.
    /// With `truncate`, recording stops once Im z drops below the floor.
    pub fn trace(&self, u: Complex64, upto: usize, truncate: bool) -> Result<Characteristic, MkvError> {
        if u.im == 0.0 && u.re >= self.initial.support_left && u.re <= self.initial.edge {
            return Err(MkvError::InvalidInput(format!("start point {u} lies on the support")));
        }
        let y0 = self.initial_state(u, Complex64::new(1.0, 0.0));
        let mut samples = vec![CharSample { t: 0.0, z: y0.z, mhat: y0.m, dz_du: y0.zu, dm_du: y0.mu }];
        let mut hit = false;
        let floor = self.probe_floor;
        self.rk4(y0, upto, true, |k, y| {
            if truncate && u.im > 0.0 && y.z.im < floor {
                hit = true;
                return false;
            }
            samples.push(CharSample { t: self.times[k], z: y.z, mhat: y.m, dz_du: y.zu, dm_du: y.mu });
            true
        });
        Ok(Characteristic { u, samples, hit_axis: hit })
    }

    /// Real characteristic parametrised by u = anchor + dir·s², returning
    /// (z, m̂, ∂_s z) at step k.
    fn edge_char(&self, anchor: f64, dir: f64, s: f64, k: usize) -> State {
        let u = Complex64::new(anchor + dir * s * s, 0.0);
        let y = self.end_state(u, Complex64::new(2.0 * dir * s, 0.0), k);
        State {
            z: Complex64::new(y.z.re, 0.0),
            m: Complex64::new(y.m.re, 0.0),
            zu: Complex64::new(y.zu.re, 0.0),
            mu: Complex64::new(y.mu.re, 0.0),
        }
    }

    /// Critical point s* > 0 of s ↦ z_t(anchor + dir·s²) at step k.
    fn critical_s(&self, anchor: f64, dir: f64, k: usize, guess: f64) -> Result<f64, MkvError> {
        let t = self.times[k];
        let f = |s: f64| self.edge_char(anchor, dir, s, k).zu.re;
        let lo0 = 1e-6;
        let f_lo0 = f(lo0);
        // ∂_s z starts at 2·dir·s and is pushed the other way by the flow.
        let sign_lo = f_lo0.signum();
        let mut hi = guess.max(4.0 * lo0);
        let mut f_hi = f(hi);
        let mut tries = 0;
        while f_hi.signum() == sign_lo {
            hi *= 2.0;
            f_hi = f(hi);
            tries += 1;
            if tries > 60 || hi > self.radius {
                return Err(MkvError::EdgeNotFound(t));
            }
        }
        let (mut a, mut fa, mut b, mut fb) = (lo0, f_lo0, hi, f_hi);
        // Tighten the low end towards the guess when it is already bracketed.
        if guess > lo0 && guess < hi {
            let fg = f(guess);
            if fg.signum() == sign_lo {
                a = guess;
                fa = fg;
            } else {
                b = guess;
                fb = fg;
            }
        }
        let mut side = 0;
        for _ in 0..200 {
            let mut c = (a * fb - b * fa) / (fb - fa);
            if !(c > a.min(b) && c < a.max(b)) {
                c = 0.5 * (a + b);
            }
            let fc = f(c);
            if fc == 0.0 || (b - a).abs() < 1e-14 * b.abs().max(1e-8) {
                return Ok(c);
            }
            if fc.signum() == fa.signum() {
                a = c;
                fa = fc;
                if side == -1 {
                    fb /= 2.0;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa /= 2.0;
                }
                side = 1;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn edge_point(&self, k: usize, guess: (f64, f64)) -> Result<EdgePoint, MkvError> {
        let t = self.times[k];
        let e0 = self.initial.edge;
        let l0 = self.initial.support_left;
        if k == 0 {
            return Ok(EdgePoint {
                t,
                edge: e0,
                mhat_edge: self.initial.stieltjes_unchecked(Complex64::new(e0, 0.0)).re,
                amplitude: self.initial.amplitude,
                left_edge: l0,
                s_right: 0.0,
                s_left: 0.0,
            });
        }
        let sr = self.critical_s(e0, 1.0, k, guess.0)?;
        let sl = self.critical_s(l0, -1.0, k, guess.1)?;
        let yr = self.edge_char(e0, 1.0, sr, k);
        let yl = self.edge_char(l0, -1.0, sl, k);
        // z ≈ E + ½ z_ss (s − s*)², m̂ ≈ m̂(E) + m_s (s − s*) ⇒ C = m_s √(2/z_ss)/π.
        let ds = 1e-4 * sr.max(1e-6);
        let zss = (self.edge_char(e0, 1.0, sr + ds, k).zu.re - self.edge_char(e0, 1.0, sr - ds, k).zu.re) / (2.0 * ds);
        let amplitude = yr.mu.re.abs() * (2.0 / zss).sqrt() / PI;
        Ok(EdgePoint { t, edge: yr.z.re, mhat_edge: yr.m.re, amplitude, left_edge: yl.z.re, s_right: sr, s_left: sl })
    }

    fn track_edges(&mut self, stride: usize) -> Result<(), MkvError> {
        let n = self.steps();
        let mut ks: Vec<usize> = (0..=n).step_by(stride.max(1)).collect();
        if *ks.last().unwrap() != n {
            ks.push(n);
        }
        let mut path = Vec::with_capacity(ks.len());
        let mut prev: Option<EdgePoint> = None;
        for k in ks {
            let guess = match prev {
                Some(p) if p.t > 0.0 => {
                    let r = self.times[k] / p.t;
                    (p.s_right * r, p.s_left * r)
                }
                _ => (1e-3, 1e-3),
            };
            let pt = self.edge_point(k, guess)?;
            prev = Some(pt);
            path.push(pt);
        }
        self.edge_path = path;
        Ok(())
    }

    /// Edge data at a step time, computed on demand if not on the path.
    pub fn edge_at(&self, t: f64) -> Result<EdgePoint, MkvError> {
        if let Some(p) = self.edge_path.iter().find(|p| (p.t - t).abs() < 1e-12) {
            return Ok(*p);
        }
        let k = self.step_index(t)?;
        let before = self.edge_path.iter().rev().find(|p| p.t <= t).copied();
        let guess = match before {
            Some(p) if p.t > 0.0 => (p.s_right * t / p.t, p.s_left * t / p.t),
            _ => (1e-3, 1e-3),
        };
        self.edge_point(k, guess)
    }

    /// Largest |E_t − E_s|/|t − s| between consecutive recorded edge points.
    pub fn edge_lipschitz(&self) -> f64 {
        self.edge_path.windows(2).map(|w| ((w[1].edge - w[0].edge) / (w[1].t - w[0].t)).abs()).fold(0.0, f64::max)
    }

    pub fn amplitude_lipschitz(&self) -> f64 {
        self.edge_path
            .windows(2)
            .map(|w| ((w[1].amplitude - w[0].amplitude) / (w[1].t - w[0].t)).abs())
            .fold(0.0, f64::max)
    }

    /// Moments M_0..M_{count−1} of ρ̂_t at a step time.
    pub fn moments(&self, t: f64, count: usize) -> Result<Vec<f64>, MkvError> {
        let k = self.step_index(t)?;
        let mu = &self.laurent[k];
        Ok(raw_moments(mu, self.center, self.radius, count).iter().map(|c| c.re).collect())
    }

    /// Coefficients of G_t(z) = ∫ g(z, x) dρ̂_t(x) as a polynomial in z,
    /// from the contour moments.
    pub fn g_poly(&self, t: f64) -> Result<Vec<Complex64>, MkvError> {
        let k = self.step_index(t)?;
        let n = self.potential.g_moment_count();
        let raw = raw_moments(&self.laurent[k], self.center, self.radius, n);
        Ok(self.potential.g_term_poly(&raw))
    }

    pub fn g_term(&self, t: f64, z: Complex64) -> Result<Complex64, MkvError> {
        Ok(poly_c(&self.g_poly(t)?, z))
    }

    /// Support radius about the contour centre at step k.
    fn support_radius(&self, k: usize) -> Result<f64, MkvError> {
        let p = self.edge_at(self.times[k])?;
        Ok((p.edge - self.center).abs().max((p.left_edge - self.center).abs()))
    }

    /// Finds u with z_t(u) = target by Newton on the variational tangent.
    pub fn shoot(&self, t: f64, target: Complex64, guess: Option<Complex64>) -> Result<Complex64, MkvError> {
        let k = self.step_index(t)?;
        if k == 0 {
            return Ok(target);
        }
        let mut u = match guess {
            Some(g) => g,
            None => {
                let mut u = target + Complex64::new(0.0, 0.5 * t);
                for _ in 0..30 {
                    let m = self.initial.stieltjes_unchecked(u);
                    let next = target + t * (m + self.derivs.at_c(1, u) / 2.0);
                    if !(next.im > 0.0) {
                        break;
                    }
                    u = next;
                }
                u
            }
        };
        for _ in 0..60 {
            let y = self.end_state(u, Complex64::new(1.0, 0.0), k);
            let r = y.z - target;
            if r.norm() < 1e-13 * target.norm().max(1.0) {
                return Ok(u);
            }
            let mut step = r / y.zu;
            let mut next = u - step;
            let mut tries = 0;
            while !(next.im > 0.0) && tries < 60 {
                step *= 0.5;
                next = u - step;
                tries += 1;
            }
            if step.norm() < 1e-15 * u.norm().max(1.0) {
                return Ok(next);
            }
            u = next;
        }
        let y = self.end_state(u, Complex64::new(1.0, 0.0), k);
        if (y.z - target).norm() < 1e-9 * target.norm().max(1.0) {
            return Ok(u);
        }
        Err(MkvError::ShootingFailed { target, t })
    }

    /// m̂_t(z) and ∂_z m̂_t(z) for z in the closed upper half plane off the support.
    pub fn mhat_with_derivative(&self, t: f64, z: Complex64) -> Result<(Complex64, Complex64), MkvError> {
        if z.im < 0.0 {
            let (m, d) = self.mhat_with_derivative(t, z.conj())?;
            return Ok((m.conj(), d.conj()));
        }
        let k = self.step_index(t)?;
        if k == 0 {
            return Ok((self.initial.stieltjes_unchecked(z), self.initial.stieltjes_derivative(z)));
        }
        let rs = self.support_radius(k)?;
        let dist = (z - self.center).norm();
        if rs / dist < LAURENT_RATIO {
            let mu = &self.laurent[k];
            let m = laurent_eval(mu, self.center, self.radius, z);
            let h = 1e-6 * dist;
            let d = (laurent_eval(mu, self.center, self.radius, z + h)
                - laurent_eval(mu, self.center, self.radius, z - h))
                / (2.0 * h);
            return Ok((m, d));
        }
        let u = self.shoot(t, z, None)?;
        let y = self.end_state(u, Complex64::new(1.0, 0.0), k);
        Ok((y.m, y.mu / y.zu))
    }

    pub fn mhat(&self, t: f64, z: Complex64) -> Result<Complex64, MkvError> {
        Ok(self.mhat_with_derivative(t, z)?.0)
    }

    /// Density ρ̂_t at the given points, by shooting to the real axis.
    pub fn density_at(&self, t: f64, xs: &[f64]) -> Result<Vec<f64>, MkvError> {
        let p = self.edge_at(t)?;
        if self.step_index(t)? == 0 {
            return Ok(xs.iter().map(|&x| self.initial.density(x)).collect());
        }
        // Sweep outward from the middle so each solve starts near the last.
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mid = 0.5 * (p.edge + p.left_edge);
        order.sort_by(|&a, &b| (xs[a] - mid).abs().total_cmp(&(xs[b] - mid).abs()));
        let mut out = vec![0.0; xs.len()];
        let mut last_right: Option<(f64, Complex64)> = None;
        let mut last_left: Option<(f64, Complex64)> = None;
        for i in order {
            let x = xs[i];
            if x >= p.edge || x <= p.left_edge {
                out[i] = 0.0;
                continue;
            }
            let slot = if x >= mid { &mut last_right } else { &mut last_left };
            let guess = slot.map(|(x0, u0)| u0 + (x - x0));
            let target = Complex64::new(x, 0.0);
            let u = match guess.map(|g| self.shoot(t, target, Some(g))) {
                Some(Ok(u)) => u,
                _ => self.shoot(t, target, None)?,
            };
            *slot = Some((x, u));
            let k = self.step_index(t)?;
            let y = self.end_state(u, Complex64::new(1.0, 0.0), k);
            let rho = y.m.im / PI;
            if rho < -NEGATIVE_DENSITY_TOL {
                return Err(MkvError::NegativeDensity { x, rho });
            }
            out[i] = rho.max(0.0);
        }
        Ok(out)
    }

    /// Reconstructs ρ̂_t as a square-root measure from its Stieltjes transform.
    pub fn invert_stieltjes(&self, t: f64) -> Result<Reconstruction, MkvError> {
        let p = self.edge_at(t)?;
        let (c, r) = (0.5 * (p.edge + p.left_edge), 0.5 * (p.edge - p.left_edge));
        let angles = cheb::node_angles(DENSITY_NODES);
        let xs: Vec<f64> = angles.iter().map(|a| c + r * a.cos()).collect();
        let rho = self.density_at(t, &xs)?;
        let profile: Vec<f64> =
            xs.iter().zip(&rho).map(|(&x, &d)| d / ((p.edge - x) * (x - p.left_edge)).sqrt()).collect();
        let measure = SquareRootMeasure::from_profile_values(p.edge, p.left_edge, &profile, 1e-4)
            .or_else(|_| SquareRootMeasure::from_profile_values(p.edge, p.left_edge, &profile, 1e-2))?;
        let fitted = fit_edge_amplitude(p.edge, p.left_edge, &xs, &rho);
        let mass = measure.mass();
        Ok(Reconstruction {
            t,
            measure,
            fitted_amplitude: fitted,
            edge_amplitude: p.amplitude,
            mass,
            samples: xs.into_iter().zip(rho).collect(),
        })
    }

    /// Edge path CSV `t,E,mhatE,C`.
    pub fn write_edge_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,E,mhatE,C")?;
        for p in &self.edge_path {
            writeln!(w, "{},{},{},{}", p.t, p.edge, p.mhat_edge, p.amplitude)?;
        }
        Ok(())
    }

    /// All probe characteristics in one CSV.
    pub fn write_probe_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,re_z,im_z,re_m,im_m,u_re,u_im")?;
        for c in &self.probe_chars {
            c.write_csv(&mut w, false)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub t: f64,
    pub measure: SquareRootMeasure,
    /// Least-squares amplitude of ρ/√(E − x) over the last tenth of the support.
    pub fitted_amplitude: f64,
    /// Amplitude from the local expansion at the edge critical point.
    pub edge_amplitude: f64,
    pub mass: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Fits ρ/√(E − x) by a polynomial in (E − x) of degree ≤ 4 on the last
/// tenth of the support and returns its value at the edge.
pub fn fit_edge_amplitude(edge: f64, left: f64, xs: &[f64], rho: &[f64]) -> f64 {
    let width = edge - left;
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(rho)
        .filter(|(x, _)| **x < edge && edge - **x <= 0.1 * width)
        .map(|(&x, &r)| ((edge - x) / (0.1 * width), r / (edge - x).sqrt()))
        .collect();
    let deg = 4.min(pts.len().saturating_sub(1));
    if pts.is_empty() {
        return f64::NAN;
    }
    let n = deg + 1;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for &(s, y) in &pts {
        let mut pi = vec![1.0; n];
        for j in 1..n {
            pi[j] = pi[j - 1] * s;
        }
        for i in 0..n {
            b[i] += pi[i] * y;
            for j in 0..n {
                a[i][j] += pi[i] * pi[j];
            }
        }
    }
    match crate::stats::cholesky(&a) {
        Some(l) => crate::stats::cholesky_solve(&l, &b)[0],
        None => pts[0].1,
    }
}

impl Default for MkvConfig {
    fn default() -> Self {
        Self::new(0.1, DEFAULT_DT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::m_semicircle;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn laurent_round_trip_on_semicircle() {
        let m0 = SquareRootMeasure::semicircle();
        let ring = Ring::new(0.0, 4.0, 256);
        let m: Vec<Complex64> = ring.nodes.iter().map(|&u| m0.stieltjes_unchecked(u)).collect();
        let mu = ring.moments(&ring.nodes, &m, 128);
        assert!((mu[0] - 1.0).norm() < 1e-13);
        assert!((mu[2] - 1.0 / 16.0).norm() < 1e-13);
        let z = c(0.5, 3.2);
        let mu = trim_noise(mu);
        let err = (laurent_eval(&mu, 0.0, 4.0, z) - m_semicircle(z)).norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn stationary_semicircle_edge() {
        let m0 = SquareRootMeasure::semicircle();
        let sol = evolve(&m0, &Potential::quadratic(), &[c(2.0, 0.2)], 0.05, 1e-3).unwrap();
        for p in &sol.edge_path {
            assert!((p.edge - 2.0).abs() < 1e-8, "{p:?}");
            assert!((p.mhat_edge + 1.0).abs() < 1e-6);
            assert!((p.amplitude - 1.0 / PI).abs() < 1e-5);
        }
        let probe = sol.probe_chars[0].last();
        assert!((probe.mhat - m_semicircle(probe.z)).norm() < 1e-9);
    }

    #[test]
    fn free_transport_edge_is_free_convolution() {
        // V = 0 spreads the semicircle to variance 1 + t.
        let m0 = SquareRootMeasure::semicircle();
        let sol = evolve(&m0, &Potential::zero(), &[], 0.05, 1e-3).unwrap();
        for p in &sol.edge_path {
            let exact = 2.0 * (1.0 + p.t).sqrt();
            assert!((p.edge - exact).abs() < 1e-9, "{} {} {}", p.t, p.edge, exact);
            assert!((p.mhat_edge + 1.0 / (1.0 + p.t).sqrt()).abs() < 1e-8);
            let amp = 1.0 / (PI * (1.0 + p.t).powf(0.75));
            assert!((p.amplitude - amp).abs() < 1e-6 * amp.max(1.0), "{} {}", p.amplitude, amp);
        }
    }

    #[test]
    fn free_transport_density_and_stieltjes() {
        let m0 = SquareRootMeasure::semicircle();
        let sol = evolve(&m0, &Potential::zero(), &[], 0.04, 1e-3).unwrap();
        let s = 1.04f64;
        let rec = sol.invert_stieltjes(0.04).unwrap();
        for &(x, r) in rec.samples.iter().step_by(17) {
            let exact = (4.0 * s - x * x).max(0.0).sqrt() / (2.0 * PI * s);
            assert!((r - exact).abs() < 1e-8, "{x} {r} {exact}");
        }
        assert!((rec.mass - 1.0).abs() < 1e-8);
        let z = c(1.0, 0.3);
        let exact = (-z + (z * z - 4.0 * s).sqrt() * (z * z - 4.0 * s).sqrt().re.signum()) / (2.0 * s);
        let got = sol.mhat(0.04, z).unwrap();
        let exact = if exact.im > 0.0 { exact } else { (-z - (z * z - 4.0 * s).sqrt()) / (2.0 * s) };
        assert!((got - exact).norm() < 1e-9, "{got} {exact}");
    }
}
