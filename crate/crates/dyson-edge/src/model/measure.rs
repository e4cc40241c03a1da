use super::ModelError;
use crate::cheb;
use crate::series::EdgeSeries;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

pub const DEFAULT_MASS_TOL: f64 = 1e-6;
const GAUSS_NODES: usize = 512;
const PROFILE_NODES: usize = 256;
// Bernstein-ellipse parameter above which the plain Gauss sum is used.
const DIRECT_SWITCH: f64 = 1.04;
const DIVDIFF_SWITCH: f64 = 1e-3;

/// Where the profile came from; closed forms are kept for reference values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureKind {
    Semicircle,
    KestenMcKay(f64),
    Profile,
}

/// Probability density ρ(x) = S(x)·√((E − x)(x − L)) on [L, E] with S > 0
/// smooth, so that ρ ≈ C√(E − x) at the right edge E.
///
/// S is stored as a Chebyshev series on [L, E]; all quadratures use the
/// cosine map x = c + R cos θ, which removes both square-root endpoints.
#[derive(Debug, Clone)]
pub struct SquareRootMeasure {
    pub edge: f64,
    pub amplitude: f64,
    pub support_left: f64,
    pub density_nodes: Vec<(f64, f64)>,
    pub near_edge_series: Option<Arc<EdgeSeries>>,
    kind: MeasureKind,
    profile: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
    // (ξ_j, w_j, S(ξ_j)) for the Gauss rule with weight √(1 − ξ²).
    gauss: Vec<(f64, f64, f64)>,
}

/// √(ζ − 1)·√(ζ + 1) with principal factors: analytic off [−1, 1] and ~ ζ at ∞.
pub fn sqrt_cut(zeta: Complex64) -> Complex64 {
    (zeta - 1.0).sqrt() * (zeta + 1.0).sqrt()
}

/// Stieltjes transform of the semicircle on [−2, 2].
pub fn m_semicircle(z: Complex64) -> Complex64 {
    (-z + 2.0 * sqrt_cut(z / 2.0)) / 2.0
}

/// Stieltjes transform of the Kesten–McKay law of degree d on [−2, 2].
pub fn m_kesten_mckay(d: f64, z: Complex64) -> Complex64 {
    let p = 1.0 + 1.0 / (d - 1.0) - z * z / d;
    (-(d - 2.0) * z / (2.0 * d) + sqrt_cut(z / 2.0)) / p
}

impl SquareRootMeasure {
    /// Semicircle law on [−2, 2].
    pub fn semicircle() -> Self {
        Self::scaled_semicircle(0.0, 2.0)
    }

    /// Semicircle law centred at `center` with radius `radius`.
    pub fn scaled_semicircle(center: f64, radius: f64) -> Self {
        let s = 2.0 / (PI * radius * radius);
        let mut m = Self::from_profile_values(center + radius, center - radius, &[s], DEFAULT_MASS_TOL)
            .expect("semicircle is a valid measure");
        m.kind = if center == 0.0 && radius == 2.0 { MeasureKind::Semicircle } else { MeasureKind::Profile };
        m
    }

    /// Kesten–McKay law of degree d > 2 on [−2, 2].
    pub fn kesten_mckay(d: f64) -> Result<Self, ModelError> {
        if !(d > 2.0) {
            return Err(ModelError::InvalidMeasure(format!("Kesten-McKay degree must exceed 2, got {d}")));
        }
        let s = move |x: f64| 1.0 / (2.0 * PI * (1.0 + 1.0 / (d - 1.0) - x * x / d));
        let mut m = Self::from_profile_fn(2.0, -2.0, s, DEFAULT_MASS_TOL)?;
        m.kind = MeasureKind::KestenMcKay(d);
        Ok(m)
    }

    /// Builds the measure from S(x) = ρ(x)/√((E − x)(x − L)).
    pub fn from_profile_fn(
        edge: f64,
        left: f64,
        profile: impl Fn(f64) -> f64,
        mass_tol: f64,
    ) -> Result<Self, ModelError> {
        let (c, r) = ((edge + left) / 2.0, (edge - left) / 2.0);
        let vals: Vec<f64> = cheb::node_angles(PROFILE_NODES).iter().map(|t| profile(c + r * t.cos())).collect();
        Self::from_profile_values(edge, left, &vals, mass_tol)
    }

    /// Builds the measure from S sampled at the first-kind Chebyshev nodes
    /// x_k = c + R cos((k + ½)π/n) of [L, E].
    pub fn from_profile_values(edge: f64, left: f64, values: &[f64], mass_tol: f64) -> Result<Self, ModelError> {
        if !(edge > left) || !edge.is_finite() || !left.is_finite() {
            return Err(ModelError::InvalidMeasure(format!("bad support [{left}, {edge}]")));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidMeasure("profile values must be finite".into()));
        }
        let profile = cheb::trim(cheb::coeffs_from_values(values), 1e-15);
        let m = Self::assemble(edge, left, profile, MeasureKind::Profile);
        if m.amplitude <= 0.0 {
            return Err(ModelError::InvalidMeasure(format!("edge amplitude must be positive, got {}", m.amplitude)));
        }
        let floor = -1e-9 * values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if values.iter().any(|&v| v < floor) || m.density_nodes.iter().any(|&(_, r)| r < floor) {
            return Err(ModelError::InvalidMeasure("negative density".into()));
        }
        let mass = m.mass();
        if (mass - 1.0).abs() > mass_tol {
            return Err(ModelError::InvalidMeasure(format!("total mass {mass} differs from 1")));
        }
        Ok(m)
    }

    /// Builds the measure from (x, ρ) samples such as a measure file.
    /// The profile ρ/√((E − x)(x − L)) is linearly interpolated onto the
    /// Chebyshev nodes and the result renormalised.
    pub fn from_density_samples(
        edge: f64,
        left: f64,
        samples: &[(f64, f64)],
        mass_tol: f64,
    ) -> Result<Self, ModelError> {
        let mut pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|(x, _)| *x > left && *x < edge)
            .map(|&(x, r)| (x, r / ((edge - x) * (x - left)).sqrt()))
            .collect();
        if pts.len() < 4 {
            return Err(ModelError::InvalidMeasure("need at least 4 interior samples".into()));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (c, r) = ((edge + left) / 2.0, (edge - left) / 2.0);
        let interp = |x: f64| -> f64 {
            let k = pts.partition_point(|p| p.0 < x);
            if k == 0 {
                return pts[0].1;
            }
            if k >= pts.len() {
                return pts[pts.len() - 1].1;
            }
            let (a, b) = (pts[k - 1], pts[k]);
            a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
        };
        let vals: Vec<f64> = cheb::node_angles(PROFILE_NODES).iter().map(|t| interp(c + r * t.cos())).collect();
        let raw = Self::assemble(edge, left, cheb::coeffs_from_values(&vals), MeasureKind::Profile);
        let mass = raw.mass();
        if (mass - 1.0).abs() > mass_tol.max(0.05) {
            return Err(ModelError::InvalidMeasure(format!("sampled mass {mass} too far from 1")));
        }
        let vals: Vec<f64> = vals.iter().map(|v| v / mass).collect();
        Self::from_profile_values(edge, left, &vals, mass_tol)
    }

    fn assemble(edge: f64, left: f64, profile: Vec<f64>, kind: MeasureKind) -> Self {
        let (c, r) = ((edge + left) / 2.0, (edge - left) / 2.0);
        let d1 = cheb::derivative(&profile);
        let d2 = cheb::derivative(&d1);
        let d3 = cheb::derivative(&d2);
        let gauss = (1..=GAUSS_NODES)
            .map(|j| {
                let th = j as f64 * PI / (GAUSS_NODES + 1) as f64;
                let xi = th.cos();
                let w = PI / (GAUSS_NODES + 1) as f64 * th.sin().powi(2);
                (xi, w, cheb::eval(&profile, xi))
            })
            .collect();
        let amplitude = cheb::eval(&profile, 1.0) * (2.0 * r).sqrt();
        let mut m = Self {
            edge,
            amplitude,
            support_left: left,
            density_nodes: Vec::new(),
            near_edge_series: None,
            kind,
            profile,
            d1,
            d2,
            d3,
            gauss,
        };
        let n = PROFILE_NODES;
        let mut nodes: Vec<(f64, f64)> = cheb::node_angles(n)
            .iter()
            .rev()
            .map(|t| {
                let x = c + r * t.cos();
                (x, m.density(x))
            })
            .collect();
        nodes.insert(0, (left, 0.0));
        nodes.push((edge, 0.0));
        m.density_nodes = nodes;
        m
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn center(&self) -> f64 {
        (self.edge + self.support_left) / 2.0
    }

    pub fn half_width(&self) -> f64 {
        (self.edge - self.support_left) / 2.0
    }

    /// Chebyshev coefficients of the profile S on [L, E].
    pub fn profile_coeffs(&self) -> &[f64] {
        &self.profile
    }

    pub fn profile(&self, x: f64) -> f64 {
        cheb::eval(&self.profile, (x - self.center()) / self.half_width())
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= self.support_left || x >= self.edge {
            return 0.0;
        }
        let w = ((self.edge - x) * (x - self.support_left)).sqrt();
        self.profile(x) * w
    }

    /// ∫ ρ, exact for the stored series.
    pub fn mass(&self) -> f64 {
        let r = self.half_width();
        let a2 = self.profile.get(2).copied().unwrap_or(0.0);
        r * r * PI * (self.profile[0] / 2.0 - a2 / 4.0)
    }

    // Cosine-series coefficients e_j of S(cos φ) sin²φ.
    fn mass_series(&self) -> Vec<f64> {
        let n = self.profile.len();
        let mut e = vec![0.0; n + 3];
        for (k, &a) in self.profile.iter().enumerate() {
            e[k] += a / 2.0;
            e[k + 2] -= a / 4.0;
            e[(k as i64 - 2).unsigned_abs() as usize] -= a / 4.0;
        }
        e
    }

    /// ∫_x^E ρ.
    pub fn mass_right_of(&self, x: f64) -> f64 {
        if x >= self.edge {
            return 0.0;
        }
        if x <= self.support_left {
            return self.mass();
        }
        let theta = ((x - self.center()) / self.half_width()).clamp(-1.0, 1.0).acos();
        self.mass_right_of_angle(&self.mass_series(), theta)
    }

    fn mass_right_of_angle(&self, e: &[f64], theta: f64) -> f64 {
        let r = self.half_width();
        let mut s = e[0] * theta;
        for (j, &c) in e.iter().enumerate().skip(1) {
            s += c * (j as f64 * theta).sin() / j as f64;
        }
        r * r * s
    }

    /// The point x with ∫_x^E ρ = p, by safeguarded Newton in the angle variable.
    pub fn quantile_from_edge(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.edge;
        }
        let total = self.mass();
        if p >= total {
            return self.support_left;
        }
        let e = self.mass_series();
        let r = self.half_width();
        let (mut lo, mut hi) = (0.0, PI);
        // Near the edge the mass grows like θ³; start from that.
        let c0 = self.profile(self.edge) * r * r;
        let mut th = (3.0 * p / c0.max(1e-300)).cbrt().min(PI / 2.0);
        for _ in 0..200 {
            let f = self.mass_right_of_angle(&e, th) - p;
            if f > 0.0 {
                hi = th;
            } else {
                lo = th;
            }
            let x = self.center() + r * th.cos();
            let df = r * r * self.profile(x) * th.sin().powi(2);
            let mut next = th - f / df;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - th).abs() < 1e-15 || hi - lo < 1e-15 {
                th = next;
                break;
            }
            th = next;
        }
        self.center() + r * th.cos()
    }

    /// ∫ f dρ by the Gauss rule for the weight √(1 − ξ²).
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let (c, r) = (self.center(), self.half_width());
        r * r * self.gauss.iter().map(|&(xi, w, s)| w * s * f(c + r * xi)).sum::<f64>()
    }

    pub fn integrate_c(&self, f: impl Fn(f64) -> Complex64) -> Complex64 {
        let (c, r) = (self.center(), self.half_width());
        r * r * self.gauss.iter().map(|&(xi, w, s)| w * s * f(c + r * xi)).sum::<Complex64>()
    }

    /// Moments M_0..M_{count-1}.
    pub fn moments(&self, count: usize) -> Vec<f64> {
        (0..count).map(|q| self.integrate(|x| x.powi(q as i32))).collect()
    }

    fn s_c(&self, zeta: Complex64) -> Complex64 {
        cheb::eval_c(&self.profile, zeta)
    }

    // R ∫ (S(ξ) − S(ζ)) √(1 − ξ²)/(ξ − ζ) dξ, exact for the stored series.
    fn regular_part(&self, zeta: Complex64, s_zeta: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(xi, w, s) in &self.gauss {
            let h = Complex64::new(xi, 0.0) - zeta;
            let dd = if h.norm() < DIVDIFF_SWITCH {
                let mid = (zeta + xi) / 2.0;
                cheb::eval_c(&self.d1, mid) + cheb::eval_c(&self.d3, mid) * h * h / 24.0
            } else {
                (s - s_zeta) / h
            };
            acc += w * dd;
        }
        acc
    }

    /// m(z) = ∫ ρ(x)/(x − z) dx.
    ///
    /// Away from the support a plain Gauss sum is spectrally accurate. Near
    /// it, S(z)·∫√((E−x)(x−L))/(x − z) dx is subtracted in closed form and
    /// the remaining integrand is a polynomial, integrated exactly.
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64, ModelError> {
        if z.im == 0.0 && z.re > self.support_left && z.re < self.edge {
            return Err(ModelError::PointOnSupport(z));
        }
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(ModelError::PointOnSupport(z));
        }
        Ok(self.stieltjes_unchecked(z))
    }

    pub fn stieltjes_unchecked(&self, z: Complex64) -> Complex64 {
        if z.im < 0.0 {
            return self.stieltjes_unchecked(z.conj()).conj();
        }
        let (c, r) = (self.center(), self.half_width());
        let zeta = (z - c) / r;
        let root = sqrt_cut(zeta);
        if (zeta + root).norm() > DIRECT_SWITCH {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(xi, w, s) in &self.gauss {
                acc += w * s / (Complex64::new(xi, 0.0) - zeta);
            }
            return acc * r;
        }
        let s = self.s_c(zeta);
        let w_part = -PI / (zeta + root);
        (self.regular_part(zeta, s) + s * w_part) * r
    }

    /// m′(z) = ∫ ρ(x)/(x − z)² dx, split the same way as `stieltjes`.
    pub fn stieltjes_derivative(&self, z: Complex64) -> Complex64 {
        if z.im < 0.0 {
            return self.stieltjes_derivative(z.conj()).conj();
        }
        let (c, r) = (self.center(), self.half_width());
        let zeta = (z - c) / r;
        let root = sqrt_cut(zeta);
        if (zeta + root).norm() > DIRECT_SWITCH {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(xi, w, s) in &self.gauss {
                let h = Complex64::new(xi, 0.0) - zeta;
                acc += w * s / (h * h);
            }
            return acc;
        }
        let s = self.s_c(zeta);
        let s1 = cheb::eval_c(&self.d1, zeta);
        let mut reg = Complex64::new(0.0, 0.0);
        for &(xi, w, sx) in &self.gauss {
            let h = Complex64::new(xi, 0.0) - zeta;
            let dd = if h.norm() < DIVDIFF_SWITCH {
                cheb::eval_c(&self.d2, zeta) / 2.0 + cheb::eval_c(&self.d3, zeta) * h / 6.0
            } else {
                (sx - s - s1 * h) / (h * h)
            };
            reg += w * dd;
        }
        let wv = -PI * (zeta - root);
        let wd = -PI * (1.0 - zeta / root);
        reg + s1 * wv + s * wd
    }

    /// Splits m = A + √B near the support with A, B analytic at the edge:
    /// returns (A(z), B(z)).
    ///
    /// The known laws use their closed forms, which stay exact off the
    /// support where the Chebyshev continuation of S loses accuracy.
    pub fn edge_decomposition(&self, z: Complex64) -> (Complex64, Complex64) {
        match self.kind {
            MeasureKind::Semicircle => return (-z / 2.0, z * z / 4.0 - 1.0),
            MeasureKind::KestenMcKay(d) => {
                let p = 1.0 + 1.0 / (d - 1.0) - z * z / d;
                return (-(d - 2.0) * z / (2.0 * d * p), (z * z / 4.0 - 1.0) / (p * p));
            }
            MeasureKind::Profile => {}
        }
        let (c, r) = (self.center(), self.half_width());
        let zeta = (z - c) / r;
        let s = self.s_c(zeta);
        let a = self.regular_part(zeta, s) * r - PI * r * s * zeta;
        let b = (PI * r * s).powi(2) * (zeta * zeta - 1.0);
        (a, b)
    }

    /// Reference value from a closed form where one exists.
    pub fn stieltjes_closed_form(&self, z: Complex64) -> Option<Complex64> {
        match self.kind {
            MeasureKind::Semicircle => Some(m_semicircle(z)),
            MeasureKind::KestenMcKay(d) => Some(m_kesten_mckay(d, z)),
            MeasureKind::Profile => None,
        }
    }

    /// Largest relative deviation of ρ(x)/√(E − x) from the amplitude over
    /// the nodes in the last decade of the support.
    pub fn edge_ratio_deviation(&self) -> f64 {
        let width = self.edge - self.support_left;
        self.density_nodes
            .iter()
            .filter(|(x, _)| *x < self.edge && self.edge - *x < 0.01 * width)
            .map(|&(x, r)| (r / (self.edge - x).sqrt() / self.amplitude - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `x,rho` CSV plus a `<path>.meta` sidecar.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut csv = String::from("x,rho\n");
        for (x, r) in &self.density_nodes {
            csv.push_str(&format!("{x:.17e},{r:.17e}\n"));
        }
        std::fs::write(path, csv)?;
        let meta = format!(
            "edge={:.17e}\namplitude={:.17e}\nsupport_left={:.17e}\n",
            self.edge, self.amplitude, self.support_left
        );
        std::fs::write(meta_path(path), meta)
    }

    /// Reads a measure written by [`SquareRootMeasure::save`] or by hand.
    pub fn load(path: &Path, mass_tol: f64) -> Result<Self, ModelError> {
        let io = |e: std::io::Error| ModelError::InvalidMeasure(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(io)?;
        let meta = std::fs::read_to_string(meta_path(path)).map_err(io)?;
        let mut edge = None;
        let mut left = None;
        for line in meta.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::InvalidMeasure(format!("bad metadata line `{line}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| ModelError::InvalidMeasure(format!("bad number in `{line}`")))?;
            match k.trim() {
                "edge" => edge = Some(v),
                "support_left" => left = Some(v),
                "amplitude" => {}
                other => return Err(ModelError::InvalidMeasure(format!("unknown metadata key `{other}`"))),
            }
        }
        let (edge, left) = match (edge, left) {
            (Some(e), Some(l)) => (e, l),
            _ => return Err(ModelError::InvalidMeasure("metadata needs edge and support_left".into())),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,rho") {
            return Err(ModelError::InvalidMeasure("expected header `x,rho`".into()));
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| ModelError::InvalidMeasure(format!("line {}: expected x,rho", i + 2)))?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| ModelError::InvalidMeasure(format!("line {}: bad number", i + 2)))
            };
            samples.push((parse(a)?, parse(b)?));
        }
        Self::from_density_samples(edge, left, &samples, mass_tol)
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn semicircle_examples() {
        let m = SquareRootMeasure::semicircle();
        assert!((m.mass() - 1.0).abs() < 1e-14);
        assert!((m.amplitude - 1.0 / PI).abs() < 1e-14);
        let v = m.stieltjes(c(0.0, 2.0)).unwrap();
        assert!((v - c(0.0, 2f64.sqrt() - 1.0)).norm() < 1e-12);
        let v = m.stieltjes(c(2.0, 0.0)).unwrap();
        assert!((v - c(-1.0, 0.0)).norm() < 1e-12);
        assert!(matches!(m.stieltjes(c(0.5, 0.0)), Err(ModelError::PointOnSupport(_))));
    }

    #[test]
    fn kesten_mckay_closed_form() {
        let m = SquareRootMeasure::kesten_mckay(3.0).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        assert!((m.amplitude - 6.0 / PI).abs() < 1e-10);
        let v = m.stieltjes(c(2.5, 0.0)).unwrap();
        assert!((v.re - (-0.5714285714285712)).abs() < 1e-9);
        for z in [c(0.3, 0.2), c(-1.9, 1e-6), c(1.999, 1e-9), c(-4.0, 3.0)] {
            let diff = (m.stieltjes(z).unwrap() - m_kesten_mckay(3.0, z)).norm();
            assert!(diff < 1e-9, "{z}: {diff}");
        }
    }

    #[test]
    fn semicircle_near_support_and_far() {
        let m = SquareRootMeasure::semicircle();
        for z in [c(1.3, 1e-12), c(-0.7, 1e-7), c(1.9999, 1e-5), c(2.0001, 0.0), c(-2.5, 0.0), c(0.0, 1e3)] {
            let diff = (m.stieltjes(z).unwrap() - m_semicircle(z)).norm();
            assert!(diff < 1e-10, "{z}: {diff}");
        }
    }

    #[test]
    fn lower_half_plane_is_conjugate() {
        let m = SquareRootMeasure::kesten_mckay(4.0).unwrap();
        let z = c(0.4, 0.3);
        assert!((m.stieltjes(z.conj()).unwrap() - m.stieltjes(z).unwrap().conj()).norm() < 1e-14);
    }

    #[test]
    fn derivative_matches_closed_form() {
        let m = SquareRootMeasure::kesten_mckay(3.0).unwrap();
        for z in [c(2.5, 0.0), c(2.0001, 0.0), c(1.9, 0.01), c(0.3, 0.5), c(-2.01, 1e-4), c(1.99, -0.02)] {
            let h = 1e-9;
            let fd = (m_kesten_mckay(3.0, z + h) - m_kesten_mckay(3.0, z - h)) / (2.0 * h);
            let got = m.stieltjes_derivative(z);
            assert!((got - fd).norm() < 1e-6 * fd.norm().max(1.0), "{z}: {got} vs {fd}");
        }
    }

    #[test]
    fn edge_decomposition_recombines() {
        let m = SquareRootMeasure::kesten_mckay(3.0).unwrap();
        for z in [c(2.05, 0.01), c(1.95, 0.03), c(2.0, 0.08)] {
            let (a, b) = m.edge_decomposition(z);
            let rest = m.stieltjes(z).unwrap() - a;
            assert!((rest * rest - b).norm() < 1e-10 * b.norm().max(1e-3));
        }
        let s = SquareRootMeasure::semicircle();
        let z = c(2.03, -0.02);
        let (a, b) = s.edge_decomposition(z);
        assert!((a + z / 2.0).norm() < 1e-12);
        assert!((b - (z * z - 4.0) / 4.0).norm() < 1e-12);
    }

    #[test]
    fn quantiles_invert_mass() {
        let m = SquareRootMeasure::kesten_mckay(3.0).unwrap();
        for p in [1e-6, 0.001, 0.2, 0.5, 0.93] {
            let x = m.quantile_from_edge(p);
            assert!((m.mass_right_of(x) - p).abs() < 1e-12);
        }
        assert_eq!(m.quantile_from_edge(0.0), 2.0);
    }

    #[test]
    fn semicircle_second_quantile() {
        let m = SquareRootMeasure::semicircle();
        let g2 = m.quantile_from_edge(1.0 / 1000.0);
        // (2C/3)(E − γ)^{3/2} = p to leading order
        let lead = (3.0 * 0.001 / (2.0 / PI)).powf(2.0 / 3.0);
        assert!((2.0 - g2 - lead).abs() < 1e-3);
        assert!((g2 - 1.9719).abs() < 5e-4);
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(SquareRootMeasure::from_profile_fn(1.0, -1.0, |_| 1.0, 1e-6).is_err());
        assert!(SquareRootMeasure::kesten_mckay(2.0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("km.csv");
        let m = SquareRootMeasure::kesten_mckay(4.0).unwrap();
        m.save(&path).unwrap();
        let back = SquareRootMeasure::load(&path, 1e-6).unwrap();
        assert!((back.edge - 2.0).abs() < 1e-15);
        let z = c(0.5, 0.5);
        assert!((back.stieltjes(z).unwrap() - m.stieltjes(z).unwrap()).norm() < 1e-4);
    }

    #[test]
    fn edge_ratio_is_tight_for_semicircle() {
        assert!(SquareRootMeasure::semicircle().edge_ratio_deviation() < 0.05);
    }
}
