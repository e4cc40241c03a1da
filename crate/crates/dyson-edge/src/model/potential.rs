use super::ModelError;
use num_complex::Complex64;

/// Polynomial confining potential V(x) = Σ c_k x^k.
///
/// `radius` bounds the region where the potential is used (characteristics,
/// contours, kernel evaluations).
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    coeffs: Vec<f64>,
    radius: f64,
}

pub const DEFAULT_RADIUS: f64 = 10.0;

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn horner_c(c: &[f64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * z + a)
}

fn differentiate(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter().enumerate().skip(1).map(|(k, &a)| k as f64 * a).collect()
}

impl Potential {
    pub fn new(coeffs: Vec<f64>, radius: f64) -> Result<Self, ModelError> {
        if coeffs.is_empty() {
            return Err(ModelError::InvalidPotential("empty coefficient list".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidPotential("non-finite coefficient".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ModelError::InvalidPotential(format!("radius must be positive, got {radius}")));
        }
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Ok(Self { coeffs, radius })
    }

    /// V(x) = x²/2.
    pub fn quadratic() -> Self {
        Self::new(vec![0.0, 0.0, 0.5], DEFAULT_RADIUS).unwrap()
    }

    /// V(x) = x²/2 + g x⁴.
    pub fn quartic(g: f64) -> Self {
        Self::new(vec![0.0, 0.0, 0.5, 0.0, g], DEFAULT_RADIUS).unwrap()
    }

    /// V ≡ 0 (free transport).
    pub fn zero() -> Self {
        Self::new(vec![0.0], DEFAULT_RADIUS).unwrap()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficients of the k-th derivative.
    pub fn derivative_coeffs(&self, k: usize) -> Vec<f64> {
        let mut c = self.coeffs.clone();
        for _ in 0..k {
            c = differentiate(&c);
        }
        c
    }

    pub fn deriv(&self, k: usize, x: f64) -> f64 {
        horner(&self.derivative_coeffs(k), x)
    }

    pub fn deriv_c(&self, k: usize, z: Complex64) -> Complex64 {
        horner_c(&self.derivative_coeffs(k), z)
    }

    pub fn value(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }

    /// Precomputed derivative tables for hot loops.
    pub fn derivatives(&self, upto: usize) -> Derivatives {
        Derivatives { table: (0..=upto).map(|k| self.derivative_coeffs(k)).collect() }
    }

    /// Interaction kernel g(z, x) = [V′(x) − V′(z) − (x − z)V″(z)] / (2(x − z)²).
    ///
    /// Close to the diagonal the Taylor form Σ_{n≥2} V^{(n+1)}(z)(x − z)^{n−2}/(2 n!)
    /// is used; for a polynomial it is exact.
    pub fn g_kernel(&self, z: Complex64, x: Complex64) -> Result<Complex64, ModelError> {
        for p in [z, x] {
            if p.norm() > self.radius {
                return Err(ModelError::OutOfRadius { point: p, radius: self.radius });
            }
        }
        Ok(self.g_kernel_unchecked(z, x, 1e-4 * self.radius))
    }

    pub fn g_kernel_unchecked(&self, z: Complex64, x: Complex64, switch: f64) -> Complex64 {
        let h = x - z;
        if h.norm() >= switch {
            let num = self.deriv_c(1, x) - self.deriv_c(1, z) - h * self.deriv_c(2, z);
            return num / (2.0 * h * h);
        }
        let mut sum = Complex64::new(0.0, 0.0);
        let mut hp = Complex64::new(1.0, 0.0);
        let mut fact = 2.0;
        for n in 2..=self.degree().max(2) {
            if n > 2 {
                fact *= n as f64;
                hp *= h;
            }
            sum += self.deriv_c(n + 1, z) * hp / (2.0 * fact);
        }
        sum
    }

    /// Coefficients of ∫ g(z, x) dρ(x) as a polynomial in z, given the
    /// moments M_q = ∫ x^q dρ. Returns p with G(z) = Σ_j p_j z^j.
    ///
    /// With V′(x) = Σ a_k x^k one has
    /// g(z, x) = ½ Σ_k a_k Σ_{j=0}^{k−2} (j + 1) z^j x^{k−2−j}.
    pub fn g_term_poly(&self, moments: &[Complex64]) -> Vec<Complex64> {
        let a = self.derivative_coeffs(1);
        let mut p = vec![Complex64::new(0.0, 0.0); a.len().saturating_sub(2).max(1)];
        for (k, &ak) in a.iter().enumerate().skip(2) {
            if ak == 0.0 {
                continue;
            }
            for j in 0..=(k - 2) {
                p[j] += 0.5 * ak * (j + 1) as f64 * moments[k - 2 - j];
            }
        }
        p
    }

    /// Number of moments M_0..M_{q-1} that `g_term_poly` reads.
    pub fn g_moment_count(&self) -> usize {
        self.coeffs.len().saturating_sub(3).max(1)
    }

    /// Taylor coefficients of V^{(k)} about `center`.
    pub fn taylor_about(&self, k: usize, center: f64, order: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(order + 1);
        let mut fact = 1.0;
        for i in 0..=order {
            if i > 0 {
                fact *= i as f64;
            }
            out.push(self.deriv(k + i, center) / fact);
        }
        out
    }
}

/// Cached derivative coefficient tables.
#[derive(Debug, Clone)]
pub struct Derivatives {
    table: Vec<Vec<f64>>,
}

impl Derivatives {
    #[inline]
    pub fn at(&self, k: usize, x: f64) -> f64 {
        self.table.get(k).map_or(0.0, |c| horner(c, x))
    }

    #[inline]
    pub fn at_c(&self, k: usize, z: Complex64) -> Complex64 {
        self.table.get(k).map_or(Complex64::new(0.0, 0.0), |c| horner_c(c, z))
    }
}

/// Evaluates Σ p_j z^j.
pub fn poly_c(p: &[Complex64], z: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * z + a)
}

/// Evaluates Σ j p_j z^{j-1}.
pub fn poly_c_deriv(p: &[Complex64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &a) in p.iter().enumerate().skip(1).rev() {
        acc = acc * z + a * j as f64;
    }
    acc
}
