//! Shared domain types: potentials, particle configurations, square-root
//! measures and their Stieltjes transforms.

mod measure;
mod potential;

pub use measure::{m_kesten_mckay, m_semicircle, sqrt_cut, MeasureKind, SquareRootMeasure, DEFAULT_MASS_TOL};
pub use potential::{poly_c, poly_c_deriv, Derivatives, Potential, DEFAULT_RADIUS};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("point {point} outside the potential radius {radius}")]
    OutOfRadius { point: Complex64, radius: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("point {0} lies on the support")]
    PointOnSupport(Complex64),
    #[error("point {0} coincides with a particle")]
    PointOnParticle(Complex64),
    #[error("invalid particle state: {0}")]
    InvalidState(String),
}

/// Ordered configuration λ_1 > λ_2 > … > λ_N at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    pub beta: f64,
    pub particles: Vec<f64>,
}

impl ParticleState {
    /// Validates strict descending order and β ≥ 1.
    pub fn new(t: f64, beta: f64, particles: Vec<f64>) -> Result<Self, ModelError> {
        if particles.is_empty() {
            return Err(ModelError::InvalidState("no particles".into()));
        }
        if !(beta >= 1.0) {
            return Err(ModelError::InvalidState(format!("beta must be >= 1, got {beta}")));
        }
        if let Some(i) = particles.iter().position(|x| !x.is_finite()) {
            return Err(ModelError::InvalidState(format!("particle {} is not finite", i + 1)));
        }
        if let Some(i) = particles.windows(2).position(|w| w[0] <= w[1]) {
            return Err(ModelError::InvalidState(format!(
                "particles {} and {} are not strictly descending",
                i + 1,
                i + 2
            )));
        }
        Ok(Self { t, beta, particles })
    }

    /// Sorts arbitrary positions into descending order first.
    pub fn from_unsorted(t: f64, beta: f64, mut particles: Vec<f64>) -> Result<Self, ModelError> {
        particles.sort_by(|a, b| b.total_cmp(a));
        Self::new(t, beta, particles)
    }

    pub fn n(&self) -> usize {
        self.particles.len()
    }

    pub fn is_sorted(&self) -> bool {
        self.particles.windows(2).all(|w| w[0] > w[1])
    }

    /// m(z) = (1/N) Σ 1/(λ_i − z).
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64, ModelError> {
        stieltjes_of_particles(&self.particles, z)
    }
}

/// (1/N) Σ 1/(λ_i − z), summed in index order.
pub fn stieltjes_of_particles(particles: &[f64], z: Complex64) -> Result<Complex64, ModelError> {
    let tol = 4.0 * f64::EPSILON * z.norm().max(1.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for &l in particles {
        let d = Complex64::new(l, 0.0) - z;
        if d.norm() < tol {
            return Err(ModelError::PointOnParticle(z));
        }
        acc += d.inv();
    }
    Ok(acc / particles.len() as f64)
}

/// A point of ℂ⁺ in coordinates relative to an edge E.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesPoint {
    pub z: Complex64,
    pub kappa: f64,
    pub eta: f64,
}

impl StieltjesPoint {
    pub fn new(z: Complex64, edge: f64) -> Result<Self, ModelError> {
        if !(z.im > 0.0) {
            return Err(ModelError::InvalidState(format!("{z} is not in the upper half plane")));
        }
        Ok(Self { z, kappa: z.re - edge, eta: z.im })
    }

    pub fn from_edge(edge: f64, kappa: f64, eta: f64) -> Result<Self, ModelError> {
        Self::new(Complex64::new(edge + kappa, eta), edge)
    }

    /// Rescaled coordinate w = (z − E)/η_0 for a mesoscopic scale η_0.
    pub fn rescaled(&self, scale: f64) -> Complex64 {
        Complex64::new(self.kappa, self.eta) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn particle_stieltjes_examples() {
        let s = ParticleState::new(0.0, 2.0, vec![1.0, -1.0]).unwrap();
        let m = s.stieltjes(Complex64::new(0.0, 1.0)).unwrap();
        assert!((m - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        let one = ParticleState::new(0.0, 2.0, vec![0.0]).unwrap();
        let m = one.stieltjes(Complex64::new(2.0, 0.0)).unwrap();
        assert!((m - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
        assert!(matches!(one.stieltjes(Complex64::new(0.0, 0.0)), Err(ModelError::PointOnParticle(_))));
    }

    #[test]
    fn state_validation() {
        assert!(ParticleState::new(0.0, 2.0, vec![1.0, 1.0]).is_err());
        assert!(ParticleState::new(0.0, 0.5, vec![1.0, 0.0]).is_err());
        let s = ParticleState::from_unsorted(0.0, 1.0, vec![-1.0, 3.0, 0.5]).unwrap();
        assert_eq!(s.particles, vec![3.0, 0.5, -1.0]);
    }

    #[test]
    fn edge_relative_point() {
        let p = StieltjesPoint::from_edge(2.0, -0.1, 0.05).unwrap();
        assert!((p.z.re - 1.9).abs() < 1e-15);
        assert_eq!(p.kappa + 2.0, p.z.re);
        let w = p.rescaled(0.05);
        assert!((w - Complex64::new(-2.0, 1.0)).norm() < 1e-12);
    }
}
