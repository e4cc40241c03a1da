//! Property checks along solved characteristics: the imaginary-part
//! estimates, the gap growth of the real part, the square-root growth law
//! and the integrating factor.

use super::{Characteristic, MkvError, MkvSolution};
use num_complex::Complex64;
use std::f64::consts::PI;

// Pair scans subsample long characteristics to this many points.
const MAX_SCAN_POINTS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ImEstimateReport {
    /// Smallest constant for each of the four inequalities.
    pub c: [f64; 4],
    pub max_c: f64,
    pub pairs: usize,
    /// Set when some constant exceeds 10.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GapReport {
    /// Largest C with √κ_s ≥ √κ_t + C(t − s) over all scanned pairs.
    pub best_c: f64,
    pub pairs: usize,
    /// Pairs where κ_s ≤ 0 although κ_t > 0.
    pub violations: usize,
}

/// Only samples with |z_t − E_t| ≤ `max_distance` enter the scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtGrowthWindow {
    pub max_distance: f64,
}

impl Default for SqrtGrowthWindow {
    fn default() -> Self {
        Self { max_distance: 0.5 }
    }
}

/// Compares over [t_end − span, t_end] of the characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratingFactorWindow {
    pub span: f64,
}

fn scan_indices(len: usize) -> Vec<usize> {
    if len <= MAX_SCAN_POINTS {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..MAX_SCAN_POINTS).map(|k| k * (len - 1) / (MAX_SCAN_POINTS - 1)).collect();
    v.dedup();
    v
}

impl MkvSolution {
    /// Edge position and amplitude at any time in the window: cubic Hermite
    /// through the recorded path using the edge velocity −m̂(E) − V′(E)/2,
    /// linear in the amplitude.
    pub fn edge_interp(&self, t: f64) -> Result<(f64, f64), MkvError> {
        let path = &self.edge_path;
        let first = path.first().ok_or(MkvError::OutOfWindow(t))?;
        let last = path.last().unwrap();
        if t < first.t - 1e-12 || t > last.t + 1e-12 {
            return Err(MkvError::OutOfWindow(t));
        }
        let j = path.partition_point(|p| p.t <= t).clamp(1, path.len().max(2) - 1);
        if path.len() == 1 {
            return Ok((first.edge, first.amplitude));
        }
        let (a, b) = (&path[j - 1], &path[j]);
        let h = b.t - a.t;
        let s = ((t - a.t) / h).clamp(0.0, 1.0);
        let vel = |p: &super::EdgePoint| -p.mhat_edge - self.derivs.at(1, p.edge) / 2.0;
        let (h00, h10, h01, h11) = (
            2.0 * s.powi(3) - 3.0 * s * s + 1.0,
            s.powi(3) - 2.0 * s * s + s,
            -2.0 * s.powi(3) + 3.0 * s * s,
            s.powi(3) - s * s,
        );
        let e = h00 * a.edge + h10 * h * vel(a) + h01 * b.edge + h11 * h * vel(b);
        let c = a.amplitude + s * (b.amplitude - a.amplitude);
        Ok((e, c))
    }

    /// Left support end at any time in the window, linear between records.
    pub fn left_edge_interp(&self, t: f64) -> Result<f64, MkvError> {
        let path = &self.edge_path;
        let first = path.first().ok_or(MkvError::OutOfWindow(t))?;
        if path.len() == 1 || t <= first.t {
            return if (t - first.t).abs() < 1e-12 { Ok(first.left_edge) } else { Err(MkvError::OutOfWindow(t)) };
        }
        let last = path.last().unwrap();
        if t > last.t + 1e-12 {
            return Err(MkvError::OutOfWindow(t));
        }
        let j = path.partition_point(|p| p.t <= t).clamp(1, path.len() - 1);
        let (a, b) = (&path[j - 1], &path[j]);
        let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        Ok(a.left_edge + s * (b.left_edge - a.left_edge))
    }
}

/// Smallest constants making the four imaginary-part inequalities hold at
/// every sampled pair s < t:
///
/// * e^{−CΔ} Im z_t ≤ Im z_s
/// * e^{−CΔ} Im m̂_t ≤ Im m̂_s ≤ e^{CΔ} Im m̂_t
/// * e^{−CΔ}(Im z_t + Δ Im m̂_t) ≤ Im z_s ≤ e^{CΔ}(Im z_t + Δ Im m̂_t)
/// * e^{−CΔ}(Im z_t Im m̂_t + Δ (Im m̂_t)²) ≤ Im z_s Im m̂_s
///
/// with Δ = t − s.
pub fn check_im_estimates(c: &Characteristic) -> ImEstimateReport {
    let idx = scan_indices(c.samples.len());
    let mut best = [0.0f64; 4];
    let mut pairs = 0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let (s, t) = (&c.samples[i], &c.samples[j]);
            let d = t.t - s.t;
            if d <= 0.0 {
                continue;
            }
            pairs += 1;
            let (zs, zt, ms, mt) = (s.z.im, t.z.im, s.mhat.im, t.mhat.im);
            let need = [
                -(zs / zt).ln() / d,
                (ms / mt).ln().abs() / d,
                (zs / (zt + d * mt)).ln().abs() / d,
                -((zs * ms) / (zt * mt + d * mt * mt)).ln() / d,
            ];
            for (b, n) in best.iter_mut().zip(need) {
                *b = b.max(if n.is_nan() { f64::INFINITY } else { n });
            }
        }
    }
    let max_c = best.iter().copied().fold(0.0, f64::max);
    ImEstimateReport { c: best, max_c, pairs, flagged: max_c > 10.0 }
}

/// Largest C with √κ_s ≥ √κ_t + C(t − s) along the characteristic, where
/// κ = Re z − E.
pub fn check_gap_growth(sol: &MkvSolution, c: &Characteristic) -> Result<GapReport, MkvError> {
    let kappa: Vec<(f64, f64)> =
        c.samples.iter().map(|s| sol.edge_interp(s.t).map(|(e, _)| (s.t, s.z.re - e))).collect::<Result<_, _>>()?;
    let last = kappa.last().ok_or_else(|| MkvError::NotApplicable("empty characteristic".into()))?;
    if last.1 <= 0.0 {
        return Err(MkvError::NotApplicable(format!("terminal kappa {} is not positive", last.1)));
    }
    let idx = scan_indices(kappa.len());
    let mut best = f64::INFINITY;
    let (mut pairs, mut violations) = (0, 0);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let ((s, ks), (t, kt)) = (kappa[i], kappa[j]);
            if kt <= 0.0 || t <= s {
                continue;
            }
            pairs += 1;
            if ks <= 0.0 {
                violations += 1;
                continue;
            }
            best = best.min((ks.sqrt() - kt.sqrt()) / (t - s));
        }
    }
    Ok(GapReport { best_c: best, pairs, violations })
}

/// Max over sampled s < t of |2√w_t − 2√w_s + π∫_s^t C_q dq| divided by
/// (t − s)² + (t − s)√|w_t|, with w = z − E.
pub fn check_sqrt_growth(sol: &MkvSolution, c: &Characteristic, window: SqrtGrowthWindow) -> Result<f64, MkvError> {
    let mut pts = Vec::with_capacity(c.samples.len());
    for s in &c.samples {
        let (e, amp) = sol.edge_interp(s.t)?;
        pts.push((s.t, s.z - e, amp));
    }
    // Running trapezoid integral of C_q over all samples.
    let mut cum = vec![0.0; pts.len()];
    for k in 1..pts.len() {
        cum[k] = cum[k - 1] + 0.5 * (pts[k].2 + pts[k - 1].2) * (pts[k].0 - pts[k - 1].0);
    }
    let inside: Vec<usize> = (0..pts.len()).filter(|&k| pts[k].1.norm() <= window.max_distance).collect();
    if inside.len() < 2 {
        return Err(MkvError::NotApplicable("fewer than two samples inside the window".into()));
    }
    let idx: Vec<usize> = scan_indices(inside.len()).into_iter().map(|k| inside[k]).collect();
    let mut worst: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = pts[j].0 - pts[i].0;
            if d <= 0.0 {
                continue;
            }
            let res = (2.0 * pts[j].1.sqrt() - 2.0 * pts[i].1.sqrt() + PI * (cum[j] - cum[i])).norm();
            worst = worst.max(res / (d * d + d * pts[j].1.norm().sqrt()));
        }
    }
    Ok(worst)
}

/// |exp∫_s^t ∂_z m̂_q(z_q) dq − √w_s/√w_t| / |√w_s/√w_t| with t the last
/// sample and s = t − span, where ∂_z m̂ comes from the variational tangent.
pub fn check_integrating_factor(
    sol: &MkvSolution,
    c: &Characteristic,
    window: IntegratingFactorWindow,
) -> Result<f64, MkvError> {
    let last = c.last();
    let s_time = last.t - window.span;
    if window.span < 0.0 || s_time < c.samples[0].t - 1e-12 {
        return Err(MkvError::NotApplicable(format!("span {} exceeds the characteristic", window.span)));
    }
    let i0 = c.samples.partition_point(|s| s.t < s_time - 1e-12);
    let seg = &c.samples[i0..];
    let mut integral = Complex64::new(0.0, 0.0);
    for w in seg.windows(2) {
        integral += 0.5 * (w[0].mhat_z() + w[1].mhat_z()) * (w[1].t - w[0].t);
    }
    let ws = seg[0].z - sol.edge_interp(seg[0].t)?.0;
    let wt = last.z - sol.edge_interp(last.t)?.0;
    let ratio = ws.sqrt() / wt.sqrt();
    Ok((integral.exp() - ratio).norm() / ratio.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mkv::evolve;
    use crate::model::{Potential, SquareRootMeasure};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn stationary_probes_satisfy_im_estimates() {
        let probes = [c(1.8, 0.1), c(2.2, 0.05), c(0.0, 0.5)];
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::quadratic(), &probes, 0.2, 1e-3).unwrap();
        for ch in &sol.probe_chars {
            let r = check_im_estimates(ch);
            assert!(r.pairs > 0 && !r.flagged, "{r:?}");
            // With V = x²/2 the rates are V″/2 = 1/2 at most.
            assert!(r.max_c <= 0.5 + 1e-6, "{r:?}");
        }
    }

    #[test]
    fn free_characteristic_right_of_edge_recedes() {
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::zero(), &[], 0.1, 1e-3).unwrap();
        let (e, _) = sol.edge_interp(0.1).unwrap();
        let u = sol.shoot(0.1, c(e + 0.05, 0.01), None).unwrap();
        let ch = sol.trace(u, sol.times.len() - 1, false).unwrap();
        let r = check_gap_growth(&sol, &ch).unwrap();
        assert!(r.violations == 0 && r.best_c > 0.0, "{r:?}");
        let inside = sol.shoot(0.1, c(e - 0.05, 0.01), None).unwrap();
        let ch = sol.trace(inside, sol.times.len() - 1, false).unwrap();
        assert!(matches!(check_gap_growth(&sol, &ch), Err(MkvError::NotApplicable(_))));
    }

    #[test]
    fn sqrt_growth_and_integrating_factor_near_edge() {
        let probes = [c(2.05, 0.05), c(2.005, 0.005)];
        let sol = evolve(&SquareRootMeasure::semicircle(), &Potential::quadratic(), &probes, 0.1, 1e-3).unwrap();
        let g = check_sqrt_growth(&sol, &sol.probe_chars[0], SqrtGrowthWindow::default()).unwrap();
        assert!(g.is_finite() && g < 10.0, "{g}");
        // The factor matches the square-root ratio up to a relative error
        // that shrinks with the span.
        let r: Vec<f64> = [0.05, 0.02, 0.005]
            .iter()
            .map(|&span| check_integrating_factor(&sol, &sol.probe_chars[1], IntegratingFactorWindow { span }).unwrap())
            .collect();
        assert!(r[0] < 0.05 && r[1] < r[0] && r[2] < r[1], "{r:?}");
        assert!(check_integrating_factor(&sol, &sol.probe_chars[0], IntegratingFactorWindow { span: 1.0 }).is_err());
    }
}
