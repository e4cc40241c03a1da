//! Checks of the tridiagonal β-ensemble sampler at N = 2000.

use dyson_edge::model::SquareRootMeasure;
use dyson_edge::seeds::{derive_seed, Purpose};
use dyson_edge::stats;
use dyson_edge::universality::{compare_distributions, oracle_edge_samples, sample_beta_ensemble, sample_top_particle};

const N: usize = 2000;

#[test]
fn density_is_close_to_semicircle() {
    let bins = 80;
    let (lo, hi) = (-2.2, 2.2);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let samples = 20;
    for k in 0..samples {
        let s = sample_beta_ensemble(N, 2.0, derive_seed(3, k, Purpose::Oracle)).unwrap();
        for &x in &s.particles {
            let b = ((x - lo) / width).floor();
            if b >= 0.0 && (b as usize) < bins {
                counts[b as usize] += 1;
            }
        }
    }
    let total = (samples as usize * N) as f64;
    let sc = SquareRootMeasure::semicircle();
    let l1: f64 = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let (a, z) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
            let exact = sc.mass_right_of(a.clamp(-2.0, 2.0)) - sc.mass_right_of(z.clamp(-2.0, 2.0));
            (c as f64 / total - exact).abs()
        })
        .sum();
    assert!(l1 <= 0.05, "L1 distance {l1}");
}

#[test]
fn mean_top_particle() {
    let tops: Vec<f64> =
        (0..200).map(|k| sample_top_particle(N, 2.0, derive_seed(4, k, Purpose::Oracle)).unwrap()).collect();
    let m = stats::mean(&tops);
    assert!((1.95..=2.01).contains(&m), "{m}");
}

#[test]
fn edge_statistic_mean() {
    let s = oracle_edge_samples(N, 2.0, 5, 2000, 1).unwrap();
    let m = stats::mean(&s);
    assert!((m + 1.77).abs() <= 0.05, "{m}");
}

#[test]
fn comparison_self_test() {
    use dyson_edge::seeds::{normals, rng_from_seed};
    let mut below = 0;
    for rep in 0..100 {
        let mut rng = rng_from_seed(derive_seed(6, rep, Purpose::Synthetic));
        let a = normals(&mut rng, 2000);
        let b = normals(&mut rng, 2000);
        let c = compare_distributions(&a, &b);
        if c.ks < c.ks_critical_1pct {
            below += 1;
        }
    }
    assert!(below >= 95, "{below}");
    let mut rng = rng_from_seed(7);
    let b = normals(&mut rng, 2000);
    let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
    assert!(compare_distributions(&a, &b).ks >= 0.2);
}
