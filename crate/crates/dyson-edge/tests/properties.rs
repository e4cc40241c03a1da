//! Randomised invariants across modules.

use dyson_edge::cli::parse_config;
use dyson_edge::dbm::{simulate, DbmConfig};
use dyson_edge::model::{m_semicircle, ParticleState, Potential, SquareRootMeasure};
use dyson_edge::rigidity::{f_of_t, RigidityConfig};
use dyson_edge::seeds::{derive_seed, Purpose};
use dyson_edge::universality::{compare_distributions, interpolate_measure, matched_quartic, transport};
use dyson_edge::Complex64;
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn particle_stieltjes_in_upper_half_plane(
        xs in prop::collection::vec(-3.0..3.0f64, 1..40),
        re in -5.0..5.0f64,
        im in 1e-3..5.0f64,
    ) {
        let state = ParticleState::from_unsorted(0.0, 2.0, xs).unwrap();
        let m = state.stieltjes(Complex64::new(re, im)).unwrap();
        prop_assert!(m.im > 0.0);
    }

    #[test]
    fn semicircle_quadrature_matches_closed_form(re in -4.0..4.0f64, im in 0.05..3.0f64) {
        let z = Complex64::new(re, im);
        let m = SquareRootMeasure::semicircle().stieltjes(z).unwrap();
        prop_assert!((m - m_semicircle(z)).norm() < 1e-6, "{m} vs {}", m_semicircle(z));
    }

    #[test]
    fn seeds_differ_across_streams_and_purposes(master in any::<u64>(), i in 0u64..1_000_000) {
        let a = derive_seed(master, i, Purpose::Trajectory);
        prop_assert_ne!(a, derive_seed(master, i + 1, Purpose::Trajectory));
        prop_assert_ne!(a, derive_seed(master, i, Purpose::InitialData));
        prop_assert_eq!(a, derive_seed(master, i, Purpose::Trajectory));
    }

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        n in 2usize..5000,
        beta in 1.0..8.0f64,
        dt in 1e-6..1e-2f64,
        times in prop::collection::vec(0.0..1.0f64, 1..5),
    ) {
        let t_end = times.iter().copied().fold(0.0, f64::max) + 0.5;
        let list: Vec<String> = times.iter().map(|t| format!("{t:?}")).collect();
        let text = format!(
            "master_seed = {seed}\n[dbm]\nn = {n}\nbeta = {beta:?}\ndt = {dt:?}\nt_end = {t_end:?}\nsample_times = [{}]\n",
            list.join(", ")
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(parse_config(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn ks_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0..5.0f64, 1..60),
        b in prop::collection::vec(-5.0..5.0f64, 1..60),
    ) {
        let (ab, ba) = (compare_distributions(&a, &b), compare_distributions(&b, &a));
        prop_assert_eq!(ab.ks, ba.ks);
        prop_assert!((0.0..=1.0).contains(&ab.ks));
        prop_assert_eq!(compare_distributions(&a, &a).ks, 0.0);
    }

    #[test]
    fn edge_scale_interpolates_under_square_root(
        n in 10usize..100_000,
        slope in 0.05..5.0f64,
        s in 0.0..2.0f64,
        frac in 0.0..1.0f64,
    ) {
        // √f(s) ≤ √f(t) + 𝔠(t − s) for s ≤ t
        let mut cfg = RigidityConfig::for_size(n);
        cfg.frak_c = slope;
        let t = s + frac * (2.0 - s);
        let (fs, ft) = (f_of_t(&cfg, n, s), f_of_t(&cfg, n, t));
        prop_assert!(fs.sqrt() <= ft.sqrt() + slope * (t - s) + 1e-12);
    }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn dbm_is_ordered_and_deterministic(seed in any::<u64>(), beta in 1.0..4.0f64) {
        let init: Vec<f64> = (0..12).map(|i| 2.0 - 4.0 * (i as f64 + 0.5) / 12.0).collect();
        let cfg = DbmConfig::new(12, beta, Potential::quadratic(), 1e-3, 0.05, seed);
        let state = ParticleState::new(0.0, beta, init).unwrap();
        let a = simulate(&cfg, &state, &[0.025, 0.05]).unwrap();
        let b = simulate(&cfg, &state, &[0.025, 0.05]).unwrap();
        for snap in &a.snapshots {
            prop_assert!(snap.is_sorted());
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn interpolated_edge_is_linear(alpha in 0.0..1.0f64, shift in -1.0..1.0f64, radius in 0.5..2.0f64) {
        let a = SquareRootMeasure::scaled_semicircle(shift, radius);
        let b = SquareRootMeasure::semicircle();
        let m = interpolate_measure(&a, &b, alpha).unwrap();
        let e = alpha * a.edge + (1.0 - alpha) * b.edge;
        prop_assert!((m.edge - e).abs() <= 1e-12 * e.abs().max(1.0));
        prop_assert!((m.mass() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn transport_is_monotone(xs in prop::collection::vec(-1.99..1.99f64, 2..30)) {
        let (_, rho) = matched_quartic(0.01).unwrap();
        let mut sorted = xs;
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.dedup();
        let moved = transport(&sorted, &SquareRootMeasure::semicircle(), &rho);
        for w in moved.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }
}
