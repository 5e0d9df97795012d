//! Property tests for classification, tilting and serialization invariants.

use proptest::prelude::*;
use recvisit::dataset::{parse_dataset, ParseOptions};
use recvisit::numerics::{trapezoid_integral, uniform_grid};
use recvisit::outcome::TrajectoryGrid;
use recvisit::sensitivity::{GridCell, SensitivityGrid};
use recvisit::simulator::{simulate, ScenarioSpec};
use recvisit::tilt::{q_value, tilted_intensity, NormalizerFit, NormalizerModels, TiltConfig};
use recvisit::windows::{
    category_boundaries, classify_gap, decompose_risk, VisitCategory, WindowPolicy,
};

proptest! {
    #[test]
    fn decomposition_partitions_the_gap(g in 0.01f64..60.0, r in 0.1f64..24.0) {
        let policy = WindowPolicy::default();
        let dec = decompose_risk(g, Some(r), false, &policy).unwrap();
        prop_assert!(dec.valid);
        prop_assert!((dec.total() - g).abs() <= 1e-12 * g.max(1.0));
        let c = classify_gap(g, r, &policy).unwrap();
        prop_assert_eq!(dec.event_category, Some(c));
        let window = category_boundaries(r, &policy).unwrap().get(c).unwrap();
        prop_assert!(window.contains(g));
        // no time at risk in categories after the one where the visit landed
        for later in VisitCategory::ALL.iter().filter(|k| k.index() > c.index()) {
            prop_assert!(dec.duration(*later).is_none());
        }
        for d in dec.durations.iter().flatten() {
            prop_assert!(*d > 0.0);
        }
    }

    #[test]
    fn censored_gaps_have_no_event(g in 0.01f64..60.0, r in 0.1f64..24.0) {
        let dec = decompose_risk(g, Some(r), true, &WindowPolicy::default()).unwrap();
        prop_assert_eq!(dec.event_category, None);
        prop_assert!((dec.total() - g).abs() <= 1e-12 * g.max(1.0));
    }

    #[test]
    fn categories_are_ordered_in_gap_time(r in 0.1f64..24.0, a in 0.01f64..60.0, b in 0.01f64..60.0) {
        let policy = WindowPolicy::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_gap(lo, r, &policy).unwrap().index() <= classify_gap(hi, r, &policy).unwrap().index());
    }

    #[test]
    fn q_is_a_monotone_probability(d1 in -5.0f64..20.0, d2 in -5.0f64..20.0) {
        let cfg = TiltConfig::default();
        let (q1, q2) = (q_value(d1, &cfg), q_value(d2, &cfg));
        prop_assert!((0.0..=1.0).contains(&q1));
        if d1 <= d2 {
            prop_assert!(q1 <= q2);
        }
    }

    #[test]
    fn in_window_rates_ignore_the_tilt(rate in 0.01f64..5.0, d in 0.0f64..12.0, r in 1.0f64..12.0,
                                       ae in 0.0f64..7.0, al in 0.0f64..7.0) {
        let cfg = TiltConfig::new(ae, al);
        let norms = NormalizerModels::unit(&cfg);
        let t = tilted_intensity(rate, VisitCategory::InWindow, Some(d), r, &norms, &cfg).unwrap();
        prop_assert_eq!(t, Some(rate));
        let t = tilted_intensity(rate, VisitCategory::InWindow, None, r, &norms, &cfg).unwrap();
        prop_assert_eq!(t, Some(rate));
    }

    #[test]
    fn tilt_only_touches_its_own_side(rate in 0.01f64..5.0, d in 0.0f64..12.0, r in 1.0f64..12.0,
                                      ae in 0.0f64..7.0, al in 0.0f64..7.0) {
        let base = TiltConfig::new(0.0, 0.0);
        let unit = NormalizerModels::unit(&base);
        let early_only = TiltConfig::new(ae, 0.0);
        let late_only = TiltConfig::new(0.0, al);
        for c in [VisitCategory::Late, VisitCategory::VeryLate] {
            let a = tilted_intensity(rate, c, Some(d), r, &unit, &early_only).unwrap();
            prop_assert_eq!(a, Some(rate));
        }
        for c in [VisitCategory::VeryEarly, VisitCategory::Early] {
            let a = tilted_intensity(rate, c, Some(d), r, &unit, &late_only).unwrap();
            prop_assert_eq!(a, Some(rate));
        }
    }

    #[test]
    fn tilted_rate_increases_with_alpha_for_a_frozen_normalizer(rate in 0.01f64..5.0, d in 0.0f64..12.0,
                                                                 a1 in 0.0f64..7.0, a2 in 0.0f64..7.0) {
        let frozen = NormalizerModels { early: NormalizerFit::unit(0.0), late: NormalizerFit::unit(0.0) };
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let f = |a: f64| {
            let cfg = TiltConfig::new(a, a);
            tilted_intensity(rate, VisitCategory::VeryEarly, Some(d), 6.0, &frozen, &cfg).unwrap().unwrap()
        };
        prop_assert!(f(lo) <= f(hi));
    }

    #[test]
    fn heatmap_round_trips(aucs in proptest::collection::vec(prop_oneof![
        (-1e3f64..1e3).prop_map(Ok),
        "[a-z ]{1,12}".prop_map(Err),
    ], 6)) {
        let axis_e = vec![0.0, 0.5, 1.0];
        let axis_l = vec![0.0, 3.5];
        let mut cells = Vec::new();
        for (k, auc) in aucs.into_iter().enumerate() {
            cells.push(GridCell { alpha_e: axis_e[k / 2], alpha_l: axis_l[k % 2], auc, trajectory: None });
        }
        let grid = SensitivityGrid { alpha_e: axis_e, alpha_l: axis_l, cells };
        let back = SensitivityGrid::from_heatmap_csv(&grid.to_heatmap_csv()).unwrap();
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn trapezoid_is_exact_for_lines(a in -10.0f64..10.0, b in -3.0f64..3.0, end in 0.5f64..10.0) {
        let t = uniform_grid(0.0, end, end / 50.0).unwrap();
        let y: Vec<f64> = t.iter().map(|x| a + b * x).collect();
        let area = TrajectoryGrid { time: t.clone(), mean: y.clone() }.auc().unwrap();
        let want = a * end + 0.5 * b * end * end;
        prop_assert!((area - want).abs() < 1e-9 * (1.0 + want.abs()));
        prop_assert!((trapezoid_integral(&y, t[1] - t[0]).unwrap() - area).abs() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulated_cohorts_survive_a_csv_round_trip(seed in 0u64..1000) {
        let spec = ScenarioSpec { n_patients: 20, seed, truth_draws: 100, ..ScenarioSpec::default() };
        let sim = simulate(&spec, 1).unwrap();
        let opts = ParseOptions { gap_rel_tol: Some(1e-9), ..ParseOptions::default() };
        let back = parse_dataset(&sim.dataset.to_csv(), &opts).unwrap();
        prop_assert_eq!(back, sim.dataset);
    }
}
