//! End-to-end checks of the estimation pipeline on constructed and simulated data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use recvisit::dataset::{Dataset, ParseOptions, VisitRecord};
use recvisit::diagnostics::mad_explained_from;
use recvisit::intensity::{
    arrival_gaps, build_risk_table, compute_weights, fit_intensity_models, IntensityOptions,
};
use recvisit::numerics::median;
use recvisit::outcome::{fit_outcome, trajectory_auc, OutcomeOptions, Weighting};
use recvisit::sensitivity::{run_grid, GridContext, GridSpec};
use recvisit::simulator::{simulate, GapLaw, ScenarioSpec};
use recvisit::tilt::{compute_tilted_weights, NormalizerBuilder, NormalizerRows, TiltConfig};
use recvisit::windows::{VisitCategory, WindowPolicy};

fn record(id: usize, t_months: f64, das: f64, gap: Option<f64>, r: f64) -> VisitRecord {
    VisitRecord {
        patient_id: format!("{id}"),
        calendar_date: None,
        time_since_dx: t_months / 12.0,
        das: Some(das),
        gap,
        censored: false,
        rec_interval: Some(r),
        line: 0,
    }
}

/// Gap drawn from piecewise-constant category rates for recommended interval 6.
fn piecewise_gap(rng: &mut ChaCha8Rng, rates: [f64; 5]) -> f64 {
    let cuts = [0.0, 5.0, 5.5, 9.0, 12.0, f64::INFINITY];
    for k in 0..5 {
        let e = Exp::new(rates[k]).unwrap().sample(rng);
        if cuts[k] + e < cuts[k + 1] {
            return cuts[k] + e;
        }
    }
    unreachable!()
}

#[test]
fn intensity_models_recover_piecewise_rates() {
    let rates = [0.2f64.exp() / 60.0, 0.4, 0.2f64.exp(), 0.5, 0.8];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut records = Vec::new();
    for p in 0..100 {
        let mut t = 0.0;
        for _ in 0..50 {
            let g = piecewise_gap(&mut rng, rates);
            records.push(record(
                p,
                t,
                f64::from(rng.random_range(0..12u8)),
                Some(g),
                6.0,
            ));
            t += g;
        }
        records.push(record(p, t, 3.0, None, 6.0));
    }
    let opts = ParseOptions {
        gap_rel_tol: Some(1e-9),
        ..ParseOptions::default()
    };
    let ds = Dataset::from_records(records, &opts).unwrap();
    let rows = build_risk_table(&ds, &WindowPolicy::default()).unwrap();
    assert_eq!(rows.len(), 5000);
    let set = fit_intensity_models(&rows, &IntensityOptions::default());
    set.ensure_complete().unwrap();
    for c in VisitCategory::ALL {
        let m = set.model(c).unwrap();
        let fitted = m.rate(6.0);
        // a single R value leaves only the intercept, whose MLE is events / exposure
        let mle = m.n_events as f64 / m.total_exposure;
        assert!((fitted - mle).abs() < 1e-9 * mle, "{c}: {fitted} vs {mle}");
        let tol = 4.0 / (m.n_events as f64).sqrt();
        assert!(
            (fitted / rates[c.index()] - 1.0).abs() < tol,
            "{c}: {fitted} vs {}",
            rates[c.index()]
        );
    }
    let in_window = set.model(VisitCategory::InWindow).unwrap();
    assert!((in_window.fit.coefficients[0] - 0.2).abs() < 0.05);
}

#[test]
fn normalizer_reduces_to_group_means_of_the_tilt() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut records = Vec::new();
    let levels = [2.0, 4.0, 6.0];
    for p in 0..200 {
        let mut t = 0.0;
        for _ in 0..10 {
            let r = levels[rng.random_range(0..3)];
            let g = r * rng.random_range(0.7..1.3);
            records.push(record(
                p,
                t,
                f64::from(rng.random_range(0..12u8)),
                Some(g),
                r,
            ));
            t += g;
        }
        records.push(record(p, t, 3.0, None, 2.0));
    }
    let opts = ParseOptions {
        gap_rel_tol: Some(1e-9),
        ..ParseOptions::default()
    };
    let ds = Dataset::from_records(records, &opts).unwrap();
    let cfg = TiltConfig::default();
    let builder =
        NormalizerBuilder::new(&ds, &WindowPolicy::default(), NormalizerRows::All, &cfg, 3)
            .unwrap();
    for alpha in [0.5, 2.0, 6.0] {
        let fit = builder.fit(alpha).unwrap();
        let mut overall = Vec::new();
        for level in levels {
            let ys: Vec<f64> = builder
                .r
                .iter()
                .zip(&builder.q)
                .filter(|(r, _)| **r == level)
                .map(|(_, q)| (-alpha * q).exp())
                .collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            assert!((fit.value(level).unwrap() - mean).abs() < 1e-12);
            overall.extend(ys);
        }
        // D does not depend on R here, so the curve is flat up to sampling noise
        let pooled = overall.iter().sum::<f64>() / overall.len() as f64;
        for level in levels {
            assert!((fit.value(level).unwrap() / pooled - 1.0).abs() < 0.1);
        }
    }
}

/// MAD-explained with medians taken explicitly and the median regression
/// found by enumerating every line through two points.
fn brute_force_fraction(s: &[f64], r: &[f64]) -> f64 {
    let med = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let m = med(s);
    let unadjusted = med(&s.iter().map(|x| (x - m).abs()).collect::<Vec<_>>());
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            if r[i] == r[j] {
                continue;
            }
            let b = (s[j] - s[i]) / (r[j] - r[i]);
            let a = s[i] - b * r[i];
            let loss: f64 = s.iter().zip(r).map(|(y, x)| (y - a - b * x).abs()).sum();
            if loss < best.0 {
                best = (loss, a, b);
            }
        }
    }
    let adjusted = med(&s
        .iter()
        .zip(r)
        .map(|(y, x)| (y - best.1 - best.2 * x).abs())
        .collect::<Vec<_>>());
    1.0 - adjusted / unadjusted
}

#[test]
fn mad_explained_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in [7usize, 12, 19, 25] {
        let r: Vec<f64> = (0..n)
            .map(|_| [1.0, 2.0, 3.0, 6.0][rng.random_range(0..4)])
            .collect();
        let s: Vec<f64> = r
            .iter()
            .map(|x| x * (1.0 + rng.random_range(-0.3..0.3)))
            .collect();
        let got = mad_explained_from(&s, &r).unwrap();
        let want = brute_force_fraction(&s, &r);
        assert!(
            (got.fraction.unwrap() - want).abs() < 1e-12,
            "n={n}: {:?} vs {want}",
            got.fraction
        );
        assert_eq!(got.unadjusted, {
            let m = median(&s).unwrap();
            median(&s.iter().map(|x| (x - m).abs()).collect::<Vec<_>>()).unwrap()
        });
    }
}

fn small_anar() -> Dataset {
    let spec = ScenarioSpec {
        n_patients: 150,
        truth_draws: 1000,
        ..ScenarioSpec::anar()
    };
    simulate(&spec, 1).unwrap().dataset
}

#[test]
fn grid_matches_a_cell_by_cell_reference() {
    let ds = small_anar();
    let policy = WindowPolicy::default();
    let rows = build_risk_table(&ds, &policy).unwrap();
    let set = fit_intensity_models(&rows, &IntensityOptions::default());
    set.ensure_complete().unwrap();
    let gaps = arrival_gaps(&ds, &set, &policy).unwrap();
    let cfg = TiltConfig::default();
    let builder = NormalizerBuilder::new(&ds, &policy, NormalizerRows::All, &cfg, 3).unwrap();
    let ctx = GridContext {
        dataset: &ds,
        gaps: &gaps,
        normalizers: &builder,
        tilt: cfg,
        outcome: OutcomeOptions::default(),
        weights: Default::default(),
        timerange: 7.0,
        increment: 0.007,
    };
    let spec = GridSpec {
        alpha_e: vec![0.0, 1.5, 4.0],
        alpha_l: vec![0.0, 2.0],
    };
    let grid = run_grid(&ctx, &spec, 2, false).unwrap();
    for (i, &ae) in spec.alpha_e.iter().enumerate() {
        for (j, &al) in spec.alpha_l.iter().enumerate() {
            let cell_cfg = TiltConfig::new(ae, al);
            let norms = builder.fit_pair(&cell_cfg).unwrap();
            let w = compute_tilted_weights(&ds, &set, &norms, &cell_cfg, &policy).unwrap();
            let fit = fit_outcome(
                &ds,
                &w,
                Weighting::Anar {
                    alpha_e: ae,
                    alpha_l: al,
                },
                &OutcomeOptions::default(),
            )
            .unwrap();
            let want = trajectory_auc(&fit, 7.0, 0.007).unwrap();
            assert_eq!(grid.auc(i, j), Some(want), "cell ({ae}, {al})");
        }
    }
    let aar = fit_outcome(
        &ds,
        &compute_weights(&ds, &set, &policy).unwrap(),
        Weighting::Aar,
        &OutcomeOptions::default(),
    )
    .unwrap();
    assert_eq!(
        grid.auc(0, 0),
        Some(trajectory_auc(&aar, 7.0, 0.007).unwrap())
    );
}

#[test]
fn no_late_visits_means_no_late_sensitivity() {
    let spec = ScenarioSpec {
        n_patients: 120,
        p_late: 0.0,
        p_very_late: 0.0,
        truth_draws: 1000,
        ..ScenarioSpec::default()
    };
    let ds = simulate(&spec, 1).unwrap().dataset;
    let policy = WindowPolicy::default();
    let rows = build_risk_table(&ds, &policy).unwrap();
    let set = fit_intensity_models(&rows, &IntensityOptions::default());
    let gaps = arrival_gaps(&ds, &set, &policy).unwrap();
    assert!(gaps.iter().all(|g| !g.category.is_late_side()));
    let cfg = TiltConfig::default();
    let builder = NormalizerBuilder::new(&ds, &policy, NormalizerRows::All, &cfg, 3).unwrap();
    let ctx = GridContext {
        dataset: &ds,
        gaps: &gaps,
        normalizers: &builder,
        tilt: cfg,
        outcome: OutcomeOptions::default(),
        weights: Default::default(),
        timerange: 7.0,
        increment: 0.007,
    };
    let grid = run_grid(
        &ctx,
        &GridSpec {
            alpha_e: vec![0.0, 3.0],
            alpha_l: vec![0.0, 2.5, 7.0],
        },
        1,
        false,
    )
    .unwrap();
    for i in 0..2 {
        let first = grid.auc(i, 0).unwrap();
        for j in 1..3 {
            assert_eq!(grid.auc(i, j).unwrap(), first);
        }
    }
}

#[test]
fn zero_tilt_reproduces_aar_weights_on_a_cohort() {
    let ds = small_anar();
    let policy = WindowPolicy::default();
    let rows = build_risk_table(&ds, &policy).unwrap();
    let set = fit_intensity_models(&rows, &IntensityOptions::default());
    let aar = compute_weights(&ds, &set, &policy).unwrap();
    let cfg = TiltConfig::default();
    let builder =
        NormalizerBuilder::new(&ds, &policy, NormalizerRows::OutOfWindow, &cfg, 3).unwrap();
    let norms = builder.fit_pair(&cfg).unwrap();
    let tilted = compute_tilted_weights(&ds, &set, &norms, &cfg, &policy).unwrap();
    assert!(aar.max_relative_difference(&tilted) <= 1e-12);
}

#[test]
fn lognormal_adherence_is_centred_on_the_recommendation() {
    let spec = ScenarioSpec {
        gap_law: GapLaw::Lognormal,
        truth_draws: 1000,
        ..ScenarioSpec::default()
    };
    let ds = simulate(&spec, 1).unwrap().dataset;
    let ratios: Vec<f64> = ds
        .gaps()
        .filter(|g| !g.visit.censored)
        .filter_map(|g| g.visit.rec_interval.map(|r| g.exposure() / r))
        .collect();
    assert!(ratios.len() > 5000);
    let m = median(&ratios).unwrap();
    // standard error of a sample median of log-normal ratios is about 1.25 sd / sqrt(n)
    let tol = 4.0 * 1.25 * spec.adherence_sd / (ratios.len() as f64).sqrt();
    assert!((m.ln()).abs() < tol, "median S/R {m}");
}
