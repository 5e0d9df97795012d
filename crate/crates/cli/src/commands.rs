//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use recvisit::dataset::{read_dataset, Dataset};
use recvisit::diagnostics::{agreement_bands, diagnostics_report, BandScale};
use recvisit::intensity::{
    arrival_gaps, build_risk_table, compute_weights_with, fit_intensity_models, IntensityModelSet,
    WeightTable,
};
use recvisit::outcome::{fit_outcome_with_drops, predict_trajectory, trajectory_auc, Weighting};
use recvisit::sensitivity::{
    default_d_grid, elicitation_curve, plausible_alpha_range, run_grid, ElicitationNormalizer,
    GridContext,
};
use recvisit::simulator::{simulate, ScenarioSpec};
use recvisit::tilt::NormalizerBuilder;
use recvisit::windows::{decompose_risk, VisitCategory};
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, WeightingMode};
use crate::output::{csv_text, opt, trajectory_csv, RunDir};

/// A failure of the numerical pipeline that did not come from the core library.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Ok,
    PartialGrid,
}

/// Mutable state shared by a command and the caller that finalizes the run.
#[derive(Default)]
pub struct Session {
    pub run_dir: Option<RunDir>,
}

impl Session {
    fn open(&mut self, cfg: &RunConfig) -> Result<&RunDir> {
        let path = cfg
            .out_dir
            .clone()
            .ok_or_else(|| anyhow!("an output directory is required (--out or out_dir)"))?;
        let dir = RunDir::create(&path)?;
        dir.write("config.txt", &cfg.echo())?;
        Ok(self.run_dir.insert(dir))
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| anyhow!("an input file is required (INPUT or input)"))?;
    let ds = read_dataset(input, &cfg.parse_options())
        .with_context(|| format!("reading {}", input.display()))?;
    log::info!(
        "loaded {} patients, {} visits from {}",
        ds.patients.len(),
        ds.n_visits(),
        file_name(input)
    );
    Ok(ds)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(
        || p.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn fit_models(ds: &Dataset, cfg: &RunConfig) -> Result<IntensityModelSet> {
    let rows = build_risk_table(ds, &cfg.policy)?;
    let set = fit_intensity_models(&rows, &cfg.intensity_options());
    for (c, m) in VisitCategory::ALL.iter().zip(&set.models) {
        match m {
            Ok(m) => log::info!(
                "{c} intensity model: {} rows, {} events, exposure {} months",
                m.n_rows,
                m.n_events,
                m.total_exposure
            ),
            Err(e) => log::error!("{c} intensity model failed: {e}"),
        }
    }
    set.ensure_complete()?;
    Ok(set)
}

pub fn validate(cfg: &RunConfig) -> Result<Completion> {
    let ds = load(cfg)?;
    let gaps = ds.gaps().count();
    let censored = ds.gaps().filter(|g| g.visit.censored).count();
    let missing_r = ds.gaps().filter(|g| g.visit.rec_interval.is_none()).count();
    println!(
        "ok: {} patients, {} visits, {} gaps ({} censored, {} without R)",
        ds.patients.len(),
        ds.n_visits(),
        gaps,
        censored,
        missing_r
    );
    Ok(Completion::Ok)
}

pub fn diagnose(cfg: &RunConfig, session: &mut Session) -> Result<Completion> {
    let dir = session.open(cfg)?;
    let ds = load(cfg)?;
    let report = diagnostics_report(&ds, &cfg.policy)?;
    match &report.mad {
        Some(m) => log::info!(
            "MAD unadjusted {} adjusted {} fraction explained {}",
            m.unadjusted,
            m.adjusted,
            opt(m.fraction)
        ),
        None => log::warn!("MAD-explained not available"),
    }
    dir.write_json("diagnostics.json", &report)?;
    let mut rows = Vec::new();
    for scale in [BandScale::Difference, BandScale::Ratio] {
        match agreement_bands(&ds, scale, &cfg.band_options()) {
            Ok(curves) => {
                for c in curves {
                    for (r, v) in c.r.iter().zip(&c.value) {
                        rows.push(vec![
                            r.to_string(),
                            c.tau.to_string(),
                            v.to_string(),
                            scale.name().to_string(),
                        ]);
                    }
                }
            }
            Err(e) => log::warn!("{} agreement bands skipped: {e}", scale.name()),
        }
    }
    dir.write(
        "bands.csv",
        &csv_text(&["R", "tau", "value", "scale"], rows)?,
    )?;
    Ok(Completion::Ok)
}

pub fn classify(cfg: &RunConfig, session: &mut Session) -> Result<Completion> {
    let dir = session.open(cfg)?;
    let ds = load(cfg)?;
    let mut header = vec![
        "id",
        "visit_index",
        "time_since_dx",
        "S",
        "R",
        "censor",
        "category",
    ];
    header.extend(VisitCategory::ALL.map(|c| c.name()));
    let mut rows = Vec::new();
    for g in ds.gaps() {
        let v = g.visit;
        let dec = decompose_risk(g.exposure(), v.rec_interval, v.censored, &cfg.policy)?;
        let category = match (dec.valid, dec.event_category) {
            (false, _) => "invalid".to_string(),
            (true, None) => "censored".to_string(),
            (true, Some(c)) => c.name().to_string(),
        };
        let mut row = vec![
            v.patient_id.clone(),
            v.visit_index.to_string(),
            v.time_since_dx.to_string(),
            g.exposure().to_string(),
            opt(v.rec_interval),
            u8::from(v.censored).to_string(),
            category,
        ];
        row.extend(VisitCategory::ALL.map(|c| {
            dec.duration(c)
                .map_or_else(|| "0".into(), |d| d.to_string())
        }));
        rows.push(row);
    }
    log::info!("classified {} gaps", rows.len());
    dir.write("classification.csv", &csv_text(&header, rows)?)?;
    Ok(Completion::Ok)
}

fn weights_csv(ds: &Dataset, w: &WeightTable) -> Result<String> {
    let rows = ds.rows().zip(&w.rows).map(|(v, r)| {
        vec![
            v.patient_id.clone(),
            v.visit_index.to_string(),
            v.time_since_dx.to_string(),
            opt(v.das),
            r.arrival_category
                .map_or_else(|| "NA".into(), |c| c.name().to_string()),
            opt(r.raw_weight),
            opt(r.lag_weight),
            opt(r.weight),
        ]
    });
    csv_text(
        &[
            "id",
            "visit_index",
            "time_since_dx",
            "DAS",
            "arrival_category",
            "raw_weight",
            "lag_weight",
            "weight",
        ],
        rows,
    )
}

fn intensity_csv(set: &IntensityModelSet) -> Result<String> {
    let mut rows = Vec::new();
    for m in set.models.iter().flatten() {
        for (j, b) in m.fit.coefficients.iter().enumerate() {
            let term = if j == 0 {
                "intercept".to_string()
            } else {
                format!("bs{j}")
            };
            rows.push(vec![
                m.category.name().to_string(),
                term,
                b.to_string(),
                m.aliased.contains(&j).to_string(),
                m.n_rows.to_string(),
                m.n_events.to_string(),
                m.total_exposure.to_string(),
            ]);
        }
    }
    csv_text(
        &[
            "category",
            "term",
            "coefficient",
            "aliased",
            "n_rows",
            "n_events",
            "exposure",
        ],
        rows,
    )
}

#[derive(Serialize)]
struct FitSummary {
    weighting: &'static str,
    auc: f64,
    auc_unweighted: f64,
    auc_timerange: f64,
    auc_increment: f64,
    n_rows: usize,
    n_patients: usize,
    dropped_missing_das: usize,
    dropped_missing_weight: usize,
    dropped_outside_time_window: usize,
    coefficients: Vec<f64>,
    robust_se: Option<Vec<f64>>,
}

pub fn fit_aar(cfg: &RunConfig, session: &mut Session) -> Result<Completion> {
    let dir = session.open(cfg)?;
    let ds = load(cfg)?;
    let set = fit_models(&ds, cfg)?;
    let weights = compute_weights_with(&ds, &set, &cfg.policy, &cfg.weight_options())?;
    dir.write("weights.csv", &weights_csv(&ds, &weights)?)?;
    dir.write("intensity.csv", &intensity_csv(&set)?)?;

    let opts = cfg.outcome_options();
    let (table, weighting) = match cfg.weighting {
        WeightingMode::Aar => (weights.clone(), Weighting::Aar),
        WeightingMode::Unweighted => (weights.clone(), Weighting::Unweighted),
        WeightingMode::Unit => (weights.with_constant(1.0), Weighting::Aar),
    };
    let (fit, dropped) = fit_outcome_with_drops(&ds, &table, weighting, &opts)?;
    let (unweighted, _) = fit_outcome_with_drops(&ds, &weights, Weighting::Unweighted, &opts)?;
    let auc = trajectory_auc(&fit, cfg.auc_timerange, cfg.auc_increment)?;
    let auc_unweighted = trajectory_auc(&unweighted, cfg.auc_timerange, cfg.auc_increment)?;
    log::info!(
        "{} AUC {auc}; unweighted AUC {auc_unweighted}",
        cfg.weighting.name()
    );

    let traj = predict_trajectory(&fit, 0.0, cfg.auc_timerange, cfg.auc_increment)?;
    let mut curves = vec![(cfg.weighting.name().to_string(), &traj)];
    let traj_u = predict_trajectory(&unweighted, 0.0, cfg.auc_timerange, cfg.auc_increment)?;
    if cfg.weighting != WeightingMode::Unweighted {
        curves.push(("unweighted".to_string(), &traj_u));
    }
    dir.write("trajectory.csv", &trajectory_csv(&curves)?)?;
    dir.write_json(
        "summary.json",
        &FitSummary {
            weighting: cfg.weighting.name(),
            auc,
            auc_unweighted,
            auc_timerange: cfg.auc_timerange,
            auc_increment: cfg.auc_increment,
            n_rows: fit.n_rows,
            n_patients: fit.n_patients,
            dropped_missing_das: dropped.missing_das,
            dropped_missing_weight: dropped.missing_weight,
            dropped_outside_time_window: dropped.outside_time_window,
            coefficients: fit.fit.coefficients.iter().copied().collect(),
            robust_se: fit
                .fit
                .covariance
                .as_ref()
                .map(|c| c.diagonal().iter().map(|v| v.sqrt()).collect()),
        },
    )?;
    Ok(Completion::Ok)
}

pub fn sensitivity(cfg: &RunConfig, session: &mut Session) -> Result<Completion> {
    let dir = session.open(cfg)?;
    let ds = load(cfg)?;
    let set = fit_models(&ds, cfg)?;
    let gaps = arrival_gaps(&ds, &set, &cfg.policy)?;
    let tilt = cfg.tilt(0.0, 0.0);
    let builder = NormalizerBuilder::new(
        &ds,
        &cfg.policy,
        cfg.normalizer_rows,
        &tilt,
        cfg.normalizer_df,
    )?;
    log::info!(
        "normalizer regressions use {} gaps ({})",
        builder.n_rows(),
        cfg.normalizer_rows
    );
    let spec = cfg.grid()?;
    let locate = |axis: &[f64], a: f64| axis.iter().position(|x| (x - a).abs() < 1e-9);
    let mut selected = Vec::new();
    for &(e, l) in &cfg.trajectory_cells {
        match (locate(&spec.alpha_e, e), locate(&spec.alpha_l, l)) {
            (Some(i), Some(j)) => selected.push((i, j)),
            _ => bail!("trajectory cell {e}:{l} is not on the grid"),
        }
    }
    let ctx = GridContext {
        dataset: &ds,
        gaps: &gaps,
        normalizers: &builder,
        tilt,
        outcome: cfg.outcome_options(),
        weights: cfg.weight_options(),
        timerange: cfg.auc_timerange,
        increment: cfg.auc_increment,
    };
    let grid = run_grid(&ctx, &spec, cfg.jobs, !selected.is_empty())?;
    let n_failed = grid.n_failed();
    log::info!("grid: {} cells, {} failed", grid.cells.len(), n_failed);
    for c in grid.cells.iter().filter(|c| c.auc.is_err()) {
        log::warn!("cell ({}, {}) failed", c.alpha_e, c.alpha_l);
    }
    dir.write("heatmap.csv", &grid.to_heatmap_csv())?;

    let labelled: Vec<(String, &_)> = selected
        .iter()
        .filter_map(|&(i, j)| {
            let cell = grid.cell(i, j);
            cell.trajectory
                .as_ref()
                .map(|t| (format!("anar({},{})", cell.alpha_e, cell.alpha_l), t))
        })
        .collect();
    if !selected.is_empty() {
        dir.write("trajectories.csv", &trajectory_csv(&labelled)?)?;
    }
    let aucs: Vec<f64> = grid
        .cells
        .iter()
        .filter_map(|c| c.auc.as_ref().ok().copied())
        .collect();
    dir.write_json(
        "summary.json",
        &json!({
            "n_cells": grid.cells.len(),
            "n_failed": n_failed,
            "alpha_e": grid.alpha_e,
            "alpha_l": grid.alpha_l,
            "auc_min": aucs.iter().copied().reduce(f64::min),
            "auc_max": aucs.iter().copied().reduce(f64::max),
            "normalizer_rows": cfg.normalizer_rows.to_string(),
            "normalizer_n_rows": builder.n_rows(),
        }),
    )?;
    Ok(if n_failed > 0 {
        Completion::PartialGrid
    } else {
        Completion::Ok
    })
}

pub fn elicit(cfg: &RunConfig, session: &mut Session) -> Result<Completion> {
    let dir = session.open(cfg)?;
    let ds = load(cfg)?;
    let set = fit_models(&ds, cfg)?;
    let tilt = cfg.tilt(0.0, 0.0);
    let builder = if cfg.no_normalizer {
        None
    } else {
        Some(NormalizerBuilder::new(
            &ds,
            &cfg.policy,
            cfg.normalizer_rows,
            &tilt,
            cfg.normalizer_df,
        )?)
    };
    let normalizer = match &builder {
        Some(b) => ElicitationNormalizer::Fitted(b),
        None => ElicitationNormalizer::Unit,
    };
    let d_grid = default_d_grid();
    let mut rows = Vec::new();
    for &r in &cfg.elicit_r {
        for &alpha in &cfg.elicit_alphas {
            let norm = normalizer.fit(alpha)?;
            let curve = elicitation_curve(r, alpha, &d_grid, &set, &norm, &tilt, &cfg.policy)?;
            if !curve.is_monotone() {
                return Err(NumericalFailure(format!(
                    "elicitation curve for R={r}, alpha={alpha} is not monotone in D"
                ))
                .into());
            }
            for (d, p) in curve.d.iter().zip(&curve.probability) {
                rows.push(vec![
                    r.to_string(),
                    alpha.to_string(),
                    d.to_string(),
                    p.to_string(),
                ]);
            }
        }
    }
    dir.write(
        "elicitation.csv",
        &csv_text(&["R", "alpha", "D", "probability"], rows)?,
    )?;

    let range = plausible_alpha_range(
        &set,
        normalizer,
        &cfg.elicit_r,
        cfg.elicit_targets,
        &cfg.policy,
    );
    let per_r = |range: &recvisit::sensitivity::PlausibleRange| -> Vec<serde_json::Value> {
        range
            .per_r
            .iter()
            .map(|s| {
                let side = |x: &std::result::Result<f64, String>| match x {
                    Ok(a) => json!({ "alpha": a }),
                    Err(e) => json!({ "error": e }),
                };
                json!({ "R": s.r, "low_target": side(&s.alpha_low_target), "high_target": side(&s.alpha_high_target) })
            })
            .collect()
    };
    let normalizer_name = if cfg.no_normalizer { "unit" } else { "fitted" };
    match range {
        Ok(range) => {
            log::info!(
                "plausible alpha_e range [{}, {}]",
                range.alpha_lo,
                range.alpha_hi
            );
            dir.write_json(
                "plausible_range.json",
                &json!({
                    "alpha_lo": range.alpha_lo,
                    "alpha_hi": range.alpha_hi,
                    "targets": [range.targets.0, range.targets.1],
                    "normalizer": normalizer_name,
                    "per_r": per_r(&range),
                }),
            )?;
            Ok(Completion::Ok)
        }
        Err(e) => Err(anyhow::Error::new(e).context("plausible alpha range")),
    }
}

/// Arguments of the `simulate` command.
pub struct SimulateArgs {
    pub spec: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: PathBuf,
    pub truth: PathBuf,
    pub run_dir: Option<PathBuf>,
}

pub fn simulate_cmd(args: &SimulateArgs, session: &mut Session) -> Result<Completion> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScenarioSpec::parse(&text).with_context(|| format!("scenario file {}", p.display()))?
        }
        None => ScenarioSpec::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got {kv:?}"))?;
        spec.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    if let Some(path) = &args.run_dir {
        let dir = RunDir::create(path)?;
        dir.write("scenario.txt", &spec.to_key_values())?;
        session.run_dir = Some(dir);
    }
    let sim = simulate(&spec, args.jobs)?;
    log::info!(
        "simulated {} patients, {} visits ({} mechanism, seed {})",
        sim.dataset.patients.len(),
        sim.dataset.n_visits(),
        spec.mechanism,
        spec.seed
    );
    log::info!(
        "truth AUC {} (Monte Carlo se {})",
        sim.truth.auc,
        sim.truth.auc_se
    );
    for (path, text) in [
        (&args.out, sim.dataset.to_csv()),
        (&args.truth, sim.truth.to_csv()),
    ] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", file_name(path));
    }
    Ok(Completion::Ok)
}
