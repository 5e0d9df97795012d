//! Marginal outcome model: weighted least squares of DAS on a cubic B-spline
//! basis of time since diagnosis, with patient-clustered sandwich covariance.

use std::fmt;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::intensity::WeightTable;
use crate::numerics::{fit_wls, trapezoid_integral, uniform_grid, LinearFit, SplineBasisSpec};
use crate::{Error, Result};

/// Default AUC window (years) and grid increment.
pub const AUC_TIMERANGE: f64 = 7.0;
pub const AUC_INCREMENT: f64 = 0.007;

/// What the outcome-model weights represent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Unweighted,
    Aar,
    Anar { alpha_e: f64, alpha_l: f64 },
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weighting::Unweighted => f.write_str("unweighted"),
            Weighting::Aar => f.write_str("aar"),
            Weighting::Anar { alpha_e, alpha_l } => write!(f, "anar({alpha_e},{alpha_l})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeOptions {
    /// Spline df of the time basis.
    pub time_df: usize,
    pub degree: usize,
    /// Rows with time outside this closed range are dropped; `None` keeps all.
    pub time_window: Option<(f64, f64)>,
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        Self {
            time_df: 3,
            degree: 3,
            time_window: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeeFit {
    pub fit: LinearFit,
    pub basis: SplineBasisSpec,
    pub weighting: Weighting,
    pub n_rows: usize,
    pub n_patients: usize,
}

impl GeeFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.fit.predict_row(&self.basis.design_row(t))
    }
}

/// Counts of rows excluded from an outcome fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DroppedRows {
    pub missing_das: usize,
    pub missing_weight: usize,
    pub outside_time_window: usize,
}

/// Fits the marginal mean model. With `Weighting::Unweighted` every row that has
/// a defined weight in `weights` gets weight 1, so both fits use the same rows.
pub fn fit_outcome(
    ds: &Dataset,
    weights: &WeightTable,
    weighting: Weighting,
    opts: &OutcomeOptions,
) -> Result<GeeFit> {
    fit_outcome_with_drops(ds, weights, weighting, opts).map(|(fit, _)| fit)
}

pub fn fit_outcome_with_drops(
    ds: &Dataset,
    weights: &WeightTable,
    weighting: Weighting,
    opts: &OutcomeOptions,
) -> Result<(GeeFit, DroppedRows)> {
    if weights.rows.len() != ds.n_visits() {
        return Err(Error::InvalidArgument(format!(
            "weight table has {} rows for {} visits",
            weights.rows.len(),
            ds.n_visits()
        )));
    }
    let mut dropped = DroppedRows::default();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut cluster = Vec::new();
    for ((pi, v), wr) in ds
        .patients
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| p.rows.iter().map(move |v| (pi, v)))
        .zip(&weights.rows)
    {
        let Some(das) = v.das else {
            dropped.missing_das += 1;
            continue;
        };
        let Some(weight) = wr.weight else {
            dropped.missing_weight += 1;
            continue;
        };
        if let Some((lo, hi)) = opts.time_window {
            if v.time_since_dx < lo || v.time_since_dx > hi {
                dropped.outside_time_window += 1;
                continue;
            }
        }
        t.push(v.time_since_dx);
        y.push(das);
        w.push(if weighting == Weighting::Unweighted {
            1.0
        } else {
            weight
        });
        cluster.push(pi);
    }
    log::debug!(
        "outcome fit ({weighting}): {} rows; dropped {} missing DAS, {} missing weight, {} outside time window",
        t.len(),
        dropped.missing_das,
        dropped.missing_weight,
        dropped.outside_time_window
    );
    let basis = SplineBasisSpec::from_data(&t, opts.time_df, opts.degree, false)?;
    if t.len() < basis.ncols() + 1 {
        return Err(Error::InvalidArgument(format!(
            "outcome model needs at least {} rows, found {}",
            basis.ncols() + 1,
            t.len()
        )));
    }
    let design = basis.design(&t);
    let fit = fit_wls(&design, &y, &w, &cluster)?;
    let mut patients = cluster.clone();
    patients.dedup();
    Ok((
        GeeFit {
            fit,
            basis,
            weighting,
            n_rows: t.len(),
            n_patients: patients.len(),
        },
        dropped,
    ))
}

/// Predicted mean outcome on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrid {
    pub time: Vec<f64>,
    pub mean: Vec<f64>,
}

impl TrajectoryGrid {
    pub fn auc(&self) -> Result<f64> {
        let dx = if self.time.len() > 1 {
            self.time[1] - self.time[0]
        } else {
            0.0
        };
        trapezoid_integral(&self.mean, dx)
    }
}

pub fn predict_trajectory(
    fit: &GeeFit,
    t_start: f64,
    t_end: f64,
    increment: f64,
) -> Result<TrajectoryGrid> {
    if !(t_end > t_start) || !(increment > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "trajectory grid needs t_end > t_start and increment > 0 (got {t_start}, {t_end}, {increment})"
        )));
    }
    let time = uniform_grid(t_start, t_end, increment)?;
    let mean = time.iter().map(|&t| fit.predict(t)).collect();
    Ok(TrajectoryGrid { time, mean })
}

/// Trapezoid area under the predicted trajectory over `[0, timerange]`.
pub fn trajectory_auc(fit: &GeeFit, timerange: f64, increment: f64) -> Result<f64> {
    predict_trajectory(fit, 0.0, timerange, increment)?.auc()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_dataset, ParseOptions};
    use crate::intensity::WeightRow;

    fn dataset(f: impl Fn(f64) -> f64) -> Dataset {
        let mut text = String::from("id,date,time_since_dx,DAS,S,censor,R\n");
        for p in 0..5 {
            for k in 0..8 {
                let t = 0.1 * p as f64 + 0.9 * k as f64;
                text.push_str(&format!("{p},,{t},{},,0,2\n", f(t)));
            }
        }
        parse_dataset(&text, &ParseOptions::default()).unwrap()
    }

    fn table(ds: &Dataset, w: impl Fn(usize) -> Option<f64>) -> WeightTable {
        let mut rows = Vec::new();
        let mut i = 0;
        for (pi, p) in ds.patients.iter().enumerate() {
            for v in &p.rows {
                rows.push(WeightRow {
                    patient: pi,
                    visit_index: v.visit_index,
                    raw_weight: None,
                    lag_weight: None,
                    weight: w(i),
                    arrival_category: None,
                });
                i += 1;
            }
        }
        WeightTable { rows }
    }

    #[test]
    fn linear_truth_is_reproduced() {
        let ds = dataset(|t| 7.0 - 0.5 * t);
        let wt = table(&ds, |i| Some(1.0 + (i % 3) as f64));
        let fit = fit_outcome(&ds, &wt, Weighting::Aar, &OutcomeOptions::default()).unwrap();
        let traj = predict_trajectory(&fit, 0.0, 7.0, 0.1).unwrap();
        assert_eq!(traj.time.len(), 71);
        for (t, m) in traj.time.iter().zip(&traj.mean) {
            if *t >= 0.0 && *t <= fit.basis.boundary.1 {
                assert!((m - (7.0 - 0.5 * t)).abs() < 1e-8, "{t} {m}");
            }
        }
    }

    #[test]
    fn constant_fit_area() {
        let ds = dataset(|_| 1.0);
        let fit = fit_outcome(
            &ds,
            &table(&ds, |_| Some(1.0)),
            Weighting::Unweighted,
            &OutcomeOptions::default(),
        )
        .unwrap();
        assert!((trajectory_auc(&fit, 7.0, 0.007).unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn weight_scale_invariance() {
        let ds = dataset(|t| (t * 1.3).sin() * 2.0 + 4.0);
        let a = fit_outcome(
            &ds,
            &table(&ds, |i| Some(0.5 + (i % 5) as f64)),
            Weighting::Aar,
            &OutcomeOptions::default(),
        )
        .unwrap();
        let b = fit_outcome(
            &ds,
            &table(&ds, |i| Some(3.7 * (0.5 + (i % 5) as f64))),
            Weighting::Aar,
            &OutcomeOptions::default(),
        )
        .unwrap();
        for (x, y) in a.fit.coefficients.iter().zip(b.fit.coefficients.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn unweighted_uses_only_rows_with_weights() {
        let ds = dataset(|t| 3.0 + t);
        let wt = table(&ds, |i| if i % 4 == 0 { None } else { Some(2.0) });
        let (fit, dropped) =
            fit_outcome_with_drops(&ds, &wt, Weighting::Unweighted, &OutcomeOptions::default())
                .unwrap();
        assert_eq!(dropped.missing_weight, 10);
        assert_eq!(fit.n_rows, 30);
    }

    #[test]
    fn too_few_rows() {
        let text = "id,date,time_since_dx,DAS,S,censor,R\n1,,0,3,,0,2\n1,,1,4,,0,2\n";
        let ds = parse_dataset(text, &ParseOptions::default()).unwrap();
        assert!(fit_outcome(
            &ds,
            &table(&ds, |_| Some(1.0)),
            Weighting::Aar,
            &OutcomeOptions::default()
        )
        .is_err());
        assert!(predict_trajectory_args_checked());
    }

    fn predict_trajectory_args_checked() -> bool {
        let ds = dataset(|_| 2.0);
        let fit = fit_outcome(
            &ds,
            &table(&ds, |_| Some(1.0)),
            Weighting::Aar,
            &OutcomeOptions::default(),
        )
        .unwrap();
        predict_trajectory(&fit, 1.0, 0.0, 0.1).is_err()
            && predict_trajectory(&fit, 0.0, 1.0, 0.0).is_err()
    }
}
