//! Category-specific visit intensity models under assessment at random, and the
//! inverse-intensity weights derived from them.
//!
//! Each gap contributes exposure to every category window it traverses, with an
//! event only in the window where the next visit landed. Per category the log
//! rate is linear in a B-spline basis of the recommended interval and fitted by
//! exponential maximum likelihood. The out-of-window models are fitted only on
//! gaps whose outcome increase `D` is observed, so the same rows are used when
//! the intensities are later tilted.

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::numerics::{
    expand_coefficients, fit_exponential_survival, independent_columns, select_columns, LinearFit,
    SplineBasisSpec,
};
use crate::parallel::map_ordered;
use crate::windows::{classify_gap, decompose_risk, VisitCategory, WindowPolicy};
use crate::{Error, Result};

/// Exposure and event indicator per category for one gap.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub patient: usize,
    pub patient_id: String,
    /// Visit index at the start of the gap.
    pub visit_index: usize,
    /// Recommended interval (months).
    pub r: f64,
    pub exposure: [Option<f64>; 5],
    pub event: [bool; 5],
    pub event_category: Option<VisitCategory>,
    /// Outcome increase over the gap, when both outcomes are observed.
    pub d: Option<f64>,
    pub censored: bool,
}

/// One row per gap with a recommended interval; gaps without `R` are skipped.
pub fn build_risk_table(ds: &Dataset, policy: &WindowPolicy) -> Result<Vec<RiskRow>> {
    let mut out = Vec::new();
    for gap in ds.gaps() {
        let v = gap.visit;
        let Some(r) = v.rec_interval else { continue };
        let dec = decompose_risk(gap.exposure(), Some(r), v.censored, policy)?;
        let mut event = [false; 5];
        if let Some(c) = dec.event_category {
            event[c.index()] = true;
        }
        out.push(RiskRow {
            patient: gap.patient,
            patient_id: v.patient_id.clone(),
            visit_index: v.visit_index,
            r,
            exposure: dec.durations,
            event,
            event_category: dec.event_category,
            d: v.das_increase_forward,
            censored: v.censored,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IntensityOptions {
    /// Spline df of the recommended-interval basis, per category (gap-time order).
    pub r_df: [usize; 5],
    pub degree: usize,
    /// Worker threads for the five independent fits.
    pub jobs: usize,
}

impl Default for IntensityOptions {
    fn default() -> Self {
        Self {
            r_df: [3; 5],
            degree: 3,
            jobs: 1,
        }
    }
}

/// A fitted category model: `rate(R) = exp([1, B(R)] gamma)`.
#[derive(Debug, Clone)]
pub struct CategoryModel {
    pub category: VisitCategory,
    pub basis: Option<SplineBasisSpec>,
    /// Coefficients over `[1, B(R)]`; aliased columns hold zero.
    pub fit: LinearFit,
    pub aliased: Vec<usize>,
    pub n_rows: usize,
    pub n_events: usize,
    pub total_exposure: f64,
    /// True when rows without an observed `D` were excluded.
    pub requires_observed_d: bool,
}

impl CategoryModel {
    /// Intercept-only model with a fixed rate.
    pub fn constant(category: VisitCategory, rate: f64) -> Self {
        Self {
            category,
            basis: None,
            fit: LinearFit {
                coefficients: nalgebra::DVector::from_element(1, rate.ln()),
                covariance: None,
                iterations: 0,
                objective: 0.0,
            },
            aliased: Vec::new(),
            n_rows: 0,
            n_events: 0,
            total_exposure: 0.0,
            requires_observed_d: category != VisitCategory::InWindow,
        }
    }

    pub fn rate(&self, r: f64) -> f64 {
        let eta = match &self.basis {
            Some(b) => self.fit.predict_row(&b.design_row(r)),
            None => self.fit.coefficients[0],
        };
        eta.exp()
    }
}

/// The five category models; a category that could not be fitted carries the
/// reason instead.
#[derive(Debug, Clone)]
pub struct IntensityModelSet {
    pub models: [std::result::Result<CategoryModel, String>; 5],
}

impl IntensityModelSet {
    pub fn from_models(models: [std::result::Result<CategoryModel, String>; 5]) -> Self {
        Self { models }
    }

    pub fn model(&self, c: VisitCategory) -> Result<&CategoryModel> {
        self.models[c.index()]
            .as_ref()
            .map_err(|reason| Error::Stratum {
                category: c.name().into(),
                source: Box::new(Error::Numerical(format!("model not fitted: {reason}"))),
            })
    }

    pub fn failures(&self) -> Vec<(VisitCategory, String)> {
        VisitCategory::ALL
            .into_iter()
            .filter_map(|c| {
                self.models[c.index()]
                    .as_ref()
                    .err()
                    .map(|e| (c, e.clone()))
            })
            .collect()
    }

    /// Errors naming every category that could not be fitted.
    pub fn ensure_complete(&self) -> Result<()> {
        let failures = self.failures();
        if failures.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = failures.iter().map(|(c, e)| format!("{c} ({e})")).collect();
        Err(Error::Numerical(format!(
            "intensity models could not be fitted for: {}; consider coarser visit categories",
            names.join("; ")
        )))
    }
}

/// Rows entering the fit for category `c`.
fn stratum_rows(rows: &[RiskRow], c: VisitCategory) -> Vec<&RiskRow> {
    rows.iter()
        .filter(|row| row.exposure[c.index()].is_some())
        .filter(|row| c == VisitCategory::InWindow || row.censored || row.d.is_some())
        .collect()
}

fn fit_category(
    rows: &[RiskRow],
    c: VisitCategory,
    opts: &IntensityOptions,
) -> Result<CategoryModel> {
    let stratum = stratum_rows(rows, c);
    let n_events = stratum.iter().filter(|r| r.event[c.index()]).count();
    if n_events == 0 {
        return Err(Error::NoEvents(c.name().into()));
    }
    let r_values: Vec<f64> = stratum.iter().map(|r| r.r).collect();
    let exposure: Vec<f64> = stratum
        .iter()
        .map(|r| r.exposure[c.index()].expect("filtered"))
        .collect();
    let events: Vec<f64> = stratum
        .iter()
        .map(|r| f64::from(u8::from(r.event[c.index()])))
        .collect();
    let basis = SplineBasisSpec::from_data(&r_values, opts.r_df[c.index()], opts.degree, false)?;
    let design = basis.design(&r_values);
    let (kept, aliased) = independent_columns(&design);
    if !aliased.is_empty() {
        log::info!("{c} intensity model: aliased spline columns {aliased:?} dropped");
    }
    let reduced: DMatrix<f64> = select_columns(&design, &kept);
    let fit = fit_exponential_survival(&exposure, &events, &reduced)?;
    let fit = expand_coefficients(&fit, &kept, design.ncols());
    Ok(CategoryModel {
        category: c,
        basis: Some(basis),
        fit,
        aliased,
        n_rows: stratum.len(),
        n_events,
        total_exposure: exposure.iter().sum(),
        requires_observed_d: c != VisitCategory::InWindow,
    })
}

/// Fits the five category models independently. Failures are kept per category.
pub fn fit_intensity_models(rows: &[RiskRow], opts: &IntensityOptions) -> IntensityModelSet {
    let fits = map_ordered(opts.jobs, &VisitCategory::ALL, |&c| {
        fit_category(rows, c, opts).map_err(|e| e.to_string())
    });
    let mut it = fits.into_iter();
    let models = std::array::from_fn(|_| it.next().expect("five categories"));
    IntensityModelSet { models }
}

/// Fitted visit rate (per month) for category `c` at recommended interval `r`.
pub fn predict_intensity(set: &IntensityModelSet, r: f64, c: VisitCategory) -> Result<f64> {
    let rate = set.model(c)?.rate(r);
    if rate > 0.0 && rate.is_finite() {
        Ok(rate)
    } else {
        Err(Error::Numerical(format!(
            "{c} intensity at R={r} is not a positive finite rate ({rate})"
        )))
    }
}

/// A completed gap, seen from the visit that ends it.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalGap {
    pub patient: usize,
    /// Row index of the visit that starts the gap.
    pub row: usize,
    pub category: VisitCategory,
    pub r: f64,
    pub d: Option<f64>,
    /// AAR intensity used for the weight; `None` when it cannot be computed.
    pub aar_rate: Option<f64>,
}

/// Categorizes every completed gap with a recommended interval and attaches its
/// AAR intensity. Out-of-window gaps without an observed `D` get no intensity,
/// matching the rows their models were fitted on.
pub fn arrival_gaps(
    ds: &Dataset,
    set: &IntensityModelSet,
    policy: &WindowPolicy,
) -> Result<Vec<ArrivalGap>> {
    let mut out = Vec::new();
    for gap in ds.gaps() {
        let v = gap.visit;
        if v.censored {
            continue;
        }
        let Some(r) = v.rec_interval else { continue };
        let category = classify_gap(gap.exposure(), r, policy)?;
        let d = v.das_increase_forward;
        let aar_rate = if category != VisitCategory::InWindow && d.is_none() {
            None
        } else {
            predict_intensity(set, r, category).ok()
        };
        out.push(ArrivalGap {
            patient: gap.patient,
            row: gap.row,
            category,
            r,
            d,
            aar_rate,
        });
    }
    Ok(out)
}

/// Per-visit weights, aligned with the dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub patient: usize,
    pub visit_index: usize,
    /// Inverse intensity of the gap that starts at this visit.
    pub raw_weight: Option<f64>,
    /// `raw_weight` of the previous visit.
    pub lag_weight: Option<f64>,
    /// Weight used in the outcome model: 1 on the first visit, else the lag.
    pub weight: Option<f64>,
    /// Category of the gap that ended at this visit.
    pub arrival_category: Option<VisitCategory>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightTable {
    pub rows: Vec<WeightRow>,
}

impl WeightTable {
    /// Uniform weight `c` wherever this table has a weight.
    pub fn with_constant(&self, c: f64) -> WeightTable {
        WeightTable {
            rows: self
                .rows
                .iter()
                .map(|r| WeightRow {
                    weight: r.weight.map(|_| c),
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn weights(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.weight).collect()
    }

    /// Largest relative difference between two aligned tables' weights; infinite
    /// when presence differs.
    pub fn max_relative_difference(&self, other: &WeightTable) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| match (a.weight, b.weight) {
                (Some(x), Some(y)) => (x - y).abs() / x.abs().max(y.abs()),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WeightOptions {
    /// Upper cap on raw weights; off by default.
    pub cap: Option<f64>,
}

/// Shifts per-gap inverse rates to the arriving visit and sets first visits to 1.
pub fn align_weights<F>(
    ds: &Dataset,
    gaps: &[ArrivalGap],
    opts: &WeightOptions,
    rate: F,
) -> WeightTable
where
    F: Fn(&ArrivalGap) -> Option<f64>,
{
    let mut raw: Vec<Vec<Option<f64>>> = ds
        .patients
        .iter()
        .map(|p| vec![None; p.rows.len()])
        .collect();
    let mut arrival: Vec<Vec<Option<VisitCategory>>> = ds
        .patients
        .iter()
        .map(|p| vec![None; p.rows.len()])
        .collect();
    for g in gaps {
        let w = rate(g)
            .filter(|l| *l > 0.0 && l.is_finite())
            .map(|l| 1.0 / l);
        raw[g.patient][g.row] = match (w, opts.cap) {
            (Some(w), Some(cap)) => Some(w.min(cap)),
            (w, _) => w,
        };
        if g.row + 1 < raw[g.patient].len() {
            arrival[g.patient][g.row + 1] = Some(g.category);
        }
    }
    let mut rows = Vec::with_capacity(ds.n_visits());
    for (pi, p) in ds.patients.iter().enumerate() {
        for (j, v) in p.rows.iter().enumerate() {
            let lag = if j == 0 { None } else { raw[pi][j - 1] };
            rows.push(WeightRow {
                patient: pi,
                visit_index: v.visit_index,
                raw_weight: raw[pi][j],
                lag_weight: lag,
                weight: if j == 0 { Some(1.0) } else { lag },
                arrival_category: arrival[pi][j],
            });
        }
    }
    let table = WeightTable { rows };
    warn_on_extreme_weights(&table);
    table
}

fn warn_on_extreme_weights(table: &WeightTable) {
    let mut w: Vec<f64> = table.rows.iter().filter_map(|r| r.weight).collect();
    if w.len() < 2 {
        return;
    }
    w.sort_by(f64::total_cmp);
    let median = crate::numerics::quantile_sorted(&w, 0.5);
    let max = w[w.len() - 1];
    if median > 0.0 && max / median > 100.0 {
        log::warn!(
            "largest weight is {:.1} times the median weight; consider a cap",
            max / median
        );
    }
}

/// Inverse-intensity weights under assessment at random.
pub fn compute_weights(
    ds: &Dataset,
    set: &IntensityModelSet,
    policy: &WindowPolicy,
) -> Result<WeightTable> {
    compute_weights_with(ds, set, policy, &WeightOptions::default())
}

pub fn compute_weights_with(
    ds: &Dataset,
    set: &IntensityModelSet,
    policy: &WindowPolicy,
    opts: &WeightOptions,
) -> Result<WeightTable> {
    let gaps = arrival_gaps(ds, set, policy)?;
    Ok(align_weights(ds, &gaps, opts, |g| g.aar_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_dataset, ParseOptions};

    const FAKEDAT: &str = "\
id,date,time_since_dx,DAS,S,censor,R
1,2009-05-13,0.0383,10,0.690,0,0.460
1,2009-06-03,0.0958,10,0.460,0,0.460
1,2009-06-17,0.134,7,1.38,0,2
1,2009-07-29,0.249,,2.30,0,2
1,2009-10-07,0.441,5,4.14,0,
1,2010-02-10,0.786,3,4.60,0,2
1,2010-06-29,1.169,4,,0,
";

    fn fakedat() -> Dataset {
        parse_dataset(
            FAKEDAT,
            &ParseOptions {
                gap_rel_tol: Some(0.01),
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn constant_set(rate: f64) -> IntensityModelSet {
        IntensityModelSet::from_models(
            VisitCategory::ALL.map(|c| Ok(CategoryModel::constant(c, rate))),
        )
    }

    #[test]
    fn risk_table_for_the_illustrative_patient() {
        let rows = build_risk_table(&fakedat(), &WindowPolicy::default()).unwrap();
        assert_eq!(rows.len(), 5);
        let early = &rows[2];
        assert_eq!(early.visit_index, 2);
        assert_eq!(early.exposure[0], Some(1.0));
        assert!((early.exposure[1].unwrap() - 0.38).abs() < 1e-9);
        assert_eq!(early.event, [false, true, false, false, false]);
        assert!(rows
            .iter()
            .all(|r| r.event.iter().filter(|e| **e).count() <= 1));
    }

    #[test]
    fn censored_gap_has_exposure_but_no_event() {
        let text = "id,date,time_since_dx,DAS,S,censor,R\n1,,0.5,3,,0,2\n1,,0.75,3,3,1,2\n";
        let ds = parse_dataset(text, &ParseOptions::default()).unwrap();
        let rows = build_risk_table(&ds, &WindowPolicy::default()).unwrap();
        let last = rows.last().unwrap();
        assert!(last.censored);
        assert_eq!(last.event, [false; 5]);
        assert_eq!(last.exposure[0], Some(1.0));
        assert_eq!(last.exposure[1], Some(0.5));
        assert!((last.exposure[2].unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(last.exposure[3], None);
    }

    #[test]
    fn constant_intensity_gives_constant_weights() {
        let ds = fakedat();
        let table = compute_weights(&ds, &constant_set(0.5), &WindowPolicy::default()).unwrap();
        let w = table.weights();
        assert_eq!(w[0], Some(1.0));
        assert_eq!(w[1], Some(2.0));
        assert_eq!(w[2], Some(2.0));
        // gap 3 (early) has no observed D because DAS is missing at visit 4
        assert_eq!(w[3], None);
        // gap 4 (in-window) does not need D
        assert_eq!(w[4], Some(2.0));
        // visit 6 follows the gap without R
        assert_eq!(w[5], None);
        assert_eq!(w[6], Some(2.0));
    }

    #[test]
    fn single_occupied_category_fits_only_that_model() {
        // every gap in-window
        let mut text = String::from("id,date,time_since_dx,DAS,S,censor,R\n");
        for p in 0..4 {
            for k in 0..6 {
                let t = k as f64 * (2.0 + 0.1 * p as f64) / 12.0;
                text.push_str(&format!("{p},,{t},3,,0,{}\n", 2.0 + 0.05 * k as f64));
            }
        }
        let ds = parse_dataset(&text, &ParseOptions::default()).unwrap();
        let rows = build_risk_table(&ds, &WindowPolicy::default()).unwrap();
        let set = fit_intensity_models(&rows, &IntensityOptions::default());
        let failures = set.failures();
        assert_eq!(failures.len(), 4);
        assert!(set.model(VisitCategory::InWindow).is_ok());
        assert!(set.ensure_complete().is_err());
    }

    #[test]
    fn intercept_only_rate_and_clamping() {
        let set = constant_set(0.5);
        assert!((predict_intensity(&set, 3.0, VisitCategory::Late).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_never_leak_across_patients() {
        let text = "id,date,time_since_dx,DAS,S,censor,R\n\
                    a,,0.1,3,,0,1\na,,0.2,4,,0,1\nb,,0.1,3,,0,1\nb,,0.3,2,,0,2\n";
        let ds = parse_dataset(text, &ParseOptions::default()).unwrap();
        let table = compute_weights(&ds, &constant_set(0.25), &WindowPolicy::default()).unwrap();
        assert_eq!(table.rows[2].weight, Some(1.0));
        assert_eq!(table.rows[2].lag_weight, None);
        assert_eq!(table.rows[1].weight, Some(4.0));
    }
}
