//! Agreement between observed and recommended intervals.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::numerics::{
    fit_quantile_reg, independent_columns, median, quantile_sorted, select_columns, uniform_grid,
    SplineBasisSpec,
};
use crate::windows::{classify_gap, VisitCategory, WindowPolicy};
use crate::{Error, Result};

/// Uncensored gaps with both `S` and `R` observed.
fn s_r_pairs(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let mut s = Vec::new();
    let mut r = Vec::new();
    for gap in ds.gaps() {
        let v = gap.visit;
        if v.censored {
            continue;
        }
        if let (Some(sv), Some(rv)) = (v.gap_forward, v.rec_interval) {
            s.push(sv);
            r.push(rv);
        }
    }
    (s, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MadExplained {
    pub n: usize,
    /// `median |S - median(S)|`, months.
    pub unadjusted: f64,
    /// `median |S - m(R)|` with `m` the fitted linear median regression, months.
    pub adjusted: f64,
    /// `1 - adjusted / unadjusted`; absent when all `S` are identical.
    pub fraction: Option<f64>,
}

pub fn mad_explained(ds: &Dataset) -> Result<MadExplained> {
    let (s, r) = s_r_pairs(ds);
    mad_explained_from(&s, &r)
}

/// MAD-explained from paired observed and recommended intervals.
pub fn mad_explained_from(s: &[f64], r: &[f64]) -> Result<MadExplained> {
    let n = s.len();
    if n < 2 || r.len() != n {
        return Err(Error::InvalidArgument(format!(
            "MAD-explained needs at least 2 uncensored gaps with S and R, found {n}"
        )));
    }
    let med = median(s).expect("non-empty");
    let unadjusted =
        median(&s.iter().map(|v| (v - med).abs()).collect::<Vec<_>>()).expect("non-empty");

    let r_const = r.iter().all(|v| *v == r[0]);
    let adjusted = if r_const {
        // the median regression collapses to the sample median
        unadjusted
    } else {
        let x = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { r[i] });
        let fit = fit_quantile_reg(s, &x, 0.5)?;
        let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let resid: Vec<f64> = s
            .iter()
            .zip(r)
            .map(|(sv, rv)| {
                let e = (sv - fit.coefficients[0] - fit.coefficients[1] * rv).abs();
                if e <= 1e-12 * scale {
                    0.0
                } else {
                    e
                }
            })
            .collect();
        median(&resid).expect("non-empty")
    };

    let fraction = if unadjusted > 0.0 {
        let f = 1.0 - adjusted / unadjusted;
        if f < 0.0 {
            log::warn!(
                "median regression fits worse than the overall median (fraction {f}); reporting 0"
            );
            Some(0.0)
        } else {
            Some(f)
        }
    } else {
        log::warn!("all observed intervals are identical; MAD-explained fraction undefined");
        None
    };
    Ok(MadExplained {
        n,
        unadjusted,
        adjusted,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandScale {
    /// `S - R`, months.
    Difference,
    /// `S / R`.
    Ratio,
}

impl BandScale {
    pub fn name(self) -> &'static str {
        match self {
            BandScale::Difference => "difference",
            BandScale::Ratio => "ratio",
        }
    }
}

pub const DEFAULT_TAUS: [f64; 4] = [0.05, 0.25, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct BandCurve {
    pub tau: f64,
    pub scale: BandScale,
    pub r: Vec<f64>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BandOptions {
    pub taus: Vec<f64>,
    pub df: usize,
    /// Number of points on the plotting grid over the observed R range.
    pub grid_points: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            taus: DEFAULT_TAUS.to_vec(),
            df: 3,
            grid_points: 101,
        }
    }
}

/// Spline quantile regressions of `S - R` or `S / R` on `R`, one curve per tau.
pub fn agreement_bands(
    ds: &Dataset,
    scale: BandScale,
    opts: &BandOptions,
) -> Result<Vec<BandCurve>> {
    let (s, r) = s_r_pairs(ds);
    let y: Vec<f64> = match scale {
        BandScale::Difference => s.iter().zip(&r).map(|(a, b)| a - b).collect(),
        BandScale::Ratio => s.iter().zip(&r).map(|(a, b)| a / b).collect(),
    };
    let basis = SplineBasisSpec::from_data(&r, opts.df, 3, false)?;
    if r.len() < basis.ncols() + 1 {
        return Err(Error::InvalidArgument(format!(
            "agreement bands need at least {} gaps with S and R, found {}",
            basis.ncols() + 1,
            r.len()
        )));
    }
    let design = basis.design(&r);
    let (kept, aliased) = independent_columns(&design);
    if !aliased.is_empty() {
        log::info!("agreement bands: aliased spline columns {aliased:?} dropped");
    }
    let reduced = select_columns(&design, &kept);
    let (lo, hi) = basis.boundary;
    let grid = if hi > lo && opts.grid_points > 1 {
        let step = (hi - lo) / (opts.grid_points - 1) as f64;
        let mut g = uniform_grid(lo, hi, step)?;
        g.truncate(opts.grid_points);
        g
    } else {
        vec![lo]
    };
    let grid_design = select_columns(&basis.design(&grid), &kept);
    let mut curves = Vec::with_capacity(opts.taus.len());
    for &tau in &opts.taus {
        let fit = fit_quantile_reg(&y, &reduced, tau)?;
        let value: Vec<f64> = fit.predict(&grid_design).iter().copied().collect();
        curves.push(BandCurve {
            tau,
            scale,
            r: grid.clone(),
            value,
        });
    }
    warn_on_crossing(&curves);
    Ok(curves)
}

fn warn_on_crossing(curves: &[BandCurve]) {
    let mut sorted: Vec<&BandCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    for pair in sorted.windows(2) {
        let crossings = pair[0]
            .value
            .iter()
            .zip(&pair[1].value)
            .filter(|(lo, hi)| lo > hi)
            .count();
        if crossings > 0 {
            log::warn!(
                "{} quantile curves for tau {} and {} cross at {crossings} grid points",
                pair[0].scale.name(),
                pair[0].tau,
                pair[1].tau
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryCount {
    pub category: VisitCategory,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategorySummary {
    pub n_classified: usize,
    pub n_missing_r: usize,
    pub n_censored: usize,
    pub categories: Vec<CategoryCount>,
}

/// Category counts over uncensored gaps with `R` present.
pub fn category_summary(ds: &Dataset, policy: &WindowPolicy) -> Result<CategorySummary> {
    let mut counts = [0usize; 5];
    let mut n_missing_r = 0;
    let mut n_censored = 0;
    for gap in ds.gaps() {
        let v = gap.visit;
        if v.censored {
            n_censored += 1;
            continue;
        }
        let Some(r) = v.rec_interval else {
            n_missing_r += 1;
            continue;
        };
        counts[classify_gap(gap.exposure(), r, policy)?.index()] += 1;
    }
    let n: usize = counts.iter().sum();
    let categories = VisitCategory::ALL
        .iter()
        .map(|&c| CategoryCount {
            category: c,
            count: counts[c.index()],
            proportion: if n > 0 {
                counts[c.index()] as f64 / n as f64
            } else {
                0.0
            },
        })
        .collect();
    Ok(CategorySummary {
        n_classified: n,
        n_missing_r,
        n_censored,
        categories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileSummary {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl QuantileSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            n: v.len(),
            min: v[0],
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSummary {
    pub observed: Option<QuantileSummary>,
    pub recommended: Option<QuantileSummary>,
    pub ratio: Option<QuantileSummary>,
    pub difference: Option<QuantileSummary>,
    pub das: Option<QuantileSummary>,
}

/// Summaries over uncensored gaps; `S/R` and `S-R` need both. DAS is summarized
/// over all visits with an observed value.
pub fn interval_summary(ds: &Dataset) -> IntervalSummary {
    let mut s_all = Vec::new();
    let mut r_all = Vec::new();
    for gap in ds.gaps() {
        let v = gap.visit;
        if v.censored {
            continue;
        }
        if let Some(s) = v.gap_forward {
            s_all.push(s);
        }
        if let Some(r) = v.rec_interval {
            r_all.push(r);
        }
    }
    let (s, r) = s_r_pairs(ds);
    let ratio: Vec<f64> = s.iter().zip(&r).map(|(a, b)| a / b).collect();
    let difference: Vec<f64> = s.iter().zip(&r).map(|(a, b)| a - b).collect();
    let das: Vec<f64> = ds.rows().filter_map(|v| v.das).collect();
    IntervalSummary {
        observed: QuantileSummary::of(&s_all),
        recommended: QuantileSummary::of(&r_all),
        ratio: QuantileSummary::of(&ratio),
        difference: QuantileSummary::of(&difference),
        das: QuantileSummary::of(&das),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n_patients: usize,
    pub n_visits: usize,
    pub n_missing_das: usize,
    /// Absent when fewer than two gaps have both `S` and `R`.
    pub mad: Option<MadExplained>,
    pub categories: CategorySummary,
    pub intervals: IntervalSummary,
}

pub fn diagnostics_report(ds: &Dataset, policy: &WindowPolicy) -> Result<DiagnosticsReport> {
    let mad = match mad_explained(ds) {
        Ok(m) => Some(m),
        Err(Error::InvalidArgument(msg)) => {
            log::warn!("{msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(DiagnosticsReport {
        n_patients: ds.patients.len(),
        n_visits: ds.n_visits(),
        n_missing_das: ds.rows().filter(|v| v.das.is_none()).count(),
        mad,
        categories: category_summary(ds, policy)?,
        intervals: interval_summary(ds),
    })
}
