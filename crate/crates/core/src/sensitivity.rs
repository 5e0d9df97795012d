//! Sensitivity analysis over the `(alpha_e, alpha_l)` grid, expert-elicitation
//! curves and the plausible-range search for `alpha_e`.

use std::collections::BTreeMap;

use crate::dataset::{Dataset, WEEKS_PER_MONTH};
use crate::intensity::{predict_intensity, ArrivalGap, IntensityModelSet, WeightOptions};
use crate::numerics::uniform_grid;
use crate::outcome::{fit_outcome, predict_trajectory, OutcomeOptions, TrajectoryGrid, Weighting};
use crate::parallel::map_ordered;
use crate::tilt::{
    tilted_intensity, tilted_weights_from_gaps, NormalizerBuilder, NormalizerFit, NormalizerModels,
    TiltConfig,
};
use crate::windows::{VisitCategory, WindowPolicy};
use crate::{Error, Result};

/// Look-ahead of the elicitation question: two weeks, in months.
pub const ELICITATION_HORIZON: f64 = 2.0 / WEEKS_PER_MONTH;

/// Recommended intervals (months) used for elicitation by default.
pub const DEFAULT_ELICITATION_R: [f64; 3] = [2.0, 6.0, 12.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub alpha_e: Vec<f64>,
    pub alpha_l: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::uniform(0.0, 7.0, 0.5).expect("valid default grid")
    }
}

impl GridSpec {
    /// The same uniform sequence on both axes.
    pub fn uniform(start: f64, stop: f64, step: f64) -> Result<Self> {
        let axis = uniform_grid(start, stop, step)?;
        Ok(Self {
            alpha_e: axis.clone(),
            alpha_l: axis,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_e.is_empty() || self.alpha_l.is_empty() {
            return Err(Error::InvalidArgument(
                "sensitivity grid axes must be non-empty".into(),
            ));
        }
        for a in self.alpha_e.iter().chain(&self.alpha_l) {
            if !(*a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "grid alpha must be >= 0, got {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a grid cell needs, shared read-only across cells.
#[derive(Debug, Clone)]
pub struct GridContext<'a> {
    pub dataset: &'a Dataset,
    /// Arrival gaps with their AAR intensities.
    pub gaps: &'a [ArrivalGap],
    pub normalizers: &'a NormalizerBuilder,
    /// Supplies `q_mean` and `q_sd`; the alphas come from the grid.
    pub tilt: TiltConfig,
    pub outcome: OutcomeOptions,
    pub weights: WeightOptions,
    pub timerange: f64,
    pub increment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub alpha_e: f64,
    pub alpha_l: f64,
    /// `Ok(auc)` or the reason the cell failed.
    pub auc: std::result::Result<f64, String>,
    pub trajectory: Option<TrajectoryGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGrid {
    pub alpha_e: Vec<f64>,
    pub alpha_l: Vec<f64>,
    /// Row-major with `alpha_e` as the outer index.
    pub cells: Vec<GridCell>,
}

impl SensitivityGrid {
    pub fn cell(&self, i_e: usize, i_l: usize) -> &GridCell {
        &self.cells[i_e * self.alpha_l.len() + i_l]
    }

    pub fn auc(&self, i_e: usize, i_l: usize) -> Option<f64> {
        self.cell(i_e, i_l).auc.as_ref().ok().copied()
    }

    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.auc.is_err()).count()
    }

    /// Heatmap CSV with columns `alpha_e,alpha_l,auc,auc_rounded,status`.
    pub fn to_heatmap_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["alpha_e", "alpha_l", "auc", "auc_rounded", "status"])
            .expect("in-memory write");
        for c in &self.cells {
            let (auc, rounded, status) = match &c.auc {
                Ok(a) => (a.to_string(), format!("{a:.1}"), "ok".to_string()),
                Err(e) => ("NA".into(), "NA".into(), format!("failed: {e}")),
            };
            w.write_record([
                c.alpha_e.to_string(),
                c.alpha_l.to_string(),
                auc,
                rounded,
                status,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Parses a heatmap CSV written by [`SensitivityGrid::to_heatmap_csv`].
    /// Trajectories are not part of the heatmap and come back empty.
    pub fn from_heatmap_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut cells = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let field = |k: usize| {
                rec.get(k).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing column {k}"),
                })
            };
            let num = |k: usize| -> Result<f64> {
                field(k)?.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {k} is not a number"),
                })
            };
            let status = field(4)?;
            let auc = if status == "ok" {
                Ok(num(2)?)
            } else {
                Err(status
                    .strip_prefix("failed: ")
                    .unwrap_or(status)
                    .to_string())
            };
            cells.push(GridCell {
                alpha_e: num(0)?,
                alpha_l: num(1)?,
                auc,
                trajectory: None,
            });
        }
        let mut alpha_e: Vec<f64> = Vec::new();
        let mut alpha_l: Vec<f64> = Vec::new();
        for c in &cells {
            if !alpha_e.contains(&c.alpha_e) {
                alpha_e.push(c.alpha_e);
            }
            if !alpha_l.contains(&c.alpha_l) {
                alpha_l.push(c.alpha_l);
            }
        }
        if alpha_e.len() * alpha_l.len() != cells.len() {
            return Err(Error::Parse {
                line: 1,
                message: "heatmap is not a complete grid".into(),
            });
        }
        Ok(Self {
            alpha_e,
            alpha_l,
            cells,
        })
    }
}

fn run_cell(
    ctx: &GridContext<'_>,
    normalizers: &BTreeMap<u64, std::result::Result<NormalizerFit, String>>,
    alpha_e: f64,
    alpha_l: f64,
    keep_trajectory: bool,
) -> GridCell {
    let result = (|| -> std::result::Result<(f64, Option<TrajectoryGrid>), String> {
        let config = TiltConfig {
            alpha_e,
            alpha_l,
            ..ctx.tilt
        };
        let early = normalizers[&alpha_e.to_bits()].clone()?;
        let late = normalizers[&alpha_l.to_bits()].clone()?;
        let norm = NormalizerModels { early, late };
        let weights = tilted_weights_from_gaps(ctx.dataset, ctx.gaps, &norm, &config, &ctx.weights)
            .map_err(|e| e.to_string())?;
        let fit = fit_outcome(
            ctx.dataset,
            &weights,
            Weighting::Anar { alpha_e, alpha_l },
            &ctx.outcome,
        )
        .map_err(|e| e.to_string())?;
        let traj = predict_trajectory(&fit, 0.0, ctx.timerange, ctx.increment)
            .map_err(|e| e.to_string())?;
        let auc = traj.auc().map_err(|e| e.to_string())?;
        if !auc.is_finite() {
            return Err("AUC is not finite".into());
        }
        Ok((auc, keep_trajectory.then_some(traj)))
    })();
    match result {
        Ok((auc, trajectory)) => GridCell {
            alpha_e,
            alpha_l,
            auc: Ok(auc),
            trajectory,
        },
        Err(e) => {
            log::warn!("grid cell ({alpha_e}, {alpha_l}) failed: {e}");
            GridCell {
                alpha_e,
                alpha_l,
                auc: Err(e),
                trajectory: None,
            }
        }
    }
}

/// Evaluates every grid cell. Failed cells are recorded, not fatal.
pub fn run_grid(
    ctx: &GridContext<'_>,
    spec: &GridSpec,
    jobs: usize,
    keep_trajectories: bool,
) -> Result<SensitivityGrid> {
    spec.validate()?;
    ctx.tilt.validate()?;
    // one normalizer fit per distinct alpha, shared by both axes
    let mut alphas: Vec<f64> = spec.alpha_e.iter().chain(&spec.alpha_l).copied().collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let fits = map_ordered(jobs, &alphas, |&a| {
        ctx.normalizers.fit(a).map_err(|e| e.to_string())
    });
    let cache: BTreeMap<u64, _> = alphas.iter().map(|a| a.to_bits()).zip(fits).collect();

    let pairs: Vec<(f64, f64)> = spec
        .alpha_e
        .iter()
        .flat_map(|&e| spec.alpha_l.iter().map(move |&l| (e, l)))
        .collect();
    let cells = map_ordered(jobs, &pairs, |&(e, l)| {
        run_cell(ctx, &cache, e, l, keep_trajectories)
    });
    Ok(SensitivityGrid {
        alpha_e: spec.alpha_e.clone(),
        alpha_l: spec.alpha_l.clone(),
        cells,
    })
}

fn check_elicitation_r(r: f64, policy: &WindowPolicy) -> Result<()> {
    if r <= policy.very_early_offset {
        return Err(Error::InvalidArgument(format!(
            "very-early window empty for R={r} months"
        )));
    }
    Ok(())
}

/// Probability of an unscheduled visit within the next two weeks.
pub fn elicitation_probability(
    r: f64,
    d: f64,
    alpha_e: f64,
    set: &IntensityModelSet,
    normalizer: &NormalizerFit,
    config: &TiltConfig,
    policy: &WindowPolicy,
) -> Result<f64> {
    check_elicitation_r(r, policy)?;
    let rate = predict_intensity(set, r, VisitCategory::VeryEarly)?;
    let norm = NormalizerModels {
        early: normalizer.clone(),
        late: NormalizerFit::unit(0.0),
    };
    let cfg = TiltConfig { alpha_e, ..*config };
    let tilted = tilted_intensity(rate, VisitCategory::VeryEarly, Some(d), r, &norm, &cfg)?
        .expect("D supplied");
    Ok(-(-tilted * ELICITATION_HORIZON).exp_m1())
}

/// Large-`D` limit of [`elicitation_probability`].
pub fn elicitation_asymptote(
    r: f64,
    alpha_e: f64,
    set: &IntensityModelSet,
    normalizer: &NormalizerFit,
    policy: &WindowPolicy,
) -> Result<f64> {
    check_elicitation_r(r, policy)?;
    let rate = predict_intensity(set, r, VisitCategory::VeryEarly)?;
    let c = normalizer.value(r)?;
    Ok(-(-rate * c * alpha_e.exp() * ELICITATION_HORIZON).exp_m1())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElicitationCurve {
    pub r: f64,
    pub alpha: f64,
    pub d: Vec<f64>,
    pub probability: Vec<f64>,
}

impl ElicitationCurve {
    pub fn is_monotone(&self) -> bool {
        self.probability.windows(2).all(|w| w[1] >= w[0])
    }
}

pub fn elicitation_curve(
    r: f64,
    alpha: f64,
    d_grid: &[f64],
    set: &IntensityModelSet,
    normalizer: &NormalizerFit,
    config: &TiltConfig,
    policy: &WindowPolicy,
) -> Result<ElicitationCurve> {
    let probability = d_grid
        .iter()
        .map(|&d| elicitation_probability(r, d, alpha, set, normalizer, config, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(ElicitationCurve {
        r,
        alpha,
        d: d_grid.to_vec(),
        probability,
    })
}

/// Normalizer used by elicitation: fitted per alpha, or fixed at one.
#[derive(Debug, Clone, Copy)]
pub enum ElicitationNormalizer<'a> {
    Fitted(&'a NormalizerBuilder),
    Unit,
}

impl ElicitationNormalizer<'_> {
    pub fn fit(&self, alpha: f64) -> Result<NormalizerFit> {
        match self {
            Self::Fitted(b) => b.fit(alpha),
            Self::Unit => Ok(NormalizerFit::unit(alpha)),
        }
    }
}

/// Solutions of `asymptote(alpha, R) = target` for one `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSolution {
    pub r: f64,
    pub alpha_low_target: std::result::Result<f64, String>,
    pub alpha_high_target: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlausibleRange {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub targets: (f64, f64),
    pub per_r: Vec<AlphaSolution>,
}

pub const ALPHA_SEARCH_MAX: f64 = 50.0;

fn solve_alpha(
    r: f64,
    target: f64,
    set: &IntensityModelSet,
    normalizer: ElicitationNormalizer<'_>,
    policy: &WindowPolicy,
) -> Result<f64> {
    let f = |a: f64| -> Result<f64> {
        Ok(elicitation_asymptote(r, a, set, &normalizer.fit(a)?, policy)? - target)
    };
    let f0 = f(0.0)?;
    if f0 == 0.0 {
        return Ok(0.0);
    }
    if f0 > 0.0 {
        return Err(Error::Numerical(format!(
            "target {target} is below the untilted probability at R={r}"
        )));
    }
    let mut hi = ALPHA_SEARCH_MAX;
    if f(hi)? < 0.0 {
        return Err(Error::Numerical(format!(
            "target {target} unreachable for alpha in [0, {ALPHA_SEARCH_MAX}] at R={r}"
        )));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest alpha reaching the low target and largest alpha reaching the high
/// target across the given recommended intervals.
pub fn plausible_alpha_range(
    set: &IntensityModelSet,
    normalizer: ElicitationNormalizer<'_>,
    r_set: &[f64],
    targets: (f64, f64),
    policy: &WindowPolicy,
) -> Result<PlausibleRange> {
    for t in [targets.0, targets.1] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "targets must lie in (0,1), got {t}"
            )));
        }
    }
    let per_r: Vec<AlphaSolution> = r_set
        .iter()
        .map(|&r| AlphaSolution {
            r,
            alpha_low_target: solve_alpha(r, targets.0, set, normalizer, policy)
                .map_err(|e| e.to_string()),
            alpha_high_target: solve_alpha(r, targets.1, set, normalizer, policy)
                .map_err(|e| e.to_string()),
        })
        .collect();
    let lo = per_r
        .iter()
        .filter_map(|s| s.alpha_low_target.as_ref().ok())
        .copied()
        .reduce(f64::min);
    let hi = per_r
        .iter()
        .filter_map(|s| s.alpha_high_target.as_ref().ok())
        .copied()
        .reduce(f64::max);
    match (lo, hi) {
        (Some(alpha_lo), Some(alpha_hi)) => Ok(PlausibleRange {
            alpha_lo,
            alpha_hi,
            targets,
            per_r,
        }),
        _ => Err(Error::Numerical(format!(
            "no recommended interval reached the targets {targets:?}"
        ))),
    }
}

/// Default D grid for elicitation curves: 0 to 12 in steps of 0.1.
pub fn default_d_grid() -> Vec<f64> {
    uniform_grid(0.0, 12.0, 0.1).expect("valid default grid")
}

/// Sample mean of `q(D)` over the normalizer rows.
pub fn mean_q(builder: &NormalizerBuilder) -> f64 {
    builder.q.iter().sum::<f64>() / builder.q.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::CategoryModel;

    fn set(rate: f64) -> IntensityModelSet {
        IntensityModelSet::from_models(
            VisitCategory::ALL.map(|c| Ok(CategoryModel::constant(c, rate))),
        )
    }

    #[test]
    fn default_grid_has_225_cells() {
        let g = GridSpec::default();
        assert_eq!(g.alpha_e.len() * g.alpha_l.len(), 225);
        assert_eq!(g.alpha_e[14], 7.0);
    }

    #[test]
    fn untilted_probability_ignores_d() {
        let s = set(0.3);
        let cfg = TiltConfig::default();
        let p = WindowPolicy::default();
        let n = NormalizerFit::unit(0.0);
        let a = elicitation_probability(2.0, 0.0, 0.0, &s, &n, &cfg, &p).unwrap();
        let b = elicitation_probability(2.0, 9.0, 0.0, &s, &n, &cfg, &p).unwrap();
        assert_eq!(a, b);
        assert!((a - (1.0 - (-0.3f64 * 2.0 / 4.345).exp())).abs() < 1e-15);
    }

    #[test]
    fn short_intervals_have_no_very_early_window() {
        let s = set(0.3);
        let err = elicitation_probability(
            1.0,
            2.0,
            1.0,
            &s,
            &NormalizerFit::unit(1.0),
            &TiltConfig::default(),
            &WindowPolicy::default(),
        );
        assert!(err
            .unwrap_err()
            .to_string()
            .contains("very-early window empty"));
    }

    #[test]
    fn closed_form_inversion() {
        let s = set(0.3);
        let range = plausible_alpha_range(
            &s,
            ElicitationNormalizer::Unit,
            &[2.0],
            (0.6, 0.99),
            &WindowPolicy::default(),
        )
        .unwrap();
        let delta = 2.0 / 4.345;
        let expected = (-(0.4f64.ln()) / (0.3 * delta)).ln();
        assert!((range.alpha_lo - expected).abs() < 1e-9);
        let expected_hi = (-(0.01f64.ln()) / (0.3 * delta)).ln();
        assert!((range.alpha_hi - expected_hi).abs() < 1e-9);
    }

    #[test]
    fn target_at_baseline_gives_zero() {
        let s = set(0.3);
        let base = 1.0 - (-0.3f64 * ELICITATION_HORIZON).exp();
        let a = solve_alpha(
            2.0,
            base,
            &s,
            ElicitationNormalizer::Unit,
            &WindowPolicy::default(),
        )
        .unwrap();
        assert!(a.abs() < 1e-9);
    }

    #[test]
    fn unreachable_target_errors() {
        let s = set(0.3);
        assert!(solve_alpha(
            2.0,
            0.01,
            &s,
            ElicitationNormalizer::Unit,
            &WindowPolicy::default()
        )
        .is_err());
    }

    #[test]
    fn heatmap_round_trip() {
        let grid = SensitivityGrid {
            alpha_e: vec![0.0, 0.5],
            alpha_l: vec![0.0, 1.5],
            cells: vec![
                GridCell {
                    alpha_e: 0.0,
                    alpha_l: 0.0,
                    auc: Ok(19.912345678901232),
                    trajectory: None,
                },
                GridCell {
                    alpha_e: 0.0,
                    alpha_l: 1.5,
                    auc: Err("no events, in \"late\"".into()),
                    trajectory: None,
                },
                GridCell {
                    alpha_e: 0.5,
                    alpha_l: 0.0,
                    auc: Ok(1.0 / 3.0),
                    trajectory: None,
                },
                GridCell {
                    alpha_e: 0.5,
                    alpha_l: 1.5,
                    auc: Ok(18.75),
                    trajectory: None,
                },
            ],
        };
        let csv = grid.to_heatmap_csv();
        assert!(csv.starts_with("alpha_e,alpha_l,auc,auc_rounded,status\n"));
        assert!(csv.contains("0,0,19.912345678901232,19.9,ok"), "{csv}");
        assert_eq!(SensitivityGrid::from_heatmap_csv(&csv).unwrap(), grid);
    }
}
