//! Exponential tilting of the visit intensities for assessment not at random.
//!
//! Out-of-window intensities are multiplied by `c(R) exp(alpha q(D))`, where
//! `q(D) = Phi((D - q_mean) / q_sd)` and `c(R)` is a regression estimate of
//! `E[exp(-alpha q(D)) | R]` among observed visits. Early-side categories use
//! `alpha_e`, late-side categories `alpha_l`; in-window intensities are never
//! tilted.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::intensity::{
    align_weights, arrival_gaps, ArrivalGap, IntensityModelSet, WeightOptions, WeightTable,
};
use crate::numerics::{
    expand_coefficients, independent_columns, normal_cdf, ols_fit, select_columns, LinearFit,
    SplineBasisSpec,
};
use crate::windows::{classify_gap, VisitCategory, WindowPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltConfig {
    pub alpha_e: f64,
    pub alpha_l: f64,
    pub q_mean: f64,
    pub q_sd: f64,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self {
            alpha_e: 0.0,
            alpha_l: 0.0,
            q_mean: 3.0,
            q_sd: 1.0,
        }
    }
}

impl TiltConfig {
    pub fn new(alpha_e: f64, alpha_l: f64) -> Self {
        Self {
            alpha_e,
            alpha_l,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_sd > 0.0 && self.q_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "q_sd must be positive, got {}",
                self.q_sd
            )));
        }
        if !self.q_mean.is_finite() {
            return Err(Error::InvalidArgument("q_mean must be finite".into()));
        }
        for (name, a) in [("alpha_e", self.alpha_e), ("alpha_l", self.alpha_l)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be >= 0, got {a}"
                )));
            }
        }
        Ok(())
    }

    /// Tilting parameter for a category; zero in-window.
    pub fn alpha_for(&self, c: VisitCategory) -> f64 {
        if c.is_early_side() {
            self.alpha_e
        } else if c.is_late_side() {
            self.alpha_l
        } else {
            0.0
        }
    }
}

/// `Phi((D - q_mean) / q_sd)`.
pub fn q_value(d: f64, config: &TiltConfig) -> f64 {
    normal_cdf(d, config.q_mean, config.q_sd).expect("q_sd validated")
}

/// Which gaps enter the normalizer regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizerRows {
    /// Every gap with `D` and `R` observed.
    #[default]
    All,
    /// Only gaps classified outside the in-window band.
    OutOfWindow,
}

impl std::str::FromStr for NormalizerRows {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "out_of_window" => Ok(Self::OutOfWindow),
            other => Err(Error::InvalidArgument(format!(
                "normalizer rows must be all or out_of_window, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for NormalizerRows {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::OutOfWindow => "out_of_window",
        })
    }
}

/// Regression of `exp(-alpha q(D))` on `[1, B(R)]`.
#[derive(Debug, Clone)]
pub struct NormalizerFit {
    pub alpha: f64,
    /// `None` for the exact constant-one normalizer at `alpha = 0` or when the
    /// normalizer is switched off.
    pub model: Option<(SplineBasisSpec, LinearFit)>,
}

impl NormalizerFit {
    pub fn unit(alpha: f64) -> Self {
        Self { alpha, model: None }
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        let Some((basis, fit)) = &self.model else {
            return Ok(1.0);
        };
        let c = fit.predict_row(&basis.design_row(r));
        if c > 0.0 && c.is_finite() {
            Ok(c)
        } else {
            Err(Error::Numerical(format!(
                "normalizer non-positive at R={r} (alpha={}); reduce basis df",
                self.alpha
            )))
        }
    }
}

/// Early-side and late-side normalizers for one tilt configuration.
#[derive(Debug, Clone)]
pub struct NormalizerModels {
    pub early: NormalizerFit,
    pub late: NormalizerFit,
}

impl NormalizerModels {
    pub fn unit(config: &TiltConfig) -> Self {
        Self {
            early: NormalizerFit::unit(config.alpha_e),
            late: NormalizerFit::unit(config.alpha_l),
        }
    }

    pub fn for_category(&self, c: VisitCategory) -> Option<&NormalizerFit> {
        if c.is_early_side() {
            Some(&self.early)
        } else if c.is_late_side() {
            Some(&self.late)
        } else {
            None
        }
    }
}

/// Pooled `(R, q(D))` pairs and the basis used for every normalizer fit.
#[derive(Debug, Clone)]
pub struct NormalizerBuilder {
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub basis: SplineBasisSpec,
    design: nalgebra::DMatrix<f64>,
    kept: Vec<usize>,
}

impl NormalizerBuilder {
    pub fn new(
        ds: &Dataset,
        policy: &WindowPolicy,
        rows: NormalizerRows,
        config: &TiltConfig,
        df: usize,
    ) -> Result<Self> {
        config.validate()?;
        let mut r = Vec::new();
        let mut q = Vec::new();
        for gap in ds.gaps() {
            let v = gap.visit;
            let (Some(rv), Some(d)) = (v.rec_interval, v.das_increase_forward) else {
                continue;
            };
            if rows == NormalizerRows::OutOfWindow
                && classify_gap(gap.exposure(), rv, policy)? == VisitCategory::InWindow
            {
                continue;
            }
            r.push(rv);
            q.push(q_value(d, config));
        }
        let basis = SplineBasisSpec::from_data(&r, df, 3, false)?;
        if r.len() < basis.ncols() + 1 {
            return Err(Error::InvalidArgument(format!(
                "normalizer regression needs at least {} gaps with D and R, found {}",
                basis.ncols() + 1,
                r.len()
            )));
        }
        let design = basis.design(&r);
        let (kept, aliased) = independent_columns(&design);
        if !aliased.is_empty() {
            log::info!("normalizer regression: aliased spline columns {aliased:?} dropped");
        }
        Ok(Self {
            r,
            q,
            basis,
            design,
            kept,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.r.len()
    }

    /// Fits the normalizer for one tilting parameter.
    pub fn fit(&self, alpha: f64) -> Result<NormalizerFit> {
        if alpha == 0.0 {
            return Ok(NormalizerFit::unit(0.0));
        }
        let y: Vec<f64> = self.q.iter().map(|q| (-alpha * q).exp()).collect();
        let reduced = select_columns(&self.design, &self.kept);
        let fit = ols_fit(&reduced, &y)?;
        let fit = expand_coefficients(&fit, &self.kept, self.design.ncols());
        let fitted: DVector<f64> = fit.predict(&self.design);
        if let Some(bad) = fitted.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Numerical(format!(
                "normalizer non-positive at R={} (alpha={alpha}); reduce basis df",
                self.r[bad]
            )));
        }
        Ok(NormalizerFit {
            alpha,
            model: Some((self.basis.clone(), fit)),
        })
    }

    pub fn fit_pair(&self, config: &TiltConfig) -> Result<NormalizerModels> {
        Ok(NormalizerModels {
            early: self.fit(config.alpha_e)?,
            late: self.fit(config.alpha_l)?,
        })
    }
}

/// Tilted rate for one gap. `None` when an out-of-window gap has no observed `D`.
pub fn tilted_intensity(
    rate: f64,
    category: VisitCategory,
    d: Option<f64>,
    r: f64,
    normalizers: &NormalizerModels,
    config: &TiltConfig,
) -> Result<Option<f64>> {
    let Some(norm) = normalizers.for_category(category) else {
        return Ok(Some(rate));
    };
    let Some(d) = d else { return Ok(None) };
    let alpha = config.alpha_for(category);
    if alpha == 0.0 && norm.model.is_none() {
        return Ok(Some(rate));
    }
    Ok(Some(
        rate * norm.value(r)? * (alpha * q_value(d, config)).exp(),
    ))
}

/// Tilted weights from precomputed arrival gaps.
pub fn tilted_weights_from_gaps(
    ds: &Dataset,
    gaps: &[ArrivalGap],
    normalizers: &NormalizerModels,
    config: &TiltConfig,
    opts: &WeightOptions,
) -> Result<WeightTable> {
    let tilted = gaps
        .iter()
        .map(|g| {
            let aar_rate = match g.aar_rate {
                Some(rate) => tilted_intensity(rate, g.category, g.d, g.r, normalizers, config)?,
                None => None,
            };
            Ok(ArrivalGap {
                aar_rate,
                ..g.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(align_weights(ds, &tilted, opts, |g| g.aar_rate))
}

pub fn compute_tilted_weights(
    ds: &Dataset,
    set: &IntensityModelSet,
    normalizers: &NormalizerModels,
    config: &TiltConfig,
    policy: &WindowPolicy,
) -> Result<WeightTable> {
    let gaps = arrival_gaps(ds, set, policy)?;
    tilted_weights_from_gaps(ds, &gaps, normalizers, config, &WeightOptions::default())
}
