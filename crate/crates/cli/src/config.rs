//! Flat `key = value` run configuration with layered overrides.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use recvisit::dataset::ParseOptions;
use recvisit::diagnostics::{BandOptions, DEFAULT_TAUS};
use recvisit::intensity::{IntensityOptions, WeightOptions};
use recvisit::numerics::uniform_grid;
use recvisit::outcome::{OutcomeOptions, AUC_INCREMENT, AUC_TIMERANGE};
use recvisit::sensitivity::{GridSpec, DEFAULT_ELICITATION_R};
use recvisit::tilt::{NormalizerRows, TiltConfig};
use recvisit::windows::WindowPolicy;

/// How `fit-aar` weights the outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingMode {
    Aar,
    Unweighted,
    /// Weight 1 on every row the AAR fit would use.
    Unit,
}

impl WeightingMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightingMode::Aar => "aar",
            WeightingMode::Unweighted => "unweighted",
            WeightingMode::Unit => "unit",
        }
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aar" => Ok(Self::Aar),
            "unweighted" => Ok(Self::Unweighted),
            "unit" => Ok(Self::Unit),
            other => bail!("weighting must be aar, unweighted or unit, got {other:?}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; not part of the echoed config since it never changes results.
    pub jobs: usize,
    pub seed: u64,
    pub policy: WindowPolicy,
    pub gap_tolerance: Option<f64>,
    pub strict_integer_das: bool,
    pub r_df: [usize; 5],
    pub time_df: usize,
    pub time_window: Option<(f64, f64)>,
    pub grid_start: f64,
    pub grid_stop: f64,
    pub grid_step: f64,
    pub auc_timerange: f64,
    pub auc_increment: f64,
    pub q_mean: f64,
    pub q_sd: f64,
    pub normalizer_rows: NormalizerRows,
    pub normalizer_df: usize,
    pub no_normalizer: bool,
    pub weighting: WeightingMode,
    pub weight_cap: Option<f64>,
    pub trajectory_cells: Vec<(f64, f64)>,
    pub elicit_r: Vec<f64>,
    pub elicit_targets: (f64, f64),
    pub elicit_alphas: Vec<f64>,
    pub band_df: usize,
    pub band_points: usize,
    pub taus: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out_dir: None,
            jobs: 1,
            seed: 1,
            policy: WindowPolicy::default(),
            gap_tolerance: Some(0.01),
            strict_integer_das: false,
            r_df: IntensityOptions::default().r_df,
            time_df: 3,
            time_window: None,
            grid_start: 0.0,
            grid_stop: 7.0,
            grid_step: 0.5,
            auc_timerange: AUC_TIMERANGE,
            auc_increment: AUC_INCREMENT,
            q_mean: 3.0,
            q_sd: 1.0,
            normalizer_rows: NormalizerRows::All,
            normalizer_df: 3,
            no_normalizer: false,
            weighting: WeightingMode::Aar,
            weight_cap: None,
            trajectory_cells: vec![(0.0, 0.0)],
            elicit_r: DEFAULT_ELICITATION_R.to_vec(),
            elicit_targets: (0.6, 0.99),
            elicit_alphas: (0..=7).map(f64::from).collect(),
            band_df: 3,
            band_points: 101,
            taus: DEFAULT_TAUS.to_vec(),
        }
    }
}

/// Keys in echo order. `out_dir` and `jobs` are settable but not echoed: the
/// echo lives in the output directory and results never depend on the job count.
pub const KEYS: [&str; 30] = [
    "input",
    "seed",
    "very_early_offset",
    "early_offset",
    "late_factor",
    "very_late_factor",
    "gap_tolerance",
    "strict_integer_das",
    "r_df",
    "time_df",
    "time_window",
    "grid_start",
    "grid_stop",
    "grid_step",
    "auc_timerange",
    "auc_increment",
    "q_mean",
    "q_sd",
    "normalizer_rows",
    "normalizer_df",
    "no_normalizer",
    "weighting",
    "weight_cap",
    "trajectory_cells",
    "elicit_r",
    "elicit_targets",
    "elicit_alphas",
    "band_df",
    "band_points",
    "taus",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn optional(v: &str) -> Option<&str> {
    match v {
        "" | "none" | "off" => None,
        other => Some(other),
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => bail!("{key}: expected true or false, got {other:?}"),
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "input" => self.input = optional(v).map(PathBuf::from),
            "out_dir" => self.out_dir = optional(v).map(PathBuf::from),
            "jobs" => self.jobs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "very_early_offset" => self.policy.very_early_offset = num(key, v)?,
            "early_offset" => self.policy.early_offset = num(key, v)?,
            "late_factor" => self.policy.late_factor = num(key, v)?,
            "very_late_factor" => self.policy.very_late_factor = num(key, v)?,
            "gap_tolerance" => self.gap_tolerance = optional(v).map(|x| num(key, x)).transpose()?,
            "strict_integer_das" => self.strict_integer_das = flag(key, v)?,
            "r_df" => {
                let dfs: Vec<usize> = list(key, v)?;
                self.r_df = match dfs.as_slice() {
                    [d] => [*d; 5],
                    [a, b, c, d, e] => [*a, *b, *c, *d, *e],
                    _ => bail!(
                        "r_df takes one value or five (very_early,early,in_window,late,very_late)"
                    ),
                };
            }
            "time_df" => self.time_df = num(key, v)?,
            "time_window" => {
                self.time_window = match optional(v) {
                    None => None,
                    Some(x) => match list::<f64>(key, x)?.as_slice() {
                        [lo, hi] => Some((*lo, *hi)),
                        _ => bail!("time_window takes two values lo,hi or none"),
                    },
                }
            }
            "grid_start" => self.grid_start = num(key, v)?,
            "grid_stop" => self.grid_stop = num(key, v)?,
            "grid_step" => self.grid_step = num(key, v)?,
            "auc_timerange" => self.auc_timerange = num(key, v)?,
            "auc_increment" => self.auc_increment = num(key, v)?,
            "q_mean" => self.q_mean = num(key, v)?,
            "q_sd" => self.q_sd = num(key, v)?,
            "normalizer_rows" => {
                self.normalizer_rows = v.parse().map_err(|e| anyhow!("normalizer_rows: {e}"))?
            }
            "normalizer_df" => self.normalizer_df = num(key, v)?,
            "no_normalizer" => self.no_normalizer = flag(key, v)?,
            "weighting" => self.weighting = v.parse()?,
            "weight_cap" => self.weight_cap = optional(v).map(|x| num(key, x)).transpose()?,
            "trajectory_cells" => self.trajectory_cells = match optional(v) {
                None => Vec::new(),
                Some(x) => x
                    .split(',')
                    .map(|cell| {
                        let (e, l) = cell.trim().split_once(':').ok_or_else(|| {
                            anyhow!(
                                "trajectory_cells entries look like alpha_e:alpha_l, got {cell:?}"
                            )
                        })?;
                        Ok((num(key, e)?, num(key, l)?))
                    })
                    .collect::<Result<_>>()?,
            },
            "elicit_r" => self.elicit_r = list(key, v)?,
            "elicit_targets" => {
                self.elicit_targets = match list::<f64>(key, v)?.as_slice() {
                    [lo, hi] => (*lo, *hi),
                    _ => bail!("elicit_targets takes two values"),
                }
            }
            "elicit_alphas" => self.elicit_alphas = list(key, v)?,
            "band_df" => self.band_df = num(key, v)?,
            "band_points" => self.band_points = num(key, v)?,
            "taus" => self.taus = list(key, v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        let opt = |x: Option<f64>| x.map_or("none".to_string(), |v| v.to_string());
        Some(match key {
            "input" => path(&self.input),
            "out_dir" => path(&self.out_dir),
            "jobs" => self.jobs.to_string(),
            "seed" => self.seed.to_string(),
            "very_early_offset" => self.policy.very_early_offset.to_string(),
            "early_offset" => self.policy.early_offset.to_string(),
            "late_factor" => self.policy.late_factor.to_string(),
            "very_late_factor" => self.policy.very_late_factor.to_string(),
            "gap_tolerance" => opt(self.gap_tolerance),
            "strict_integer_das" => self.strict_integer_das.to_string(),
            "r_df" => join(&self.r_df),
            "time_df" => self.time_df.to_string(),
            "time_window" => self
                .time_window
                .map_or("none".to_string(), |(lo, hi)| format!("{lo},{hi}")),
            "grid_start" => self.grid_start.to_string(),
            "grid_stop" => self.grid_stop.to_string(),
            "grid_step" => self.grid_step.to_string(),
            "auc_timerange" => self.auc_timerange.to_string(),
            "auc_increment" => self.auc_increment.to_string(),
            "q_mean" => self.q_mean.to_string(),
            "q_sd" => self.q_sd.to_string(),
            "normalizer_rows" => self.normalizer_rows.to_string(),
            "normalizer_df" => self.normalizer_df.to_string(),
            "no_normalizer" => self.no_normalizer.to_string(),
            "weighting" => self.weighting.name().to_string(),
            "weight_cap" => opt(self.weight_cap),
            "trajectory_cells" => {
                if self.trajectory_cells.is_empty() {
                    "none".to_string()
                } else {
                    self.trajectory_cells
                        .iter()
                        .map(|(e, l)| format!("{e}:{l}"))
                        .collect::<Vec<_>>()
                        .join(",")
                }
            }
            "elicit_r" => join(&self.elicit_r),
            "elicit_targets" => format!("{},{}", self.elicit_targets.0, self.elicit_targets.1),
            "elicit_alphas" => join(&self.elicit_alphas),
            "band_df" => self.band_df.to_string(),
            "band_points" => self.band_points.to_string(),
            "taus" => join(&self.taus),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", i + 1))?;
            self.set(k.trim(), v)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {p:?}"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Effective configuration, one `key = value` line per key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if let Some(t) = self.gap_tolerance {
            if !(t >= 0.0) {
                bail!("gap_tolerance must be >= 0, got {t}");
            }
        }
        if self
            .r_df
            .iter()
            .chain([&self.time_df, &self.normalizer_df, &self.band_df])
            .any(|d| *d == 0)
        {
            bail!("basis df must be at least 1");
        }
        if let Some((lo, hi)) = self.time_window {
            if !(hi > lo) {
                bail!("time_window needs lo < hi, got {lo},{hi}");
            }
        }
        self.grid()?.validate()?;
        uniform_grid(0.0, self.auc_timerange, self.auc_increment)
            .map_err(|e| anyhow!("auc_timerange/auc_increment: {e}"))?;
        self.tilt(0.0, 0.0).validate()?;
        if let Some(c) = self.weight_cap {
            if !(c > 0.0) {
                bail!("weight_cap must be positive, got {c}");
            }
        }
        if self.elicit_r.is_empty() || self.elicit_r.iter().any(|r| !(*r > 0.0)) {
            bail!("elicit_r must list positive intervals");
        }
        let (lo, hi) = self.elicit_targets;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            bail!("elicit_targets need 0 < low <= high < 1, got {lo},{hi}");
        }
        if self
            .elicit_alphas
            .iter()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            bail!("elicit_alphas must be finite and >= 0");
        }
        if self.band_points < 2 {
            bail!("band_points must be at least 2");
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            bail!("taus must lie in (0,1)");
        }
        Ok(())
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            gap_rel_tol: self.gap_tolerance,
            strict_integer_das: self.strict_integer_das,
            study_end: None,
        }
    }

    pub fn intensity_options(&self) -> IntensityOptions {
        IntensityOptions {
            r_df: self.r_df,
            jobs: self.jobs,
            ..IntensityOptions::default()
        }
    }

    pub fn outcome_options(&self) -> OutcomeOptions {
        OutcomeOptions {
            time_df: self.time_df,
            time_window: self.time_window,
            ..OutcomeOptions::default()
        }
    }

    pub fn weight_options(&self) -> WeightOptions {
        WeightOptions {
            cap: self.weight_cap,
        }
    }

    pub fn tilt(&self, alpha_e: f64, alpha_l: f64) -> TiltConfig {
        TiltConfig {
            alpha_e,
            alpha_l,
            q_mean: self.q_mean,
            q_sd: self.q_sd,
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::uniform(self.grid_start, self.grid_stop, self.grid_step)
            .map_err(|e| anyhow!("grid_start/grid_stop/grid_step: {e}"))
    }

    pub fn band_options(&self) -> BandOptions {
        BandOptions {
            taus: self.taus.clone(),
            df: self.band_df,
            grid_points: self.band_points,
        }
    }
}
