//! Synthetic cohorts with a known marginal mean, for checking the estimators.
//!
//! Each patient has a latent activity process
//! `Y*(t) = a + b exp(-c t) + u_i + X_i(t) + F_i(t)`, where `u_i` is a random
//! intercept, `X_i` a stationary Ornstein-Uhlenbeck process and `F_i` a sum of
//! exponentially decaying flare bumps (ANAR only). The recorded value at a visit
//! adds measurement noise and is optionally rounded and clamped to the DAS range.
//! After every visit the physician rule maps the recorded value to a recommended
//! interval `R`, and the next gap is drawn according to the mechanism.
//!
//! Every patient draws from its own ChaCha streams derived from the seed and the
//! patient index, so the output does not depend on the number of worker threads.
//! Flares use a separate stream: a zero flare rate reproduces the AAR cohort.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, StandardNormal};

use crate::dataset::{Dataset, ParseOptions, VisitRecord, DAS_MAX, DAS_MIN, MONTHS_PER_YEAR};
use crate::numerics::{trapezoid_integral, uniform_grid};
use crate::parallel::map_ordered;
use crate::windows::{category_boundaries, VisitCategory, WindowPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// Gaps independent of the outcome process.
    Acar,
    /// Gaps depend on the recommended interval only.
    Aar,
    /// AAR plus flare-triggered visits.
    Anar,
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acar" => Ok(Self::Acar),
            "aar" => Ok(Self::Aar),
            "anar" => Ok(Self::Anar),
            other => Err(Error::InvalidArgument(format!(
                "unknown mechanism {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Acar => "acar",
            Self::Aar => "aar",
            Self::Anar => "anar",
        })
    }
}

/// Distribution of a scheduled gap given `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapLaw {
    /// `R exp(e)`, `e ~ N(0, adherence_sd^2)`.
    Lognormal,
    /// Constant hazard within each visit-category window, with fixed landing
    /// probabilities per category.
    Piecewise,
}

impl FromStr for GapLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lognormal" => Ok(Self::Lognormal),
            "piecewise" => Ok(Self::Piecewise),
            other => Err(Error::InvalidArgument(format!("unknown gap law {other:?}"))),
        }
    }
}

impl fmt::Display for GapLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lognormal => "lognormal",
            Self::Piecewise => "piecewise",
        })
    }
}

/// Recorded DAS to recommended interval: the first threshold the value reaches
/// picks the matching interval; below all thresholds the last interval applies.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicianRule {
    /// Strictly decreasing.
    pub thresholds: Vec<f64>,
    /// Months; one more entry than `thresholds`.
    pub intervals: Vec<f64>,
}

impl Default for PhysicianRule {
    fn default() -> Self {
        Self {
            thresholds: vec![7.0, 4.0, 2.0],
            intervals: vec![1.0, 2.0, 3.0, 6.0],
        }
    }
}

impl PhysicianRule {
    pub fn constant(interval: f64) -> Self {
        Self {
            thresholds: Vec::new(),
            intervals: vec![interval],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.len() != self.thresholds.len() + 1 {
            return Err(Error::InvalidArgument(
                "physician rule needs one more interval than thresholds".into(),
            ));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidArgument(
                "rule thresholds must be strictly decreasing".into(),
            ));
        }
        if self.intervals.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(
                "rule intervals must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn interval(&self, das: f64) -> f64 {
        self.thresholds
            .iter()
            .position(|t| das >= *t)
            .map_or(self.intervals[self.intervals.len() - 1], |k| {
                self.intervals[k]
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub mechanism: Mechanism,
    pub n_patients: usize,
    pub horizon_years: f64,
    pub mu_a: f64,
    pub mu_b: f64,
    /// Per year.
    pub mu_c: f64,
    pub between_sd: f64,
    pub ar_sd: f64,
    pub ar_scale_months: f64,
    pub noise_sd: f64,
    pub rule: PhysicianRule,
    pub gap_law: GapLaw,
    pub adherence_sd: f64,
    /// Landing probabilities for the piecewise law: very early, early, late, very late.
    pub p_very_early: f64,
    pub p_early: f64,
    pub p_late: f64,
    pub p_very_late: f64,
    /// ACAR scheduled interval, months.
    pub acar_interval: f64,
    /// Flares per patient-year.
    pub flare_rate: f64,
    pub flare_bump_min: f64,
    pub flare_bump_max: f64,
    pub flare_decay_months: f64,
    /// Mean delay from flare onset to the triggered visit, months.
    pub flare_delay_months: f64,
    pub round: bool,
    pub clamp: bool,
    pub seed: u64,
    /// Monte Carlo draws per truth grid point.
    pub truth_draws: usize,
    /// Truth grid step, years.
    pub truth_step: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Aar,
            n_patients: 500,
            horizon_years: 7.0,
            mu_a: 1.0,
            mu_b: 6.0,
            mu_c: 1.2,
            between_sd: 0.4,
            ar_sd: 0.7,
            ar_scale_months: 3.0,
            noise_sd: 0.3,
            rule: PhysicianRule::default(),
            gap_law: GapLaw::Piecewise,
            adherence_sd: 0.15,
            p_very_early: 0.12,
            p_early: 0.06,
            p_late: 0.06,
            p_very_late: 0.06,
            acar_interval: 3.0,
            flare_rate: 0.0,
            flare_bump_min: 3.0,
            flare_bump_max: 6.0,
            flare_decay_months: 1.5,
            flare_delay_months: 0.25,
            round: false,
            clamp: true,
            seed: 1,
            truth_draws: 100_000,
            truth_step: 0.035,
        }
    }
}

const SPEC_KEYS: [&str; 29] = [
    "mechanism",
    "n_patients",
    "horizon_years",
    "mu_a",
    "mu_b",
    "mu_c",
    "between_sd",
    "ar_sd",
    "ar_scale_months",
    "noise_sd",
    "rule_thresholds",
    "rule_intervals",
    "gap_law",
    "adherence_sd",
    "p_very_early",
    "p_early",
    "p_late",
    "p_very_late",
    "acar_interval",
    "flare_rate",
    "flare_bump_min",
    "flare_bump_max",
    "flare_decay_months",
    "flare_delay_months",
    "round",
    "clamp",
    "seed",
    "truth_draws",
    "truth_step",
];

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))
        })
        .collect()
}

fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidArgument(format!("not a boolean: {other:?}"))),
    }
}

impl ScenarioSpec {
    /// AAR defaults plus flares.
    pub fn anar() -> Self {
        Self {
            mechanism: Mechanism::Anar,
            flare_rate: 1.0,
            ..Self::default()
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{key}: not a number: {v:?}")))
        };
        let int = |v: &str| -> Result<u64> {
            v.parse::<u64>().map_err(|_| {
                Error::InvalidArgument(format!("{key}: not a non-negative integer: {v:?}"))
            })
        };
        match key {
            "mechanism" => self.mechanism = value.parse()?,
            "n_patients" => self.n_patients = int(value)? as usize,
            "horizon_years" => self.horizon_years = num(value)?,
            "mu_a" => self.mu_a = num(value)?,
            "mu_b" => self.mu_b = num(value)?,
            "mu_c" => self.mu_c = num(value)?,
            "between_sd" => self.between_sd = num(value)?,
            "ar_sd" => self.ar_sd = num(value)?,
            "ar_scale_months" => self.ar_scale_months = num(value)?,
            "noise_sd" => self.noise_sd = num(value)?,
            "rule_thresholds" => self.rule.thresholds = parse_list(value)?,
            "rule_intervals" => self.rule.intervals = parse_list(value)?,
            "gap_law" => self.gap_law = value.parse()?,
            "adherence_sd" => self.adherence_sd = num(value)?,
            "p_very_early" => self.p_very_early = num(value)?,
            "p_early" => self.p_early = num(value)?,
            "p_late" => self.p_late = num(value)?,
            "p_very_late" => self.p_very_late = num(value)?,
            "acar_interval" => self.acar_interval = num(value)?,
            "flare_rate" => self.flare_rate = num(value)?,
            "flare_bump_min" => self.flare_bump_min = num(value)?,
            "flare_bump_max" => self.flare_bump_max = num(value)?,
            "flare_decay_months" => self.flare_decay_months = num(value)?,
            "flare_delay_months" => self.flare_delay_months = num(value)?,
            "round" => self.round = parse_bool(value)?,
            "clamp" => self.clamp = parse_bool(value)?,
            "seed" => self.seed = int(value)?,
            "truth_draws" => self.truth_draws = int(value)? as usize,
            "truth_step" => self.truth_step = num(value)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scenario key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mechanism" => self.mechanism.to_string(),
            "n_patients" => self.n_patients.to_string(),
            "horizon_years" => self.horizon_years.to_string(),
            "mu_a" => self.mu_a.to_string(),
            "mu_b" => self.mu_b.to_string(),
            "mu_c" => self.mu_c.to_string(),
            "between_sd" => self.between_sd.to_string(),
            "ar_sd" => self.ar_sd.to_string(),
            "ar_scale_months" => self.ar_scale_months.to_string(),
            "noise_sd" => self.noise_sd.to_string(),
            "rule_thresholds" => join(&self.rule.thresholds),
            "rule_intervals" => join(&self.rule.intervals),
            "gap_law" => self.gap_law.to_string(),
            "adherence_sd" => self.adherence_sd.to_string(),
            "p_very_early" => self.p_very_early.to_string(),
            "p_early" => self.p_early.to_string(),
            "p_late" => self.p_late.to_string(),
            "p_very_late" => self.p_very_late.to_string(),
            "acar_interval" => self.acar_interval.to_string(),
            "flare_rate" => self.flare_rate.to_string(),
            "flare_bump_min" => self.flare_bump_min.to_string(),
            "flare_bump_max" => self.flare_bump_max.to_string(),
            "flare_decay_months" => self.flare_decay_months.to_string(),
            "flare_delay_months" => self.flare_delay_months.to_string(),
            "round" => self.round.to_string(),
            "clamp" => self.clamp.to_string(),
            "seed" => self.seed.to_string(),
            "truth_draws" => self.truth_draws.to_string(),
            "truth_step" => self.truth_step.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            spec.set(k.trim(), v).map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Every key in a fixed order; `parse` reads it back unchanged.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for k in SPEC_KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon_years", self.horizon_years),
            ("mu_c", self.mu_c),
            ("ar_scale_months", self.ar_scale_months),
            ("acar_interval", self.acar_interval),
            ("flare_decay_months", self.flare_decay_months),
            ("flare_delay_months", self.flare_delay_months),
            ("truth_step", self.truth_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("between_sd", self.between_sd),
            ("ar_sd", self.ar_sd),
            ("noise_sd", self.noise_sd),
            ("adherence_sd", self.adherence_sd),
            ("flare_rate", self.flare_rate),
            ("flare_bump_min", self.flare_bump_min),
            ("p_very_early", self.p_very_early),
            ("p_early", self.p_early),
            ("p_late", self.p_late),
            ("p_very_late", self.p_very_late),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if self.flare_bump_max < self.flare_bump_min {
            return Err(Error::InvalidArgument(
                "flare_bump_max must be >= flare_bump_min".into(),
            ));
        }
        if self.p_very_early + self.p_early + self.p_late + self.p_very_late >= 1.0 {
            return Err(Error::InvalidArgument(
                "out-of-window landing probabilities must sum to less than 1".into(),
            ));
        }
        if self.n_patients == 0 {
            return Err(Error::InvalidArgument("n_patients must be positive".into()));
        }
        if self.truth_draws == 0 {
            return Err(Error::InvalidArgument(
                "truth_draws must be positive".into(),
            ));
        }
        self.rule.validate()
    }

    /// Mean of the latent process without flares, `a + b exp(-c t)`.
    pub fn mu(&self, t: f64) -> f64 {
        self.mu_a + self.mu_b * (-self.mu_c * t).exp()
    }

    fn flares_on(&self) -> bool {
        self.mechanism == Mechanism::Anar && self.flare_rate > 0.0
    }

    /// Mean flare contribution at time `t` (years).
    pub fn flare_mean(&self, t: f64) -> f64 {
        if !self.flares_on() {
            return 0.0;
        }
        let theta = self.flare_decay_months / MONTHS_PER_YEAR;
        let bump = 0.5 * (self.flare_bump_min + self.flare_bump_max);
        self.flare_rate * bump * theta * (1.0 - (-t / theta).exp())
    }
}

/// Hazards (per month) of the piecewise law for one recommended interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseHazard {
    /// `(start, end, hazard)` in gap order; the last window is unbounded.
    pub pieces: Vec<(f64, f64, f64)>,
}

impl PiecewiseHazard {
    pub fn new(r: f64, spec: &ScenarioSpec, policy: &WindowPolicy) -> Result<Self> {
        let b = category_boundaries(r, policy)?;
        let mut probs = [
            spec.p_very_early,
            spec.p_early,
            0.0,
            spec.p_late,
            spec.p_very_late,
        ];
        // an empty very-early window passes its mass to the early window
        if b.get(VisitCategory::VeryEarly).is_none() {
            probs[1] += probs[0];
            probs[0] = 0.0;
        }
        probs[2] = 1.0 - probs.iter().sum::<f64>();
        let mut surv = 1.0f64;
        let mut pieces = Vec::new();
        for c in VisitCategory::ALL {
            let Some(w) = b.get(c) else { continue };
            let p = probs[c.index()];
            let hazard = if c == VisitCategory::VeryLate {
                // exponential tail with mean R / 2
                2.0 / r
            } else {
                let next = surv - p;
                let h = (surv / next).ln() / w.length();
                surv = next;
                h
            };
            pieces.push((w.lo, w.hi, hazard));
        }
        Ok(Self { pieces })
    }

    /// Inverse-CDF draw from a unit exponential `e`.
    pub fn sample(&self, mut e: f64) -> f64 {
        for &(lo, hi, h) in &self.pieces {
            let len = hi - lo;
            if h * len >= e || !len.is_finite() {
                return lo + e / h;
            }
            e -= h * len;
        }
        unreachable!("last piece is unbounded")
    }
}

/// Simulated dataset plus the truth trajectory.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub time: Vec<f64>,
    pub mean: Vec<f64>,
    /// Monte Carlo standard error; zero for closed-form truth.
    pub se: Vec<f64>,
    pub auc: f64,
    pub auc_se: f64,
}

impl Truth {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,mean_das,se\n");
        for i in 0..self.time.len() {
            let _ = writeln!(out, "{},{},{}", self.time[i], self.mean[i], self.se[i]);
        }
        out
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Flare {
    onset: f64,
    bump: f64,
    trigger: f64,
}

fn draw_flares(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<Flare> {
    let mut flares = Vec::new();
    if !spec.flares_on() {
        return flares;
    }
    let inter = Exp::new(spec.flare_rate).expect("positive rate");
    let delay = Exp::new(1.0 / spec.flare_delay_months).expect("positive delay");
    let mut t = 0.0;
    loop {
        t += inter.sample(rng);
        if t >= spec.horizon_years {
            return flares;
        }
        let bump = rng.random_range(spec.flare_bump_min..=spec.flare_bump_max);
        let trigger = t + delay.sample(rng) / MONTHS_PER_YEAR;
        flares.push(Flare {
            onset: t,
            bump,
            trigger,
        });
    }
}

fn record(spec: &ScenarioSpec, y: f64) -> f64 {
    let mut v = if spec.round { y.round() } else { y };
    if spec.clamp {
        v = v.clamp(DAS_MIN, DAS_MAX);
    }
    v
}

fn simulate_patient(spec: &ScenarioSpec, index: usize, policy: &WindowPolicy) -> Vec<VisitRecord> {
    let mut rng = stream(spec.seed, 2 * index as u64);
    let mut flare_rng = stream(spec.seed, 2 * index as u64 + 1);
    let flares = draw_flares(spec, &mut flare_rng);
    let id = format!("P{:04}", index + 1);
    let normal = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    };
    let u = normal(&mut rng, spec.between_sd);
    let tau = spec.ar_scale_months / MONTHS_PER_YEAR;
    let theta = spec.flare_decay_months / MONTHS_PER_YEAR;
    let mut ar = normal(&mut rng, spec.ar_sd);
    let mut t = 0.0f64;
    let mut out = Vec::new();
    loop {
        let flare_level: f64 = flares
            .iter()
            .filter(|f| f.onset <= t)
            .map(|f| f.bump * (-(t - f.onset) / theta).exp())
            .sum();
        let y = spec.mu(t) + u + ar + flare_level + normal(&mut rng, spec.noise_sd);
        let das = record(spec, y);
        let r = spec.rule.interval(das);
        let scheduled_gap = match (spec.mechanism, spec.gap_law) {
            (Mechanism::Acar, _) => spec.acar_interval * normal(&mut rng, spec.adherence_sd).exp(),
            (_, GapLaw::Lognormal) => r * normal(&mut rng, spec.adherence_sd).exp(),
            (_, GapLaw::Piecewise) => {
                let e: f64 = rand_distr::Exp1.sample(&mut rng);
                PiecewiseHazard::new(r, spec, policy)
                    .expect("validated policy")
                    .sample(e)
            }
        };
        let mut next = t + scheduled_gap / MONTHS_PER_YEAR;
        if let Some(f) = flares
            .iter()
            .filter(|f| f.onset > t && f.trigger < next)
            .min_by(|a, b| a.trigger.total_cmp(&b.trigger))
        {
            next = f.trigger;
        }
        let line = out.len() as u64 + 2;
        if next >= spec.horizon_years {
            out.push(VisitRecord {
                patient_id: id.clone(),
                calendar_date: None,
                time_since_dx: t,
                das: Some(das),
                gap: Some((spec.horizon_years - t) * MONTHS_PER_YEAR),
                censored: true,
                rec_interval: Some(r),
                line,
            });
            return out;
        }
        out.push(VisitRecord {
            patient_id: id.clone(),
            calendar_date: None,
            time_since_dx: t,
            das: Some(das),
            gap: Some((next - t) * MONTHS_PER_YEAR),
            censored: false,
            rec_interval: Some(r),
            line,
        });
        let decay = (-(next - t) / tau).exp();
        ar = ar * decay + normal(&mut rng, spec.ar_sd * (1.0 - decay * decay).sqrt());
        t = next;
    }
}

/// Simulates the cohort and its truth trajectory.
pub fn simulate(spec: &ScenarioSpec, jobs: usize) -> Result<SimOutput> {
    spec.validate()?;
    let policy = WindowPolicy::default();
    let indices: Vec<usize> = (0..spec.n_patients).collect();
    let patients = map_ordered(jobs, &indices, |&i| simulate_patient(spec, i, &policy));
    let records: Vec<VisitRecord> = patients.into_iter().flatten().collect();
    let opts = ParseOptions {
        gap_rel_tol: Some(1e-9),
        ..ParseOptions::default()
    };
    let dataset = Dataset::from_records(records, &opts)?;
    let time = uniform_grid(0.0, spec.horizon_years, spec.truth_step)?;
    let truth = true_mean(spec, &time, jobs)?;
    Ok(SimOutput { dataset, truth })
}

/// Marginal mean of the recorded outcome on `time` (years). Closed form when
/// neither rounding nor clamping applies, otherwise Monte Carlo.
pub fn true_mean(spec: &ScenarioSpec, time: &[f64], jobs: usize) -> Result<Truth> {
    spec.validate()?;
    let (mean, se): (Vec<f64>, Vec<f64>) = if !spec.round && !spec.clamp {
        time.iter()
            .map(|&t| (spec.mu(t) + spec.flare_mean(t), 0.0))
            .unzip()
    } else {
        let idx: Vec<usize> = (0..time.len()).collect();
        map_ordered(jobs, &idx, |&i| monte_carlo_point(spec, time[i], i))
            .into_iter()
            .unzip()
    };
    let (auc, auc_se) = if time.len() >= 2 {
        let dx = time[1] - time[0];
        let auc = trapezoid_integral(&mean, dx)?;
        // points are independent, so the variances add with trapezoid weights
        let var: f64 = se
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let w = if i == 0 || i + 1 == se.len() {
                    0.5 * dx
                } else {
                    dx
                };
                (w * s).powi(2)
            })
            .sum();
        (auc, var.sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(Truth {
        time: time.to_vec(),
        mean,
        se,
        auc,
        auc_se,
    })
}

fn monte_carlo_point(spec: &ScenarioSpec, t: f64, index: usize) -> (f64, f64) {
    // streams disjoint from the patient streams
    let mut rng = stream(spec.seed ^ 0x9e37_79b9_7f4a_7c15, index as u64);
    let sd = (spec.between_sd.powi(2) + spec.ar_sd.powi(2) + spec.noise_sd.powi(2)).sqrt();
    let gauss = Normal::new(spec.mu(t), sd).expect("finite sd");
    let theta = spec.flare_decay_months / MONTHS_PER_YEAR;
    let poisson = (spec.flares_on() && t > 0.0)
        .then(|| Poisson::new(spec.flare_rate * t).expect("positive mean"));
    let n = spec.truth_draws;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let mut y = gauss.sample(&mut rng);
        if let Some(p) = &poisson {
            let k = p.sample(&mut rng) as usize;
            for _ in 0..k {
                let onset = rng.random_range(0.0..t);
                let bump = rng.random_range(spec.flare_bump_min..=spec.flare_bump_max);
                y += bump * (-(t - onset) / theta).exp();
            }
        }
        let v = record(spec, y);
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}
