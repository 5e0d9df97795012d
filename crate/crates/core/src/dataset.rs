//! Visit-level data model, CSV ingestion and derived per-visit quantities.
//!
//! Times since diagnosis are in years; every interval (observed gap `S`,
//! recommended interval `R`) is in months.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::{Error, Result};

pub const WEEKS_PER_MONTH: f64 = 4.345;
pub const DAYS_PER_MONTH: f64 = 30.417;
pub const MONTHS_PER_YEAR: f64 = 12.0;

/// Column order of the input and output CSV.
pub const CSV_HEADER: [&str; 7] = ["id", "date", "time_since_dx", "DAS", "S", "censor", "R"];

pub const DAS_MIN: f64 = 0.0;
pub const DAS_MAX: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalUnit {
    Days,
    Weeks,
    Months,
}

impl FromStr for IntervalUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" | "day" | "days" => Ok(Self::Days),
            "w" | "week" | "weeks" => Ok(Self::Weeks),
            "m" | "month" | "months" => Ok(Self::Months),
            other => Err(Error::InvalidArgument(format!(
                "unknown interval unit {other:?}"
            ))),
        }
    }
}

/// Converts an interval to months (4.345 weeks or 30.417 days per month).
pub fn convert_interval(value: f64, unit: IntervalUnit) -> Result<f64> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "interval must be a non-negative number, got {value}"
        )));
    }
    Ok(match unit {
        IntervalUnit::Days => value / DAYS_PER_MONTH,
        IntervalUnit::Weeks => value / WEEKS_PER_MONTH,
        IntervalUnit::Months => value,
    })
}

/// One clinic visit.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRow {
    pub patient_id: String,
    /// 0-based position within the patient.
    pub visit_index: usize,
    pub calendar_date: Option<NaiveDate>,
    /// Years since diagnosis.
    pub time_since_dx: f64,
    pub das: Option<f64>,
    /// Months to the next visit, or to the end of follow-up when `censored`.
    pub gap_forward: Option<f64>,
    pub censored: bool,
    /// Recommended interval (months) assigned at this visit.
    pub rec_interval: Option<f64>,
    /// Outcome change to the next visit.
    pub das_diff_forward: Option<f64>,
    /// Positive part of `das_diff_forward`.
    pub das_increase_forward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: String,
    pub rows: Vec<VisitRow>,
}

/// Visits grouped by patient, immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub patients: Vec<Patient>,
    /// End of the study period in years since diagnosis, if known.
    pub study_end: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Relative tolerance between a supplied `S` and the gap implied by
    /// consecutive times; `None` skips the check.
    pub gap_rel_tol: Option<f64>,
    /// Reject non-integer DAS values.
    pub strict_integer_das: bool,
    /// Used to fill the exposure of a censored final row that has no `S`.
    pub study_end: Option<f64>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            gap_rel_tol: Some(1e-6),
            strict_integer_das: false,
            study_end: None,
        }
    }
}

/// One visit as read from a file or produced by the simulator, before
/// validation.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub patient_id: String,
    pub calendar_date: Option<NaiveDate>,
    pub time_since_dx: f64,
    pub das: Option<f64>,
    pub gap: Option<f64>,
    pub censored: bool,
    pub rec_interval: Option<f64>,
    /// Source line (1-based, header is line 1), 0 when not from a file.
    pub line: u64,
}

/// A gap between a visit and the next one (or the end of follow-up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRef<'a> {
    pub patient: usize,
    pub row: usize,
    pub visit: &'a VisitRow,
}

impl GapRef<'_> {
    pub fn exposure(&self) -> f64 {
        self.visit
            .gap_forward
            .expect("gaps always carry an exposure")
    }
}

impl Dataset {
    /// Groups, validates and derives forward differences.
    pub fn from_records(records: Vec<VisitRecord>, opts: &ParseOptions) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<VisitRecord>> = HashMap::new();
        for rec in records {
            validate_record(&rec, opts)?;
            if !groups.contains_key(&rec.patient_id) {
                order.push(rec.patient_id.clone());
            }
            groups.entry(rec.patient_id.clone()).or_default().push(rec);
        }
        let mut patients = Vec::with_capacity(order.len());
        for id in order {
            let recs = groups.remove(&id).expect("grouped above");
            patients.push(build_patient(id, recs, opts)?);
        }
        Ok(Dataset {
            patients,
            study_end: opts.study_end,
        }
        .derive_diffs())
    }

    /// Fills `das_diff_forward` and `das_increase_forward`. Idempotent.
    pub fn derive_diffs(mut self) -> Self {
        for p in &mut self.patients {
            let n = p.rows.len();
            for j in 0..n {
                let next = if j + 1 < n { p.rows[j + 1].das } else { None };
                let diff = match (p.rows[j].das, next) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                };
                p.rows[j].das_diff_forward = diff;
                p.rows[j].das_increase_forward = diff.map(|d| d.max(0.0));
            }
        }
        self
    }

    pub fn n_visits(&self) -> usize {
        self.patients.iter().map(|p| p.rows.len()).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &VisitRow> {
        self.patients.iter().flat_map(|p| p.rows.iter())
    }

    /// Every row with a forward exposure, in patient/visit order.
    pub fn gaps(&self) -> impl Iterator<Item = GapRef<'_>> {
        self.patients.iter().enumerate().flat_map(|(pi, p)| {
            p.rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.gap_forward.is_some())
                .map(move |(ri, visit)| GapRef {
                    patient: pi,
                    row: ri,
                    visit,
                })
        })
    }

    /// Serializes the non-derived fields in the input CSV layout.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.patient_id,
                r.calendar_date.map(|d| d.to_string()).unwrap_or_default(),
                r.time_since_dx,
                fmt_opt(r.das),
                fmt_opt(r.gap_forward),
                u8::from(r.censored),
                fmt_opt(r.rec_interval),
            );
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn validate_record(rec: &VisitRecord, opts: &ParseOptions) -> Result<()> {
    let err = |message: String| Error::Parse {
        line: rec.line,
        message,
    };
    if rec.patient_id.is_empty() {
        return Err(err("empty patient id".into()));
    }
    if !(rec.time_since_dx >= 0.0) || !rec.time_since_dx.is_finite() {
        return Err(err(format!(
            "time_since_dx must be non-negative, got {}",
            rec.time_since_dx
        )));
    }
    if let Some(d) = rec.das {
        if !(DAS_MIN..=DAS_MAX).contains(&d) {
            return Err(err(format!("DAS {d} outside [{DAS_MIN}, {DAS_MAX}]")));
        }
        if opts.strict_integer_das && d.fract() != 0.0 {
            return Err(err(format!("DAS {d} is not an integer")));
        }
    }
    if let Some(s) = rec.gap {
        if !(s > 0.0) || !s.is_finite() {
            return Err(err(format!("S must be positive, got {s}")));
        }
    }
    if let Some(r) = rec.rec_interval {
        if !(r > 0.0) || !r.is_finite() {
            return Err(err(format!("R must be positive, got {r}")));
        }
    }
    Ok(())
}

fn build_patient(id: String, recs: Vec<VisitRecord>, opts: &ParseOptions) -> Result<Patient> {
    let n = recs.len();
    let verr = |message: String| Error::Validation {
        patient: id.clone(),
        message,
    };
    for w in recs.windows(2) {
        if !(w[1].time_since_dx > w[0].time_since_dx) {
            return Err(verr(format!(
                "time_since_dx not strictly increasing at line {} ({} after {})",
                w[1].line, w[1].time_since_dx, w[0].time_since_dx
            )));
        }
    }
    let mut rows = Vec::with_capacity(n);
    for (j, rec) in recs.iter().enumerate() {
        let last = j + 1 == n;
        if rec.censored && !last {
            return Err(verr(format!(
                "censor=1 on line {} which is not the patient's final visit",
                rec.line
            )));
        }
        let gap_forward = if !last {
            let derived = (recs[j + 1].time_since_dx - rec.time_since_dx) * MONTHS_PER_YEAR;
            match rec.gap {
                Some(s) => {
                    if let Some(tol) = opts.gap_rel_tol {
                        if (s - derived).abs() > tol * derived.abs() {
                            return Err(verr(format!(
                                "S={s} on line {} disagrees with the time to the next visit ({derived:.6} months)",
                                rec.line
                            )));
                        }
                    }
                    Some(s)
                }
                None => Some(derived),
            }
        } else if rec.censored {
            match (rec.gap, opts.study_end) {
                (Some(s), _) => Some(s),
                (None, Some(end)) if end > rec.time_since_dx => {
                    Some((end - rec.time_since_dx) * MONTHS_PER_YEAR)
                }
                _ => {
                    return Err(verr(format!(
                        "censored final visit on line {} has no S and no usable study end",
                        rec.line
                    )))
                }
            }
        } else {
            if rec.gap.is_some() {
                return Err(verr(format!(
                    "final visit on line {} has S but censor=0; an uncensored final gap needs the next visit",
                    rec.line
                )));
            }
            None
        };
        rows.push(VisitRow {
            patient_id: id.clone(),
            visit_index: j,
            calendar_date: rec.calendar_date,
            time_since_dx: rec.time_since_dx,
            das: rec.das,
            gap_forward,
            censored: rec.censored,
            rec_interval: rec.rec_interval,
            das_diff_forward: None,
            das_increase_forward: None,
        });
    }
    Ok(Patient { id, rows })
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "NA"
}

fn parse_opt_f64(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if is_missing(field) {
        return Ok(None);
    }
    field
        .trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse {
            line,
            message: format!("column {name}: cannot parse {field:?} as a number"),
        })
}

/// Parses the visit CSV (`id,date,time_since_dx,DAS,S,censor,R`).
pub fn parse_dataset(csv_text: &str, opts: &ParseOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 7];
    for (k, name) in CSV_HEADER.iter().enumerate() {
        col[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!(
                    "missing column {name:?} (expected header {})",
                    CSV_HEADER.join(",")
                ),
            })?;
    }
    let mut records = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let perr = |message: String| Error::Parse { line, message };

        let patient_id = field(0).to_string();
        let calendar_date = if is_missing(field(1)) {
            None
        } else {
            Some(
                NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
                    .map_err(|e| perr(format!("bad date {:?}: {e}", field(1))))?,
            )
        };
        let time_since_dx = parse_opt_f64(field(2), "time_since_dx", line)?
            .ok_or_else(|| perr("time_since_dx is required".into()))?;
        let das = parse_opt_f64(field(3), "DAS", line)?;
        let gap = parse_opt_f64(field(4), "S", line)?;
        let censored = match field(5) {
            "0" => false,
            "1" => true,
            other => return Err(perr(format!("censor must be 0 or 1, got {other:?}"))),
        };
        let rec_interval = parse_opt_f64(field(6), "R", line)?;
        records.push(VisitRecord {
            patient_id,
            calendar_date,
            time_since_dx,
            das,
            gap,
            censored,
            rec_interval,
            line,
        });
    }
    Dataset::from_records(records, opts)
}

pub fn read_dataset(path: &std::path::Path, opts: &ParseOptions) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, opts)
}
