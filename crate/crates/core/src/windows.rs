//! Visit categories relative to the recommended interval, and the split of each
//! gap into time at risk per category.
//!
//! On the gap-time axis `g` (months since the previous visit) with recommended
//! interval `R`:
//!
//! ```text
//! very early   0          <= g <  R - 1
//! early        max(R-1,0) <= g <  R - 0.5
//! in-window    otherwise (max(R-0.5,0) <= g <= 1.5R)
//! late         1.5R       <  g <= 2R
//! very late    2R         <  g
//! ```

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitCategory {
    VeryEarly,
    Early,
    InWindow,
    Late,
    VeryLate,
}

impl VisitCategory {
    /// In gap-time order.
    pub const ALL: [VisitCategory; 5] = [
        VisitCategory::VeryEarly,
        VisitCategory::Early,
        VisitCategory::InWindow,
        VisitCategory::Late,
        VisitCategory::VeryLate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            VisitCategory::VeryEarly => "very_early",
            VisitCategory::Early => "early",
            VisitCategory::InWindow => "in_window",
            VisitCategory::Late => "late",
            VisitCategory::VeryLate => "very_late",
        }
    }

    pub fn is_early_side(self) -> bool {
        matches!(self, VisitCategory::VeryEarly | VisitCategory::Early)
    }

    pub fn is_late_side(self) -> bool {
        matches!(self, VisitCategory::Late | VisitCategory::VeryLate)
    }
}

impl fmt::Display for VisitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VisitCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VisitCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown visit category {s:?}")))
    }
}

/// Window thresholds. Offsets are in months; factors multiply `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPolicy {
    pub very_early_offset: f64,
    pub early_offset: f64,
    pub late_factor: f64,
    pub very_late_factor: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            very_early_offset: 1.0,
            early_offset: 0.5,
            late_factor: 1.5,
            very_late_factor: 2.0,
        }
    }
}

impl WindowPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.early_offset
            && self.early_offset < self.very_early_offset
            && 1.0 < self.late_factor
            && self.late_factor < self.very_late_factor;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "window policy needs 0 < early_offset < very_early_offset and 1 < late_factor < very_late_factor, got {self:?}"
            )))
        }
    }
}

/// An interval on the gap-time axis with explicit end inclusivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Window {
    pub fn contains(&self, g: f64) -> bool {
        let above = if self.lo_closed {
            g >= self.lo
        } else {
            g > self.lo
        };
        let below = if self.hi_closed {
            g <= self.hi
        } else {
            g < self.hi
        };
        above && below
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Length of the overlap with `[0, g]`.
    pub fn overlap(&self, g: f64) -> f64 {
        (g.min(self.hi) - self.lo).max(0.0)
    }
}

/// Category windows for one recommended interval; empty windows are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryBoundaries {
    pub windows: [Option<Window>; 5],
}

impl CategoryBoundaries {
    pub fn get(&self, c: VisitCategory) -> Option<Window> {
        self.windows[c.index()]
    }
}

fn window(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Option<Window> {
    let empty = if lo_closed && hi_closed {
        hi < lo
    } else {
        hi <= lo
    };
    (!empty).then_some(Window {
        lo,
        hi,
        lo_closed,
        hi_closed,
    })
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "recommended interval must be positive, got {r}"
        )))
    }
}

pub fn category_boundaries(r: f64, policy: &WindowPolicy) -> Result<CategoryBoundaries> {
    check_r(r)?;
    let ve_end = r - policy.very_early_offset;
    let e_end = r - policy.early_offset;
    let late_start = policy.late_factor * r;
    let vl_start = policy.very_late_factor * r;
    Ok(CategoryBoundaries {
        windows: [
            window(0.0, ve_end, true, false),
            window(ve_end.max(0.0), e_end, true, false),
            window(e_end.max(0.0), late_start, true, true),
            window(late_start, vl_start, false, true),
            window(vl_start, f64::INFINITY, false, false),
        ],
    })
}

/// Category of a visit that arrives `g` months after the previous one.
pub fn classify_gap(g: f64, r: f64, policy: &WindowPolicy) -> Result<VisitCategory> {
    check_r(r)?;
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gap must be positive, got {g}"
        )));
    }
    // the in-text inequalities, in order; in-window is the remainder
    Ok(if g < r - policy.very_early_offset {
        VisitCategory::VeryEarly
    } else if g < r - policy.early_offset {
        VisitCategory::Early
    } else if g > policy.very_late_factor * r {
        VisitCategory::VeryLate
    } else if g > policy.late_factor * r {
        VisitCategory::Late
    } else {
        VisitCategory::InWindow
    })
}

/// Time at risk per category over one gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskDecomposition {
    /// Strictly positive durations (months); `None` where the gap spends no time.
    pub durations: [Option<f64>; 5],
    /// Category where the visit landed; `None` for a censored gap.
    pub event_category: Option<VisitCategory>,
    /// False when the recommended interval is missing.
    pub valid: bool,
}

impl RiskDecomposition {
    pub fn invalid() -> Self {
        Self {
            durations: [None; 5],
            event_category: None,
            valid: false,
        }
    }

    pub fn duration(&self, c: VisitCategory) -> Option<f64> {
        self.durations[c.index()]
    }

    pub fn total(&self) -> f64 {
        self.durations.iter().flatten().sum()
    }
}

/// Splits `[0, exposure]` across the category windows for recommended interval `r`.
pub fn decompose_risk(
    exposure: f64,
    r: Option<f64>,
    censored: bool,
    policy: &WindowPolicy,
) -> Result<RiskDecomposition> {
    let Some(r) = r else {
        return Ok(RiskDecomposition::invalid());
    };
    if !(exposure > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "exposure must be positive, got {exposure}"
        )));
    }
    let bounds = category_boundaries(r, policy)?;
    let mut durations = [None; 5];
    for c in VisitCategory::ALL {
        if let Some(w) = bounds.get(c) {
            let d = w.overlap(exposure);
            if d > 0.0 {
                durations[c.index()] = Some(d);
            }
        }
    }
    let event_category = if censored {
        None
    } else {
        Some(classify_gap(exposure, r, policy)?)
    };
    Ok(RiskDecomposition {
        durations,
        event_category,
        valid: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use VisitCategory::*;

    fn p() -> WindowPolicy {
        WindowPolicy::default()
    }

    fn assert_window(w: Option<Window>, lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) {
        let w = w.expect("window present");
        let close = |a: f64, b: f64| a == b || (a - b).abs() < 1e-12;
        assert!(close(w.lo, lo) && close(w.hi, hi), "{w:?}");
        assert_eq!((w.lo_closed, w.hi_closed), (lo_closed, hi_closed));
    }

    #[test]
    fn boundaries_for_two_months() {
        let b = category_boundaries(2.0, &p()).unwrap();
        assert_window(b.get(VeryEarly), 0.0, 1.0, true, false);
        assert_window(b.get(Early), 1.0, 1.5, true, false);
        assert_window(b.get(InWindow), 1.5, 3.0, true, true);
        assert_window(b.get(Late), 3.0, 4.0, false, true);
        assert_window(b.get(VeryLate), 4.0, f64::INFINITY, false, false);
    }

    #[test]
    fn boundaries_for_two_weeks() {
        let b = category_boundaries(0.460, &p()).unwrap();
        assert!(b.get(VeryEarly).is_none());
        assert!(b.get(Early).is_none());
        assert_window(b.get(InWindow), 0.0, 0.69, true, true);
        assert_window(b.get(Late), 0.69, 0.92, false, true);
    }

    #[test]
    fn boundaries_for_one_month() {
        let b = category_boundaries(1.0, &p()).unwrap();
        assert!(b.get(VeryEarly).is_none());
        assert_window(b.get(Early), 0.0, 0.5, true, false);
        assert!(category_boundaries(0.0, &p()).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_gap(1.38, 2.0, &p()).unwrap(), Early);
        assert_eq!(classify_gap(4.60, 2.0, &p()).unwrap(), VeryLate);
        assert_eq!(classify_gap(3.0, 2.0, &p()).unwrap(), InWindow);
        assert_eq!(classify_gap(4.0, 2.0, &p()).unwrap(), Late);
        assert_eq!(classify_gap(1.0, 2.0, &p()).unwrap(), Early);
        assert_eq!(classify_gap(1.5, 2.0, &p()).unwrap(), InWindow);
        for r in [0.2, 0.46, 1.0, 2.0, 6.0, 14.0] {
            assert_eq!(classify_gap(r, r, &p()).unwrap(), InWindow);
        }
        assert!(classify_gap(0.0, 2.0, &p()).is_err());
    }

    fn assert_durations(d: &RiskDecomposition, expected: [Option<f64>; 5]) {
        for (got, want) in d.durations.iter().zip(expected) {
            match (got, want) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{d:?}"),
                (None, None) => {}
                _ => panic!("{d:?} vs {expected:?}"),
            }
        }
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose_risk(2.30, Some(2.0), false, &p()).unwrap();
        assert_durations(&d, [Some(1.0), Some(0.5), Some(0.8), None, None]);
        assert_eq!(d.event_category, Some(InWindow));

        let d = decompose_risk(4.60, Some(2.0), false, &p()).unwrap();
        assert_durations(&d, [Some(1.0), Some(0.5), Some(1.5), Some(1.0), Some(0.6)]);
        assert_eq!(d.event_category, Some(VeryLate));

        let d = decompose_risk(0.690, Some(0.460), false, &p()).unwrap();
        assert_durations(&d, [None, None, Some(0.690), None, None]);
        assert_eq!(d.event_category, Some(InWindow));

        let d = decompose_risk(3.0, Some(2.0), true, &p()).unwrap();
        assert_durations(&d, [Some(1.0), Some(0.5), Some(1.5), None, None]);
        assert_eq!(d.event_category, None);

        let d = decompose_risk(1.0, None, false, &p()).unwrap();
        assert!(!d.valid);
        assert_eq!(d.durations, [None; 5]);
    }

    proptest! {
        #[test]
        fn exactly_one_window_contains_each_gap(g in 1e-6f64..60.0, r in 0.05f64..15.0) {
            let b = category_boundaries(r, &p()).unwrap();
            let hits: Vec<VisitCategory> = VisitCategory::ALL
                .into_iter()
                .filter(|c| b.get(*c).is_some_and(|w| w.contains(g)))
                .collect();
            prop_assert_eq!(hits.len(), 1);
            prop_assert_eq!(hits[0], classify_gap(g, r, &p()).unwrap());
        }

        #[test]
        fn decomposition_conserves_and_traverses_in_order(g in 1e-6f64..60.0, r in 0.05f64..15.0) {
            let d = decompose_risk(g, Some(r), false, &p()).unwrap();
            prop_assert!((d.total() - g).abs() < 1e-9);
            prop_assert_eq!(d.event_category, Some(classify_gap(g, r, &p()).unwrap()));
            prop_assert!(d.durations.iter().flatten().all(|v| *v > 0.0));
            let b = category_boundaries(r, &p()).unwrap();
            for c in VisitCategory::ALL {
                if d.duration(c).is_some() {
                    for earlier in VisitCategory::ALL.into_iter().take_while(|e| *e != c) {
                        if b.get(earlier).is_some() {
                            prop_assert!(d.duration(earlier).is_some());
                        }
                    }
                }
            }
        }
    }
}
