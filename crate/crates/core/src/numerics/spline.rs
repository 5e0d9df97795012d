use nalgebra::DMatrix;

use super::quantile_sorted;
use crate::{Error, Result};

/// Unpenalized B-spline basis over a fixed knot sequence.
///
/// Interior knots sit at equally spaced sample quantiles of the fitting data and
/// the boundary knots at its range. Without an intercept the first B-spline is
/// dropped, so the basis has `df` columns either way and a model intercept can be
/// added separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasisSpec {
    pub degree: usize,
    pub df: usize,
    pub interior_knots: Vec<f64>,
    pub boundary: (f64, f64),
    pub intercept: bool,
}

impl SplineBasisSpec {
    /// Places knots from the data in `x`.
    pub fn from_data(x: &[f64], df: usize, degree: usize, intercept: bool) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot place spline knots on empty data".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite spline input".into()));
        }
        let n_interior = Self::interior_count(df, degree, intercept)?;
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[0];
        let mut hi = sorted[sorted.len() - 1];
        if hi <= lo {
            // a single distinct value: widen so the basis is defined, every row
            // then evaluates at the left boundary
            hi = lo + 1.0;
        }
        let interior = (1..=n_interior)
            .map(|k| quantile_sorted(&sorted, k as f64 / (n_interior + 1) as f64))
            .collect();
        Self::with_knots(degree, df, interior, (lo, hi), intercept)
    }

    pub fn with_knots(
        degree: usize,
        df: usize,
        interior_knots: Vec<f64>,
        boundary: (f64, f64),
        intercept: bool,
    ) -> Result<Self> {
        let n_interior = Self::interior_count(df, degree, intercept)?;
        if interior_knots.len() != n_interior {
            return Err(Error::InvalidArgument(format!(
                "df={df} with degree {degree} needs {n_interior} interior knots, got {}",
                interior_knots.len()
            )));
        }
        if !(boundary.0 < boundary.1) {
            return Err(Error::InvalidArgument(format!(
                "boundary knots must satisfy lo < hi, got {boundary:?}"
            )));
        }
        let mut prev = boundary.0;
        for &k in &interior_knots {
            if k < prev || k > boundary.1 {
                return Err(Error::InvalidArgument(format!(
                    "interior knots must be sorted within the boundary, got {interior_knots:?}"
                )));
            }
            prev = k;
        }
        Ok(Self {
            degree,
            df,
            interior_knots,
            boundary,
            intercept,
        })
    }

    fn interior_count(df: usize, degree: usize, intercept: bool) -> Result<usize> {
        let needed = degree + usize::from(intercept);
        if df < needed || df == 0 {
            return Err(Error::InvalidArgument(format!(
                "spline df={df} is smaller than degree {degree}{}",
                if intercept { " + 1" } else { "" }
            )));
        }
        Ok(df - needed)
    }

    pub fn ncols(&self) -> usize {
        self.df
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> Vec<f64> {
        let p = self.degree;
        let mut t = Vec::with_capacity(self.interior_knots.len() + 2 * (p + 1));
        t.extend(std::iter::repeat_n(self.boundary.0, p + 1));
        t.extend_from_slice(&self.interior_knots);
        t.extend(std::iter::repeat_n(self.boundary.1, p + 1));
        t
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.boundary.0, self.boundary.1)
    }

    /// Writes the basis at `x` into `out` (length `df`). Returns true when `x` had
    /// to be clamped to the boundary.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.df);
        let xc = self.clamp(x);
        let knots = self.knots();
        let p = self.degree;
        let n_full = knots.len() - p - 1;
        let span = find_span(&knots, p, n_full, xc);
        let local = basis_funs(&knots, p, span, xc);
        out.iter_mut().for_each(|v| *v = 0.0);
        let skip = usize::from(!self.intercept);
        for (r, value) in local.iter().enumerate() {
            let full_index = span - p + r;
            if full_index >= skip {
                out[full_index - skip] = *value;
            }
        }
        xc != x
    }

    /// Basis matrix with one row per value in `x`, clamping out-of-range values.
    pub fn basis(&self, x: &[f64]) -> DMatrix<f64> {
        self.build(x, false)
    }

    /// Basis matrix with a leading column of ones.
    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        self.build(x, true)
    }

    /// Single design row with a leading one.
    pub fn design_row(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.df + 1];
        row[0] = 1.0;
        if self.eval_into(x, &mut row[1..]) {
            log::debug!("spline input {x} clamped to {:?}", self.boundary);
        }
        row
    }

    fn build(&self, x: &[f64], with_intercept: bool) -> DMatrix<f64> {
        let offset = usize::from(with_intercept);
        let ncols = self.df + offset;
        let mut m = DMatrix::zeros(x.len(), ncols);
        let mut row = vec![0.0; self.df];
        let mut clamped = 0usize;
        for (i, &xi) in x.iter().enumerate() {
            if self.eval_into(xi, &mut row) {
                clamped += 1;
            }
            if with_intercept {
                m[(i, 0)] = 1.0;
            }
            for (j, v) in row.iter().enumerate() {
                m[(i, j + offset)] = *v;
            }
        }
        if clamped > 0 {
            log::warn!(
                "{clamped} spline input(s) outside [{}, {}] clamped to the boundary",
                self.boundary.0,
                self.boundary.1
            );
        }
        m
    }
}

/// Knot span index `i` with `t[i] <= x < t[i+1]`; the right boundary maps to the
/// last non-empty span.
fn find_span(t: &[f64], p: usize, n: usize, x: f64) -> usize {
    if x >= t[n] {
        return n - 1;
    }
    if x <= t[p] {
        return p;
    }
    let (mut lo, mut hi) = (p, n);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < t[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `p + 1` non-vanishing basis functions on `span` (triangular scheme).
fn basis_funs(t: &[f64], p: usize, span: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}
