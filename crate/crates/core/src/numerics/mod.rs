//! Shared numerical machinery.
//!
//! Everything here is pure and reentrant. Matrix work is single-threaded per call;
//! parallelism happens one level up, across independent fits.

mod normal;
mod quantile;
mod spline;
mod survival;
mod trapezoid;
mod wls;

use nalgebra::{DMatrix, DVector};

pub use normal::{normal_cdf, std_normal_cdf};
pub use quantile::{check_loss, fit_quantile_reg, quantile_objective};
pub use spline::SplineBasisSpec;
pub use survival::{exponential_loglik, exponential_score, fit_exponential_survival};
pub use trapezoid::{trapezoid_integral, uniform_grid};
pub use wls::{fit_wls, ols_fit};

/// Relative tolerance used to decide that a design column is aliased.
pub const ALIAS_TOL: f64 = 1e-7;

/// Result of a linear-predictor fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    /// Cluster-robust sandwich covariance, when the fit computes one.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    /// Final objective: log-likelihood, check loss or weighted RSS depending on the fit.
    pub objective: f64,
}

impl LinearFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(self.coefficients.iter())
            .map(|(x, b)| x * b)
            .sum()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.coefficients
    }
}

/// Splits the columns of `x` into linearly independent ones and aliased ones.
///
/// Columns are visited left to right; a column is aliased when the norm of its
/// component orthogonal to the previously kept columns falls below
/// `ALIAS_TOL` times its own norm.
pub fn independent_columns(x: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= ALIAS_TOL * norm0 {
            aliased.push(j);
        } else {
            basis.push(v / norm);
            kept.push(j);
        }
    }
    (kept, aliased)
}

/// Copies the listed columns of `x` into a new matrix.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// Copies the listed rows of `x` into a new matrix.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Expands coefficients fitted on `kept` columns back to `ncols`, with zeros for
/// aliased columns.
pub fn expand_coefficients(fit: &LinearFit, kept: &[usize], ncols: usize) -> LinearFit {
    let mut coefficients = DVector::zeros(ncols);
    for (k, &j) in kept.iter().enumerate() {
        coefficients[j] = fit.coefficients[k];
    }
    let covariance = fit.covariance.as_ref().map(|c| {
        let mut full = DMatrix::zeros(ncols, ncols);
        for (a, &i) in kept.iter().enumerate() {
            for (b, &j) in kept.iter().enumerate() {
                full[(i, j)] = c[(a, b)];
            }
        }
        full
    });
    LinearFit {
        coefficients,
        covariance,
        iterations: fit.iterations,
        objective: fit.objective,
    }
}

/// Linear-interpolation quantile at probability `p`, positions `p(n-1)+1`
/// (1-based) between order statistics. `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Sample median under the same interpolation rule. Returns `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_rule_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(median(&[9.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn aliased_columns_are_detected() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 2.0, 4.0, //
                1.0, 3.0, 5.0, //
                1.0, 4.0, 6.0, //
                1.0, 5.0, 7.0,
            ],
        );
        let (kept, aliased) = independent_columns(&x);
        assert_eq!(kept, vec![0, 1]);
        assert_eq!(aliased, vec![2]);
    }
}
