//! Linear quantile regression by exact vertex descent.
//!
//! The check-loss objective is convex and piecewise linear in the coefficients,
//! and an optimum is attained at a vertex where `p` observations are fitted
//! exactly. Starting from such a vertex, each step evaluates the directional
//! derivative along the `2p` edges obtained by releasing one basis observation
//! in either direction, and follows the steepest descending edge with an exact
//! line search (a weighted-median scan over the residual breakpoints). The
//! observation at the minimizing breakpoint enters the basis. Every step
//! strictly decreases the objective, so the descent terminates.

use nalgebra::{DMatrix, DVector};

use super::{independent_columns, select_rows, LinearFit};
use crate::{Error, Result};

/// `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn quantile_objective(y: &[f64], x: &DMatrix<f64>, beta: &DVector<f64>, tau: f64) -> f64 {
    let fitted = x * beta;
    y.iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| check_loss(yi - fi, tau))
        .sum()
}

/// Minimizes `sum rho_tau(y_i - x_i b)`.
pub fn fit_quantile_reg(y: &[f64], x: &DMatrix<f64>, tau: f64) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be in (0,1), got {tau}"
        )));
    }
    if y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "quantile regression: {n} design rows but {} responses",
            y.len()
        )));
    }
    if n < p || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "quantile regression: {n} rows for {p} coefficients"
        )));
    }
    let (_, aliased) = independent_columns(x);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient { columns: aliased });
    }

    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let zero_tol = 1e-12 * y_scale;

    let mut basis = initial_basis(y, x)?;
    let mut beta = solve_basis(x, y, &basis)
        .ok_or_else(|| Error::Numerical("singular initial basis".into()))?;
    let mut objective = quantile_objective(y, x, &beta, tau);

    let max_iter = 50 * n + 100;
    for iter in 1..=max_iter {
        let xb = select_rows(x, &basis);
        let inv = xb
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular basis matrix".into()))?;
        let resid: Vec<f64> = {
            let fitted = x * &beta;
            y.iter()
                .zip(fitted.iter())
                .map(|(yi, fi)| {
                    let r = yi - fi;
                    if r.abs() <= zero_tol {
                        0.0
                    } else {
                        r
                    }
                })
                .collect()
        };
        let in_basis = {
            let mut m = vec![false; n];
            for &h in &basis {
                m[h] = true;
            }
            m
        };

        // a = X inv: a[(i, k)] is the fitted-value change of row i per unit move
        // along edge k
        let a = x * &inv;
        // gradient of the non-basis part with respect to each edge coordinate
        let mut grad = vec![0.0; p];
        // extra non-negative slope from zero-residual non-basis rows, per edge and sign
        let mut kink_pos = vec![0.0; p];
        let mut kink_neg = vec![0.0; p];
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            let r = resid[i];
            for k in 0..p {
                let aik = a[(i, k)];
                if r > 0.0 {
                    grad[k] -= aik * tau;
                } else if r < 0.0 {
                    grad[k] -= aik * (tau - 1.0);
                } else if aik > 0.0 {
                    kink_pos[k] += aik * (1.0 - tau);
                    kink_neg[k] += aik * tau;
                } else {
                    kink_pos[k] += -aik * tau;
                    kink_neg[k] += -aik * (1.0 - tau);
                }
            }
        }
        // directional derivative along +e_k moves basis row k's residual negative
        let mut best: Option<(usize, f64, f64)> = None;
        for k in 0..p {
            for sign in [1.0, -1.0] {
                let slope = if sign > 0.0 {
                    grad[k] + kink_pos[k] + (1.0 - tau)
                } else {
                    -grad[k] + kink_neg[k] + tau
                };
                if best.is_none_or(|(_, _, s)| slope < s) {
                    best = Some((k, sign, slope));
                }
            }
        }
        let (k, sign, slope0) = best.expect("p > 0");
        if slope0 >= -1e-12 * (n as f64) {
            return Ok(LinearFit {
                coefficients: beta,
                covariance: None,
                iterations: iter,
                objective,
            });
        }

        // exact line search along d = sign * inv e_k
        let mut breaks: Vec<(f64, f64, usize)> = Vec::new();
        for i in 0..n {
            if in_basis[i] || resid[i] == 0.0 {
                continue;
            }
            let ai = sign * a[(i, k)];
            if ai == 0.0 {
                continue;
            }
            let t = resid[i] / ai;
            if t > 0.0 {
                breaks.push((t, ai.abs(), i));
            }
        }
        breaks.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.2.cmp(&v.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(t, w, i) in &breaks {
            slope += w;
            if slope >= 0.0 {
                entering = Some((t, i));
                break;
            }
        }
        let (t, i_enter) = entering
            .ok_or_else(|| Error::Numerical("quantile objective unbounded below".into()))?;

        let direction = inv.column(k) * sign;
        let candidate = &beta + direction * t;
        let mut new_basis = basis.clone();
        new_basis[k] = i_enter;
        // re-solve on the new basis to keep the vertex exact
        let solved = solve_basis(x, y, &new_basis).unwrap_or(candidate);
        let new_objective = quantile_objective(y, x, &solved, tau);
        if !(new_objective < objective) {
            return Ok(LinearFit {
                coefficients: beta,
                covariance: None,
                iterations: iter,
                objective,
            });
        }
        basis = new_basis;
        beta = solved;
        objective = new_objective;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        trace: vec![objective],
    })
}

fn solve_basis(x: &DMatrix<f64>, y: &[f64], basis: &[usize]) -> Option<DVector<f64>> {
    let xb = select_rows(x, basis);
    let yb = DVector::from_iterator(basis.len(), basis.iter().map(|&i| y[i]));
    xb.lu().solve(&yb)
}

/// Picks `p` linearly independent rows, preferring those closest to a
/// least-squares fit so the descent starts near the optimum.
fn initial_basis(y: &[f64], x: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = x.nrows();
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    let ls = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .unwrap_or_else(|| DVector::zeros(p));
    let fitted = x * ls;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (y[a] - fitted[a])
            .abs()
            .total_cmp(&(y[b] - fitted[b]).abs())
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    for &i in &order {
        let row = x.row(i).transpose();
        let norm0 = row.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = row.clone_owned();
        for _ in 0..2 {
            for q in &ortho {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            ortho.push(v / norm);
            chosen.push(i);
            if chosen.len() == p {
                return Ok(chosen);
            }
        }
    }
    Err(Error::RankDeficient {
        columns: (0..p).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_design(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] })
    }

    #[test]
    fn intercept_only_median() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let fit = fit_quantile_reg(&[1.0, 2.0, 9.0], &x, 0.5).unwrap();
        assert_eq!(fit.coefficients[0], 2.0);
    }

    #[test]
    fn noiseless_line_is_exact() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = xs.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = fit_quantile_reg(&y, &line_design(&xs), 0.5).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.objective.abs() < 1e-10);
    }

    #[test]
    fn extreme_quantiles_bracket_the_data() {
        let y = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0];
        let x = DMatrix::from_element(8, 1, 1.0);
        let lo = fit_quantile_reg(&y, &x, 0.05).unwrap();
        let hi = fit_quantile_reg(&y, &x, 0.95).unwrap();
        assert_eq!(lo.coefficients[0], 1.0);
        assert_eq!(hi.coefficients[0], 9.0);
    }

    #[test]
    fn bad_tau_and_degenerate_design() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(fit_quantile_reg(&[1.0, 2.0, 3.0], &x, 1.0).is_err());
        let x = line_design(&[2.0, 2.0, 2.0]);
        assert!(matches!(
            fit_quantile_reg(&[1.0, 2.0, 3.0], &x, 0.5),
            Err(Error::RankDeficient { .. })
        ));
    }
}
