use nalgebra::{DMatrix, DVector};

use super::{independent_columns, LinearFit};
use crate::{Error, Result};

/// Weighted least squares with a cluster-robust sandwich covariance.
///
/// Solves `(X'WX) b = X'Wy`; the covariance is
/// `(X'WX)^-1 [sum_c (X_c' W_c r_c)(X_c' W_c r_c)'] (X'WX)^-1` with residuals
/// `r = y - Xb` and clusters given by `cluster_ids`.
pub fn fit_wls(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    cluster_ids: &[usize],
) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || weights.len() != n || cluster_ids.len() != n {
        return Err(Error::InvalidArgument(format!(
            "fit_wls: {n} design rows but {} responses, {} weights, {} cluster ids",
            y.len(),
            weights.len(),
            cluster_ids.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "fit_wls: weights must be positive and finite, found {w}"
        )));
    }
    if n < p {
        return Err(Error::InvalidArgument(format!(
            "fit_wls: {n} rows for {p} coefficients"
        )));
    }
    let (_, aliased) = independent_columns(x);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient { columns: aliased });
    }

    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for i in 0..n {
        let w = weights[i];
        for a in 0..p {
            let xa = x[(i, a)] * w;
            xtwy[a] += xa * y[i];
            for b in 0..=a {
                xtwx[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }
    let chol = xtwx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("X'WX is not positive definite".into()))?;
    let mut beta = chol.solve(&xtwy);

    // one round of iterative refinement on the normal equations
    let resid_ne = &xtwy - &xtwx * &beta;
    beta += chol.solve(&resid_ne);

    let bread = chol.inverse();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    let mut score_by_cluster: std::collections::BTreeMap<usize, DVector<f64>> =
        std::collections::BTreeMap::new();
    let mut wrss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p).map(|a| x[(i, a)] * beta[a]).sum();
        let r = y[i] - fitted;
        wrss += weights[i] * r * r;
        let u = score_by_cluster
            .entry(cluster_ids[i])
            .or_insert_with(|| DVector::zeros(p));
        for a in 0..p {
            u[a] += x[(i, a)] * weights[i] * r;
        }
    }
    for u in score_by_cluster.values() {
        meat += u * u.transpose();
    }
    let cov = &bread * meat * &bread;
    let cov = (&cov + cov.transpose()) * 0.5;

    Ok(LinearFit {
        coefficients: beta,
        covariance: Some(cov),
        iterations: 1,
        objective: wrss,
    })
}

/// Ordinary least squares, each row its own cluster.
pub fn ols_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearFit> {
    let n = x.nrows();
    let weights = vec![1.0; n];
    let clusters: Vec<usize> = (0..n).collect();
    fit_wls(x, y, &weights, &clusters)
}
