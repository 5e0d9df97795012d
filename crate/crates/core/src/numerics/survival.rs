use nalgebra::{DMatrix, DVector};

use super::LinearFit;
use crate::{Error, Result};

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const LOGLIK_TOL: f64 = 1e-10;
const SCORE_TOL: f64 = 1e-8;

/// Exponential log-likelihood `sum_i d_i eta_i - t_i exp(eta_i)` with `eta = X gamma`.
pub fn exponential_loglik(
    exposure: &[f64],
    events: &[f64],
    x: &DMatrix<f64>,
    gamma: &DVector<f64>,
) -> f64 {
    let eta = x * gamma;
    eta.iter()
        .zip(exposure)
        .zip(events)
        .map(|((e, t), d)| d * e - t * e.exp())
        .sum()
}

/// Score vector `X'(d - t exp(eta))`.
pub fn exponential_score(
    exposure: &[f64],
    events: &[f64],
    x: &DMatrix<f64>,
    gamma: &DVector<f64>,
) -> DVector<f64> {
    let eta = x * gamma;
    let resid = DVector::from_iterator(
        eta.len(),
        eta.iter()
            .zip(exposure)
            .zip(events)
            .map(|((e, t), d)| d - t * e.exp()),
    );
    x.transpose() * resid
}

/// Maximum-likelihood fit of an exponential survival model with log rate `X gamma`.
///
/// Newton-Raphson with step halving, started at zero with the intercept column
/// (if any) set to `ln(sum d / sum t)`.
pub fn fit_exponential_survival(
    exposure: &[f64],
    events: &[f64],
    x: &DMatrix<f64>,
) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if exposure.len() != n || events.len() != n {
        return Err(Error::InvalidArgument(format!(
            "exponential fit: {n} design rows, {} exposures, {} event flags",
            exposure.len(),
            events.len()
        )));
    }
    if let Some(t) = exposure.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "exposure times must be positive, found {t}"
        )));
    }
    let total_events: f64 = events.iter().sum();
    if total_events <= 0.0 {
        return Err(Error::NoEvents("exponential fit".into()));
    }
    let total_time: f64 = exposure.iter().sum();
    // score entries are sums over rows, so the tolerance scales with the event count
    let score_tol = SCORE_TOL * total_events.max(1.0);

    let mut gamma = DVector::<f64>::zeros(p);
    if let Some(j) = (0..p).find(|&j| x.column(j).iter().all(|v| *v == 1.0)) {
        gamma[j] = (total_events / total_time).ln();
    }
    let mut ll = exponential_loglik(exposure, events, x, &gamma);
    let mut trace = vec![ll];

    for iter in 1..=MAX_ITER {
        let eta = x * &gamma;
        let mu: Vec<f64> = eta.iter().zip(exposure).map(|(e, t)| t * e.exp()).collect();
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let r = events[i] - mu[i];
            for a in 0..p {
                let xa = x[(i, a)];
                score[a] += xa * r;
                let xam = xa * mu[i];
                for b in 0..=a {
                    info[(a, b)] += xam * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or_else(|| {
                Error::Numerical("information matrix is singular (aliased covariates?)".into())
            })?;

        // Newton decrement: the log-likelihood gain a full step predicts
        let decrement = step.dot(&score);
        if decrement < LOGLIK_TOL * (1.0 + ll.abs()) {
            return Ok(LinearFit {
                coefficients: gamma,
                covariance: None,
                iterations: iter,
                objective: ll,
            });
        }
        let mut scale = 1.0;
        let mut candidate = &gamma + &step;
        let mut ll_new = exponential_loglik(exposure, events, x, &candidate);
        let mut halvings = 0;
        while !(ll_new >= ll) {
            if halvings == MAX_HALVINGS {
                break;
            }
            halvings += 1;
            scale *= 0.5;
            candidate = &gamma + &step * scale;
            ll_new = exponential_loglik(exposure, events, x, &candidate);
        }
        if !(ll_new >= ll) {
            // no ascent possible along the Newton direction: at the optimum to
            // machine precision unless the score says otherwise
            if score.amax() < score_tol || decrement < LOGLIK_TOL * (1.0 + ll.abs()) {
                return Ok(LinearFit {
                    coefficients: gamma,
                    covariance: None,
                    iterations: iter,
                    objective: ll,
                });
            }
            trace.push(ll_new);
            return Err(Error::NoConvergence {
                iterations: iter,
                trace,
            });
        }
        let delta = ll_new - ll;
        gamma = candidate;
        ll = ll_new;
        trace.push(ll);
        if delta.abs() < LOGLIK_TOL * (1.0 + ll.abs())
            && exponential_score(exposure, events, x, &gamma).amax() < score_tol
        {
            return Ok(LinearFit {
                coefficients: gamma,
                covariance: None,
                iterations: iter,
                objective: ll,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_is_events_over_exposure() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit =
            fit_exponential_survival(&[1.0, 2.0, 1.5, 1.5], &[1.0, 1.0, 0.0, 1.0], &x).unwrap();
        assert!((fit.coefficients[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_events_is_an_error() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            fit_exponential_survival(&[1.0, 2.0, 3.0], &[0.0; 3], &x),
            Err(Error::NoEvents(_))
        ));
    }

    #[test]
    fn doubling_exposure_halves_the_rate() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let t = [0.4, 1.2, 3.0, 0.9, 2.2];
        let d = [1.0, 0.0, 1.0, 1.0, 0.0];
        let t2: Vec<f64> = t.iter().map(|v| v * 2.0).collect();
        let a = fit_exponential_survival(&t, &d, &x).unwrap();
        let b = fit_exponential_survival(&t2, &d, &x).unwrap();
        let ratio = b.coefficients[0].exp() / a.coefficients[0].exp();
        assert!((ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separated_level_drifts_without_failing() {
        // the second group never has an event; its coefficient runs off to -inf
        // until the likelihood stops moving
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        );
        let fit = fit_exponential_survival(
            &[1.0, 2.0, 1.0, 1.0, 1.0, 1.0],
            &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            &x,
        )
        .unwrap();
        assert!(fit.coefficients[1] < -10.0);
    }
}
