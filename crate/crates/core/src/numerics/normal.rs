use crate::{Error, Result};

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal CDF with the given mean and standard deviation.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "normal sd must be positive, got {sd}"
        )));
    }
    Ok(std_normal_cdf((x - mean) / sd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_and_symmetry() {
        assert_eq!(normal_cdf(3.0, 3.0, 1.0).unwrap(), 0.5);
        for k in 0..100 {
            let x = -4.0 + 0.137 * k as f64;
            let s = normal_cdf(x, 3.0, 1.0).unwrap() + normal_cdf(6.0 - x, 3.0, 1.0).unwrap();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_sd() {
        assert!(normal_cdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_cdf(0.0, 0.0, -1.0).is_err());
    }
}
