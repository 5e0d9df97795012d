use crate::{Error, Result};

/// Trapezoid rule on a uniform grid: weight `dx` everywhere, `dx / 2` at the ends.
pub fn trapezoid_integral(values: &[f64], dx: f64) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "trapezoid rule needs at least 2 points, got {n}"
        )));
    }
    if !(dx > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grid spacing must be positive, got {dx}"
        )));
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    Ok(dx * inner + 0.5 * dx * (values[0] + values[n - 1]))
}

/// `start, start + step, ...` up to `end` inclusive (with a small tolerance on the
/// last point so that e.g. 0..7 by 0.007 has 1001 points).
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end > start) {
        return Err(Error::InvalidArgument(format!(
            "grid needs end > start and step > 0, got ({start}, {end}, {step})"
        )));
    }
    let n = ((end - start) / step + 1e-10).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_linear_are_exact() {
        let grid = uniform_grid(0.0, 7.0, 0.007).unwrap();
        assert_eq!(grid.len(), 1001);
        let ones = vec![1.0; grid.len()];
        assert!((trapezoid_integral(&ones, 0.007).unwrap() - 7.0).abs() < 1e-12);
        let lin: Vec<f64> = grid.iter().map(|t| 7.0 - t).collect();
        assert!((trapezoid_integral(&lin, 0.007).unwrap() - 24.5).abs() < 1e-10);
    }

    #[test]
    fn square_against_antiderivative() {
        let grid = uniform_grid(0.0, 7.0, 0.007).unwrap();
        let sq: Vec<f64> = grid.iter().map(|t| t * t).collect();
        let v = trapezoid_integral(&sq, 0.007).unwrap();
        assert!((v - 343.0 / 3.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn short_inputs() {
        assert!(trapezoid_integral(&[1.0], 0.1).is_err());
        assert_eq!(uniform_grid(0.0, 7.0, 0.1).unwrap().len(), 71);
    }
}
