//! Small statistics helpers: moments, normal confidence half-widths,
//! least squares and bootstrap resampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n - 1`); zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Half-width of the normal 95% confidence interval for the mean.
pub fn half_width95(x: &[f64]) -> f64 {
    Z95 * std_dev(x) / (x.len() as f64).sqrt()
}

/// Empirical quantile with linear interpolation, `q ∈ [0, 1]`.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

/// Ordinary least squares for `y ≈ X β`; the caller includes an intercept column.
pub fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<LeastSquares> {
    weighted_least_squares(design, y, &vec![1.0; y.len()])
}

/// Least squares minimizing `Σ w_i (y_i - x_i β)²`; `r_squared` is the weighted one.
pub fn weighted_least_squares(design: &[Vec<f64>], y: &[f64], weights: &[f64]) -> Result<LeastSquares> {
    let n = y.len();
    let p = design.first().map_or(0, Vec::len);
    if n <= p || design.len() != n || weights.len() != n {
        return Err(Error::InsufficientData(format!("{n} observations for {p} coefficients")));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Precondition("weights must be positive and finite".into()));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let x = DMatrix::from_fn(n, p, |i, j| sw[i] * design[i][j]);
    let yv = DVector::from_fn(n, |i, _| sw[i] * y[i]);
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&yv, 1e-12)
        .map_err(|e| Error::InsufficientData(e.to_string()))?;
    let residual = &yv - &x * &beta;
    let ss_res: f64 = residual.iter().map(|r| r * r).sum();
    let ym = y.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / weights.iter().sum::<f64>();
    let ss_tot: f64 = y.iter().zip(weights).map(|(v, w)| w * (v - ym).powi(2)).sum();
    if ss_tot == 0.0 || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InsufficientData("degenerate regression".into()));
    }
    Ok(LeastSquares { coefficients: beta.iter().copied().collect(), r_squared: 1.0 - ss_res / ss_tot })
}

/// Index vectors for `resamples` bootstrap draws of size `n`.
pub fn bootstrap_indices(n: usize, resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..resamples)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_select_the_trusted_points() {
        let design: Vec<Vec<f64>> = (0..4).map(|i| vec![1.0, f64::from(i)]).collect();
        // the last point is off the line y = 2x; a tiny weight makes it irrelevant
        let y = [0.0, 2.0, 4.0, 100.0];
        let fit = weighted_least_squares(&design, &y, &[1.0, 1.0, 1.0, 1e-12]).unwrap();
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-6);
        let plain = least_squares(&design, &y).unwrap();
        assert!(plain.coefficients[1] > 20.0);
        assert!(weighted_least_squares(&design, &y, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((std_dev(&x) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(quantile(&x, 0.5), 2.5);
        assert_eq!(quantile(&x, 0.0), 1.0);
    }

    #[test]
    fn exact_plane_is_recovered() {
        let design: Vec<Vec<f64>> =
            (0..6).map(|i| vec![1.0, i as f64, (i * i % 5) as f64]).collect();
        let y: Vec<f64> = design.iter().map(|r| 2.0 - 0.5 * r[1] + 3.0 * r[2]).collect();
        let fit = least_squares(&design, &y).unwrap();
        for (c, e) in fit.coefficients.iter().zip([2.0, -0.5, 3.0]) {
            assert!((c - e).abs() < 1e-10);
        }
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_reproducible() {
        assert_eq!(bootstrap_indices(5, 3, 9), bootstrap_indices(5, 3, 9));
        assert!(bootstrap_indices(5, 3, 9).iter().flatten().all(|&i| i < 5));
    }
}
