//! Per-window and pooled second moments.
//!
//! All regressions run on centered data; the intercept is carried separately.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimeSeries, WindowPlan};
use crate::error::{IsdError, Result};
use crate::linalg::{self, center, center_columns, serde_matrix, serde_vector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowMoments {
    /// Unbiased sample covariance of the window's covariates.
    #[serde(with = "serde_matrix")]
    pub sigma_hat: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub mu_hat: DVector<f64>,
    /// OLS slope of y on (1, X) within the window.
    #[serde(with = "serde_vector")]
    pub gamma_hat: DVector<f64>,
    pub gamma0_hat: f64,
    /// Residual sum of squares over `w - p - 1`.
    pub noise_var: f64,
    /// Estimated covariance of `gamma_hat`.
    #[serde(with = "serde_matrix")]
    pub coef_cov: DMatrix<f64>,
    pub window: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledMoments {
    #[serde(with = "serde_matrix")]
    pub var_x_bar: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub cov_xy_bar: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub mean_x: DVector<f64>,
    pub mean_y: f64,
    pub n: usize,
    /// False when `var_x_bar` is not numerically positive definite.
    pub positive_definite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Arithmetic mean of the window slopes.
    #[default]
    Plain,
    /// Inverse-variance weighted mean using each window's `coef_cov`.
    VarianceWeighted,
}

impl std::str::FromStr for GammaMode {
    type Err = IsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(GammaMode::Plain),
            "variance_weighted" | "variance-weighted" => Ok(GammaMode::VarianceWeighted),
            other => Err(IsdError::InvalidParameter(format!("unknown gamma mode '{other}'"))),
        }
    }
}

fn single_window(ts: &TimeSeries, start: usize, end: usize) -> Result<WindowMoments> {
    let p = ts.p();
    let w = end - start;
    if w < p + 2 {
        return Err(IsdError::InsufficientData(format!(
            "window [{start}, {end}) has {w} rows, need at least {}",
            p + 2
        )));
    }
    let x = ts.x().rows(start, w).into_owned();
    let y = ts.y().rows(start, w).into_owned();
    let (xc, mu_hat) = center_columns(&x);
    let (yc, y_mean) = center(&y);
    let gram = xc.transpose() * &xc;
    let singular = || IsdError::Singular(format!("Gram matrix of window [{start}, {end})"));
    let gram_inv = linalg::inverse_spd(&gram).map_err(|_| singular())?;
    let gamma_hat = &gram_inv * (xc.transpose() * &yc);
    let resid = &yc - &xc * &gamma_hat;
    let rss = resid.norm_squared();
    let noise_var = (rss / (w - p - 1) as f64).max(0.0);
    let gamma0_hat = y_mean - mu_hat.dot(&gamma_hat);
    Ok(WindowMoments {
        sigma_hat: linalg::symmetrize(&(gram / (w - 1) as f64)),
        mu_hat,
        gamma_hat,
        gamma0_hat,
        noise_var,
        coef_cov: linalg::symmetrize(&(gram_inv * noise_var)),
        window: (start, end),
    })
}

/// Moments of every window in `plan`, in plan order.
pub fn window_moments(ts: &TimeSeries, plan: &WindowPlan) -> Result<Vec<WindowMoments>> {
    plan.validate_for(ts.n(), ts.p())?;
    plan.windows
        .par_iter()
        .map(|&(s, e)| single_window(ts, s, e))
        .collect()
}

pub fn pooled_moments(ts: &TimeSeries) -> Result<PooledMoments> {
    let n = ts.n();
    if n < ts.p() + 2 {
        return Err(IsdError::InsufficientData(format!(
            "pooled moments need n >= p + 2 = {}, got {n}",
            ts.p() + 2
        )));
    }
    let (xc, mean_x) = center_columns(ts.x());
    let (yc, mean_y) = center(ts.y());
    let var_x_bar = linalg::symmetrize(&(xc.transpose() * &xc / n as f64));
    let cov_xy_bar = xc.transpose() * yc / n as f64;
    let positive_definite = linalg::inverse_spd(&var_x_bar).is_ok();
    Ok(PooledMoments {
        var_x_bar,
        cov_xy_bar,
        mean_x,
        mean_y,
        n,
        positive_definite,
    })
}

pub fn weighted_gamma(moments: &[WindowMoments], mode: GammaMode) -> Result<DVector<f64>> {
    let first = moments
        .first()
        .ok_or_else(|| IsdError::InsufficientData("no window moments".into()))?;
    let p = first.gamma_hat.len();
    match mode {
        GammaMode::Plain => {
            let sum = moments
                .iter()
                .fold(DVector::zeros(p), |acc, m| acc + &m.gamma_hat);
            Ok(sum / moments.len() as f64)
        }
        GammaMode::VarianceWeighted => {
            let mut precision = DMatrix::zeros(p, p);
            let mut weighted = DVector::zeros(p);
            for m in moments {
                let inv = linalg::inverse_spd(&m.coef_cov).map_err(|_| {
                    IsdError::Singular(format!(
                        "coefficient covariance of window [{}, {})",
                        m.window.0, m.window.1
                    ))
                })?;
                weighted += &inv * &m.gamma_hat;
                precision += inv;
            }
            linalg::solve_spd(&precision, &weighted)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{contiguous_windows, make_windows, WindowScheme};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_series(n: usize, p: usize, seed: u64) -> TimeSeries {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let beta = DVector::from_fn(p, |i, _| i as f64 - 1.0);
        let noise: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let y = &x * beta + noise.add_scalar(0.5);
        TimeSeries::new(x, y).unwrap()
    }

    fn fake_moments(gamma: f64, var: f64) -> WindowMoments {
        WindowMoments {
            sigma_hat: DMatrix::identity(1, 1),
            mu_hat: DVector::zeros(1),
            gamma_hat: DVector::from_element(1, gamma),
            gamma0_hat: 0.0,
            noise_var: 1.0,
            coef_cov: DMatrix::from_element(1, 1, var),
            window: (0, 10),
        }
    }

    #[test]
    fn noiseless_line() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_fn(10, |i, _| 2.0 * i as f64);
        let ts = TimeSeries::new(x, y).unwrap();
        let m = window_moments(&ts, &contiguous_windows(10, 1).unwrap()).unwrap();
        assert_abs_diff_eq!(m[0].gamma_hat[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[0].noise_var, 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(m[0].gamma0_hat, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let x = DMatrix::from_element(10, 1, 3.0);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let ts = TimeSeries::new(x, y).unwrap();
        let err = window_moments(&ts, &contiguous_windows(10, 2).unwrap()).unwrap_err();
        assert!(matches!(err, IsdError::Singular(ref s) if s.contains("[0, 5)")), "{err}");
    }

    #[test]
    fn invariants_hold_on_random_data() {
        let ts = gaussian_series(300, 4, 11);
        let plan = make_windows(300, 5, 80, WindowScheme::EquallySpaced).unwrap();
        for m in window_moments(&ts, &plan).unwrap() {
            assert!(linalg::is_symmetric(&m.sigma_hat, 1e-12));
            assert!(linalg::is_symmetric(&m.coef_cov, 1e-10));
            assert!(linalg::lambda_min(&m.coef_cov).unwrap() >= -1e-10);
            assert!(m.noise_var >= 0.0);
        }
    }

    #[test]
    fn scaling_equivariance() {
        let ts = gaussian_series(200, 3, 5);
        let c = 3.7;
        let scaled = TimeSeries::new(ts.x() * c, ts.y().clone()).unwrap();
        let plan = contiguous_windows(200, 4).unwrap();
        let a = window_moments(&ts, &plan).unwrap();
        let b = window_moments(&scaled, &plan).unwrap();
        for (ma, mb) in a.iter().zip(&b) {
            assert_abs_diff_eq!(&ma.sigma_hat * (c * c), mb.sigma_hat, epsilon = 1e-10);
            assert_abs_diff_eq!(&ma.gamma_hat / c, mb.gamma_hat, epsilon = 1e-10);
        }
    }

    #[test]
    fn full_window_matches_pooled() {
        let ts = gaussian_series(150, 3, 2);
        let m = window_moments(&ts, &contiguous_windows(150, 1).unwrap()).unwrap();
        let pooled = pooled_moments(&ts).unwrap();
        // unbiased window covariance vs 1/n pooled covariance
        let rescaled = &m[0].sigma_hat * (149.0 / 150.0);
        assert_abs_diff_eq!(rescaled, pooled.var_x_bar, epsilon = 1e-12);
    }

    #[test]
    fn pooled_zero_response() {
        let x = DMatrix::from_fn(10, 2, |i, j| if i % 2 == j { 1.0 } else { 0.0 });
        let ts = TimeSeries::new(x, DVector::zeros(10)).unwrap();
        let pooled = pooled_moments(&ts).unwrap();
        assert_eq!(pooled.cov_xy_bar, DVector::zeros(2));
        assert!(!pooled.positive_definite || pooled.var_x_bar[(0, 0)] > 0.0);
    }

    #[test]
    fn pooled_requires_enough_rows() {
        let ts = gaussian_series(4, 3, 1);
        assert!(pooled_moments(&ts).is_err());
    }

    #[test]
    fn gamma_identical_windows() {
        let ms = vec![fake_moments(1.5, 1.0), fake_moments(1.5, 0.2)];
        for mode in [GammaMode::Plain, GammaMode::VarianceWeighted] {
            assert_abs_diff_eq!(weighted_gamma(&ms, mode).unwrap()[0], 1.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn gamma_symmetric_average() {
        let ms = vec![fake_moments(0.0, 1.0), fake_moments(2.0, 1.0)];
        assert_abs_diff_eq!(weighted_gamma(&ms, GammaMode::Plain).unwrap()[0], 1.0);
        assert_abs_diff_eq!(
            weighted_gamma(&ms, GammaMode::VarianceWeighted).unwrap()[0],
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gamma_inverse_variance_weighting() {
        let ms = vec![fake_moments(0.0, 1.0), fake_moments(2.0, 1.0 / 3.0)];
        // (0·1 + 2·3) / (1 + 3)
        assert_abs_diff_eq!(
            weighted_gamma(&ms, GammaMode::VarianceWeighted).unwrap()[0],
            1.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gamma_weighted_rejects_singular_cov() {
        let ms = vec![fake_moments(0.0, 0.0)];
        assert!(weighted_gamma(&ms, GammaMode::VarianceWeighted).is_err());
        assert!(weighted_gamma(&[], GammaMode::Plain).is_err());
    }

    #[test]
    fn json_capture() {
        let ts = gaussian_series(40, 2, 9);
        let m = window_moments(&ts, &contiguous_windows(40, 2).unwrap()).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: Vec<WindowMoments> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[1].window, (20, 40));
        assert_abs_diff_eq!(back[1].gamma_hat, m[1].gamma_hat, epsilon = 1e-15);
    }
}
