//! Explained variance, R², MSPE and cumulative explained-variance curves.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimeSeries, WindowPlan};
use crate::error::{IsdError, Result};
use crate::simulate::SimRng;

fn centered_ss(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum()
}

/// Windowed `R² = Σ_k (Var̂_k(Y) − Var̂_k(Y − Xβ)) / Σ_k Var̂_k(Y)`.
///
/// Variances are taken within each window, so a constant intercept cancels;
/// it is accepted for interface symmetry with `predict`. May be negative.
pub fn r_squared(
    coeffs: &DVector<f64>,
    intercept: f64,
    ts: &TimeSeries,
    plan: &WindowPlan,
) -> Result<f64> {
    if coeffs.len() != ts.p() {
        return Err(IsdError::Dimension("coefficients and data disagree on p".into()));
    }
    plan.validate_for(ts.n(), ts.p())?;
    let resid = ts.y() - ts.x() * coeffs;
    let (mut num, mut den) = (0.0, 0.0);
    for &(s, e) in &plan.windows {
        let len = (e - s - 1) as f64;
        let vy = centered_ss(&ts.y().as_slice()[s..e]) / len;
        let r: Vec<f64> = resid.as_slice()[s..e].iter().map(|v| v - intercept).collect();
        let vr = centered_ss(&r) / len;
        num += vy - vr;
        den += vy;
    }
    if !(den > 0.0) {
        return Err(IsdError::InsufficientData("zero total response variance".into()));
    }
    Ok(num / den)
}

/// `ΔVar(β) = 2 γ₀ᵀΣβ − βᵀΣβ`.
pub fn population_delta_var(beta: &DVector<f64>, sigma: &DMatrix<f64>, gamma0: &DVector<f64>) -> f64 {
    let sb = sigma * beta;
    2.0 * gamma0.dot(&sb) - beta.dot(&sb)
}

/// Population share of `Var(Y) = γ₀ᵀΣγ₀ + σ²` explained by `β`.
pub fn population_r2(
    beta: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma0: &DVector<f64>,
    noise_var: f64,
) -> f64 {
    population_delta_var(beta, sigma, gamma0) / (gamma0.dot(&(sigma * gamma0)) + noise_var)
}

/// `(γ̂ − γ₀)ᵀ Σ (γ̂ − γ₀)`.
pub fn mspe(gamma_hat: &DVector<f64>, gamma0: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let p = gamma0.len();
    if gamma_hat.len() != p || sigma.shape() != (p, p) {
        return Err(IsdError::Dimension("mspe inputs disagree on p".into()));
    }
    let d = gamma_hat - gamma0;
    Ok(d.dot(&(sigma * &d)).max(0.0))
}

/// A stationary regime `Y = Xᵀγ₀ + ε`, `X ~ N(0, Σ)`, used for Monte-Carlo MSPE.
#[derive(Debug, Clone)]
pub struct Regime {
    pub sigma: DMatrix<f64>,
    pub gamma0: DVector<f64>,
    pub noise_var: f64,
}

impl Regime {
    pub fn sample(&self, m: usize, rng: &mut SimRng) -> Result<TimeSeries> {
        let p = self.gamma0.len();
        let l = self
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| IsdError::NotPositiveDefinite("regime covariance".into()))?
            .l();
        let z = DMatrix::from_fn(p, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = (l * z).transpose();
        let sd = self.noise_var.sqrt();
        let y = &x * &self.gamma0 + DVector::from_fn(m, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        TimeSeries::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
}

impl McEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let k = v.len() as f64;
        let mean = v.iter().sum::<f64>() / k;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / k).sqrt(),
            reps: v.len(),
        }
    }
}

/// Monte-Carlo MSPE: each repetition draws `m` adaptation rows and one fresh
/// evaluation point from `regime`, refits, and records `(Xᵀ(γ̂ − γ₀))²`.
/// Repetition `r` uses its own ChaCha stream derived from `seed`.
pub fn mspe_mc<F>(estimator: F, regime: &Regime, m: usize, reps: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&TimeSeries) -> Result<DVector<f64>> + Sync,
{
    if reps == 0 {
        return Err(IsdError::InvalidParameter("mspe_mc needs reps >= 1".into()));
    }
    let samples: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = SimRng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let data = regime.sample(m, &mut rng)?;
            let gamma_hat = estimator(&data)?;
            let eval = regime.sample(1, &mut rng)?;
            let x = eval.x().row(0).transpose();
            Ok((x.dot(&(gamma_hat - &regime.gamma0))).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples))
}

/// Running sum of `y_c² − (y_c − ŷ)²`, with `y_c` the responses centered over
/// the horizon; `ŷ` predicts the centered response.
pub fn cumulative_xv(predictions: &DVector<f64>, responses: &DVector<f64>) -> Result<DVector<f64>> {
    if predictions.len() != responses.len() {
        return Err(IsdError::Dimension("predictions and responses differ in length".into()));
    }
    if responses.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let mean = responses.mean();
    let mut acc = 0.0;
    Ok(DVector::from_iterator(
        responses.len(),
        responses.iter().zip(predictions.iter()).map(|(y, yh)| {
            acc += (y - mean).powi(2) - (y - mean - yh).powi(2);
            acc
        }),
    ))
}

/// One row of the tidy benchmark output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub estimator: String,
    pub seed: u64,
    pub n: usize,
    pub m: Option<usize>,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub r2: f64,
    pub cum_xv: Vec<f64>,
    pub mspe: f64,
    pub per_seed: Option<Vec<TidyRow>>,
}

pub fn write_tidy_csv<P: AsRef<Path>>(path: P, rows: &[TidyRow]) -> Result<()> {
    write_tidy_csv_with_preamble(path, rows, "")
}

/// Tidy CSV preceded by `#`-commented preamble lines.
pub fn write_tidy_csv_with_preamble<P: AsRef<Path>>(path: P, rows: &[TidyRow], preamble: &str) -> Result<()> {
    let mut w = crate::dataset::csv_writer_with_preamble(path, preamble)?;
    for r in rows {
        w.serialize(r).map_err(|e| IsdError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
