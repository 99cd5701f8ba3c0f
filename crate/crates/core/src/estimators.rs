//! Population and plug-in ISD estimators, plus the OLS and magging baselines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ajd::{uwedge, UwedgeOptions};
use crate::dataset::TimeSeries;
use crate::decomposition::SubspaceSplit;
use crate::error::{IsdError, Result};
use crate::jbd::{select_blocks, BlockDecomposition};
use crate::linalg::{self, center, center_columns, reduced_ls, serde_vector};
use crate::moments::{pooled_moments, PooledMoments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptMode {
    /// Historical intercepts are stable; reuse their mean.
    Constant,
    /// Re-estimate the intercept from each adaptation window.
    Adaptive,
}

/// Decides whether the historical window intercepts count as constant:
/// `sd ≤ rel_tol · (1 + |mean|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptPolicy {
    pub rel_tol: f64,
}

impl Default for InterceptPolicy {
    fn default() -> Self {
        Self { rel_tol: 0.1 }
    }
}

impl InterceptPolicy {
    pub fn classify(&self, intercepts: &[f64]) -> (InterceptMode, f64) {
        if intercepts.is_empty() {
            return (InterceptMode::Adaptive, 0.0);
        }
        let k = intercepts.len() as f64;
        let mean = intercepts.iter().sum::<f64>() / k;
        let sd = if intercepts.len() > 1 {
            (intercepts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        if sd <= self.rel_tol * (1.0 + mean.abs()) {
            (InterceptMode::Constant, mean)
        } else {
            (InterceptMode::Adaptive, mean)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsdModel {
    pub split: SubspaceSplit,
    #[serde(with = "serde_vector")]
    pub beta_inv: DVector<f64>,
    pub intercept_mode: InterceptMode,
    /// Mean of the historical window intercepts.
    pub gamma0: f64,
    pub pooled: PooledMoments,
}

impl IsdModel {
    /// Intercept for zero-shot prediction with `beta_inv`.
    pub fn zero_shot_intercept(&self) -> f64 {
        match self.intercept_mode {
            InterceptMode::Constant => self.gamma0,
            InterceptMode::Adaptive => self.pooled.mean_y - self.pooled.mean_x.dot(&self.beta_inv),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationFit {
    #[serde(with = "serde_vector")]
    pub delta_res: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub gamma_isd: DVector<f64>,
    pub intercept: f64,
    pub window: (i64, i64),
}

/// Plug-in invariant component: least squares of y on the invariant coordinates
/// of the centered covariates, mapped back to the full space.
pub fn fit_invariant(
    ts: &TimeSeries,
    split: &SubspaceSplit,
    intercepts: &[f64],
    policy: InterceptPolicy,
) -> Result<IsdModel> {
    if split.p() != ts.p() {
        return Err(IsdError::Dimension("split and data disagree on p".into()));
    }
    if ts.n() < split.dim_inv() + 2 {
        return Err(IsdError::InsufficientData(format!(
            "invariant fit needs at least {} rows, got {}",
            split.dim_inv() + 2,
            ts.n()
        )));
    }
    let pooled = pooled_moments(ts).or_else(|_| pooled_unchecked(ts))?;
    let (xc, _) = center_columns(ts.x());
    let (yc, _) = center(ts.y());
    let beta_inv = reduced_ls(&xc, &yc, &split.u_inv(), "invariant fit")?;
    let (intercept_mode, gamma0) = policy.classify(intercepts);
    Ok(IsdModel {
        split: split.clone(),
        beta_inv,
        intercept_mode,
        gamma0,
        pooled,
    })
}

// pooled moments for short series where n < p + 2 but the invariant side is small
fn pooled_unchecked(ts: &TimeSeries) -> Result<PooledMoments> {
    let n = ts.n() as f64;
    let (xc, mean_x) = center_columns(ts.x());
    let (yc, mean_y) = center(ts.y());
    let var_x_bar = linalg::symmetrize(&(xc.transpose() * &xc / n));
    Ok(PooledMoments {
        cov_xy_bar: xc.transpose() * yc / n,
        positive_definite: linalg::inverse_spd(&var_x_bar).is_ok(),
        var_x_bar,
        mean_x,
        mean_y,
        n: ts.n(),
    })
}

/// Residual component on an adaptation window, given a fitted invariant model.
pub fn fit_adaptation(adapt: &TimeSeries, model: &IsdModel) -> Result<AdaptationFit> {
    let split = &model.split;
    if adapt.p() != split.p() {
        return Err(IsdError::Dimension("adaptation data and model disagree on p".into()));
    }
    let m = adapt.n();
    if m < split.dim_res() + 2 {
        return Err(IsdError::Underdetermined {
            rows: m,
            params: split.dim_res() + 1,
        });
    }
    let target = adapt.y() - adapt.x() * &model.beta_inv;
    let (xc, mean_x) = center_columns(adapt.x());
    let (tc, target_mean) = center(&target);
    let delta_res = reduced_ls(&xc, &tc, &split.u_res(), "adaptation fit")?;
    let gamma_isd = &model.beta_inv + &delta_res;
    let intercept = match model.intercept_mode {
        InterceptMode::Constant => model.gamma0,
        InterceptMode::Adaptive => target_mean - mean_x.dot(&delta_res),
    };
    let t0 = adapt.t0();
    Ok(AdaptationFit {
        delta_res,
        gamma_isd,
        intercept,
        window: (t0, t0 + m as i64),
    })
}

pub fn predict(coeffs: &DVector<f64>, intercept: f64, x: &DVector<f64>) -> f64 {
    intercept + x.dot(coeffs)
}

/// OLS slope and intercept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsFit {
    #[serde(with = "serde_vector")]
    pub slope: DVector<f64>,
    pub intercept: f64,
}

fn ols(ts: &TimeSeries) -> Result<OlsFit> {
    let (n, p) = (ts.n(), ts.p());
    if n < p + 1 {
        return Err(IsdError::Underdetermined {
            rows: n,
            params: p + 1,
        });
    }
    let (xc, mean_x) = center_columns(ts.x());
    let (yc, mean_y) = center(ts.y());
    let slope = reduced_ls(&xc, &yc, &DMatrix::identity(p, p), "OLS")?;
    Ok(OlsFit {
        intercept: mean_y - mean_x.dot(&slope),
        slope,
    })
}

/// OLS with intercept on the whole historical series.
pub fn pooled_ols(ts: &TimeSeries) -> Result<OlsFit> {
    ols(ts)
}

/// OLS with intercept on an adaptation window only.
pub fn rolling_ols(adapt: &TimeSeries) -> Result<OlsFit> {
    ols(adapt)
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Magging estimate of the maximin effect: the point of the convex hull of the
/// window slopes with the smallest `Σ`-norm.
pub fn magging(gammas: &[DVector<f64>], pooled_var: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = gammas.len();
    let first = gammas
        .first()
        .ok_or_else(|| IsdError::InsufficientData("magging needs at least one slope".into()))?;
    let p = first.len();
    if pooled_var.shape() != (p, p) || gammas.iter().any(|g| g.len() != p) {
        return Err(IsdError::Dimension("magging inputs disagree on p".into()));
    }
    let b = DMatrix::from_fn(p, k, |i, j| gammas[j][i]);
    let q = linalg::symmetrize(&(b.transpose() * pooled_var * &b));
    let lipschitz = linalg::sym_eig(&q)?.max_value();
    let mut w = DVector::from_element(k, 1.0 / k as f64);
    if k > 1 && lipschitz > 0.0 {
        let step = 1.0 / lipschitz;
        for _ in 0..10_000 {
            let grad = &q * &w;
            let next = project_simplex(&(&w - grad * step));
            let moved = (&next - &w).amax();
            w = next;
            if moved <= 1e-12 {
                break;
            }
        }
    }
    Ok(b * w)
}

/// Output of the population algorithm.
#[derive(Debug, Clone)]
pub struct PopulationIsd {
    pub beta_inv: DVector<f64>,
    /// Residual component at the last supplied time point.
    pub delta_res_n: DVector<f64>,
    pub split: SubspaceSplit,
    pub decomposition: BlockDecomposition,
}

/// Residual component `U_res (U_resᵀ Σ U_res)⁻¹ U_resᵀ Σ (γ − β_inv)` at one time point.
pub fn population_delta_res(
    split: &SubspaceSplit,
    sigma: &DMatrix<f64>,
    gamma: &DVector<f64>,
    beta_inv: &DVector<f64>,
) -> Result<DVector<f64>> {
    let pinv = linalg::pinv_projected(sigma, &split.u_res())?;
    Ok(pinv * sigma * (gamma - beta_inv))
}

/// Population ISD from exact covariances `Σ_t` and coefficients `γ_{0,t}`.
///
/// A block is invariant when its projection of `γ_{0,t}` moves by at most
/// `const_tol` over `t`.
pub fn population_isd(
    sigmas: &[DMatrix<f64>],
    gammas: &[DVector<f64>],
    const_tol: f64,
) -> Result<PopulationIsd> {
    if sigmas.len() != gammas.len() || sigmas.is_empty() {
        return Err(IsdError::Dimension(
            "population ISD needs equally many covariances and coefficients".into(),
        ));
    }
    let p = sigmas[0].nrows();
    for (t, s) in sigmas.iter().enumerate() {
        if s.shape() != (p, p) || gammas[t].len() != p {
            return Err(IsdError::Dimension(format!("time point {t} has the wrong shape")));
        }
        if !linalg::is_symmetric(s, 1e-10) || linalg::inverse_spd(s).is_err() {
            return Err(IsdError::NotPositiveDefinite(format!("Σ at time point {t}")));
        }
    }
    let v = uwedge(
        sigmas,
        None,
        UwedgeOptions {
            tol: 1e-12,
            max_iter: 1000,
        },
    )?;
    let bd = select_blocks(&v, sigmas)?;

    let mut inv = Vec::new();
    let mut res = Vec::new();
    for j in 0..bd.num_blocks() {
        let proj = bd.block_projector(j);
        let ref_proj = &proj * &gammas[0];
        let dev = gammas
            .iter()
            .map(|g| (&proj * g - &ref_proj).amax())
            .fold(0.0, f64::max);
        if dev <= const_tol {
            inv.extend_from_slice(&bd.blocks[j]);
        } else {
            res.extend_from_slice(&bd.blocks[j]);
        }
    }
    let split = SubspaceSplit::from_bases(
        &linalg::select_columns(&bd.u_hat, &inv),
        &linalg::select_columns(&bd.u_hat, &res),
        0.0,
    )?;

    let n = sigmas.len() as f64;
    let sigma_bar = sigmas.iter().fold(DMatrix::zeros(p, p), |a, s| a + s) / n;
    let cov_bar = sigmas
        .iter()
        .zip(gammas)
        .fold(DVector::zeros(p), |a, (s, g)| a + s * g)
        / n;
    let beta_inv = linalg::pinv_projected(&sigma_bar, &split.u_inv())? * cov_bar;
    let last = sigmas.len() - 1;
    let delta_res_n = population_delta_res(&split, &sigmas[last], &gammas[last], &beta_inv)?;
    Ok(PopulationIsd {
        beta_inv,
        delta_res_n,
        split,
        decomposition: bd,
    })
}
