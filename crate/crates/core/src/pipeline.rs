//! End-to-end estimation: windows, moments, AJD, block search, invariance
//! scores, threshold choice and the invariant fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ajd::{uwedge, UwedgeOptions};
use crate::dataset::{make_windows, TimeSeries, WindowPlan, WindowScheme};
use crate::decomposition::{
    cross_validate_lambda, invariance_scores, split_subspaces, CvOptions, CvReport,
    InvarianceScores, SubspaceSplit,
};
use crate::error::{Result, StageExt};
use crate::estimators::{fit_invariant, InterceptPolicy, IsdModel};
use crate::jbd::{select_blocks, BlockDecomposition};
use crate::moments::{weighted_gamma, window_moments, GammaMode, WindowMoments};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Cv(CvOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsdConfig {
    pub k: usize,
    /// Window length; `None` means `n / 8`.
    pub w: Option<usize>,
    pub scheme: WindowScheme,
    pub gamma_mode: GammaMode,
    pub lambda: LambdaChoice,
    pub intercept_policy: InterceptPolicy,
    pub uwedge_tol: f64,
    pub uwedge_max_iter: usize,
}

impl Default for IsdConfig {
    fn default() -> Self {
        let uw = UwedgeOptions::default();
        Self {
            k: 25,
            w: None,
            scheme: WindowScheme::EquallySpaced,
            gamma_mode: GammaMode::Plain,
            lambda: LambdaChoice::Cv(CvOptions::default()),
            intercept_policy: InterceptPolicy::default(),
            uwedge_tol: uw.tol,
            uwedge_max_iter: uw.max_iter,
        }
    }
}

impl IsdConfig {
    pub fn plan_for(&self, n: usize) -> Result<WindowPlan> {
        let w = match self.scheme {
            WindowScheme::Contiguous => self.w.unwrap_or(n / self.k.max(1)),
            WindowScheme::EquallySpaced => self.w.unwrap_or(n / 8),
        };
        make_windows(n, self.k, w, self.scheme)
    }
}

/// Everything the pipeline computed, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct IsdFit {
    pub plan: WindowPlan,
    pub moments: Vec<WindowMoments>,
    pub gamma_bar: DVector<f64>,
    pub uwedge_iterations: usize,
    pub uwedge_converged: bool,
    pub decomposition: BlockDecomposition,
    pub scores: InvarianceScores,
    pub cv: Option<CvReport>,
    pub split: SubspaceSplit,
    pub model: IsdModel,
}

/// Run the estimation pipeline on historical data. Errors carry the stage name.
pub fn fit_isd(ts: &TimeSeries, cfg: &IsdConfig) -> Result<IsdFit> {
    let plan = cfg.plan_for(ts.n()).stage("windows")?;
    plan.validate_for(ts.n(), ts.p()).stage("windows")?;
    let moments = window_moments(ts, &plan).stage("moments")?;
    let sigmas: Vec<DMatrix<f64>> = moments.iter().map(|m| m.sigma_hat.clone()).collect();
    let opts = UwedgeOptions {
        tol: cfg.uwedge_tol,
        max_iter: cfg.uwedge_max_iter,
    };
    let diag = uwedge(&sigmas, None, opts).stage("uwedge")?;
    let bd = select_blocks(&diag, &sigmas).stage("select_blocks")?;
    let gamma_bar = weighted_gamma(&moments, cfg.gamma_mode).stage("moments")?;
    let scores = invariance_scores(ts, &plan, &bd, &gamma_bar).stage("invariance_scores")?;
    let intercepts: Vec<f64> = moments.iter().map(|m| m.gamma0_hat).collect();
    let (lambda, cv) = match cfg.lambda {
        LambdaChoice::Fixed(l) => (l, None),
        LambdaChoice::Cv(opts) => {
            let report = cross_validate_lambda(ts, &bd, &scores, &intercepts, cfg.intercept_policy, opts)
                .stage("cross_validation")?;
            (report.selected, Some(report))
        }
    };
    let split = split_subspaces(&scores, &bd, lambda).stage("split")?;
    let model = fit_invariant(ts, &split, &intercepts, cfg.intercept_policy).stage("fit_invariant")?;
    Ok(IsdFit {
        plan,
        moments,
        gamma_bar,
        uwedge_iterations: diag.iterations,
        uwedge_converged: diag.converged,
        decomposition: bd,
        scores,
        cv,
        split,
        model,
    })
}

/// Fit the invariant component with a known split (oracle mode).
pub fn fit_with_split(ts: &TimeSeries, cfg: &IsdConfig, split: &SubspaceSplit) -> Result<IsdModel> {
    let plan = cfg.plan_for(ts.n()).stage("windows")?;
    let moments = window_moments(ts, &plan).stage("moments")?;
    let intercepts: Vec<f64> = moments.iter().map(|m| m.gamma0_hat).collect();
    fit_invariant(ts, split, &intercepts, cfg.intercept_policy).stage("fit_invariant")
}

impl IsdFit {
    /// Short human-readable diagnostics.
    pub fn summary(&self) -> String {
        format!(
            "blocks {:?}, tau* {}, scores {:?}, lambda {}, dims {:?}",
            self.decomposition.block_dims(),
            self.decomposition.tau_star,
            self.scores.mean_abs.as_slice(),
            self.split.lambda,
            self.split.dims
        )
    }
}
