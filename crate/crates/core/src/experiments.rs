//! Monte-Carlo drivers for the synthetic experiments. Cells run in parallel
//! and are returned sorted by their key, never by completion order.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{contiguous_windows, TimeSeries};
use crate::error::{IsdError, Result};
use crate::estimators::{fit_adaptation, magging, pooled_ols, rolling_ols, IsdModel};
use crate::metrics::{r_squared, TidyRow};
use crate::pipeline::{fit_isd, fit_with_split, IsdConfig};
use crate::simulate::{gen_main, gen_quick_varying, GroundTruth, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Main,
    QuickVarying,
}

impl std::str::FromStr for Generator {
    type Err = IsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Self::Main),
            "quick_varying" => Ok(Self::QuickVarying),
            other => Err(IsdError::InvalidParameter(format!(
                "unknown generator '{other}' (expected main or quick_varying)"
            ))),
        }
    }
}

pub fn generate(
    generator: Generator,
    n: usize,
    seed: u64,
    schedule: &Schedule,
) -> Result<(TimeSeries, GroundTruth)> {
    match generator {
        Generator::Main => gen_main(n, seed, schedule),
        Generator::QuickVarying => gen_quick_varying(n, seed, schedule),
    }
}

/// Split generated data into history and the concatenated test segments.
pub fn history_and_test(ts: &TimeSeries, truth: &GroundTruth) -> Result<(TimeSeries, Option<TimeSeries>)> {
    let hist = ts.slice(0, truth.n_hist)?;
    let test = if ts.n() > truth.n_hist {
        Some(ts.slice(truth.n_hist, ts.n())?)
    } else {
        None
    };
    Ok((hist, test))
}

/// Outcome of one (n, seed) cell of the zero-shot experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroShotCell {
    pub n: usize,
    pub seed: u64,
    pub block_dims: Vec<usize>,
    pub dim_inv: usize,
    pub lambda: f64,
    pub beta_err: f64,
    /// `(estimator, R² on history, R² on test)`.
    pub r2: Vec<(String, f64, f64)>,
}

impl ZeroShotCell {
    pub fn r2_test(&self, estimator: &str) -> Option<f64> {
        self.r2.iter().find(|r| r.0 == estimator).map(|r| r.2)
    }

    pub fn tidy(&self) -> Vec<TidyRow> {
        let mut rows = vec![
            TidyRow {
                estimator: "isd".into(),
                seed: self.seed,
                n: self.n,
                m: None,
                metric: "beta_inv_mse".into(),
                value: self.beta_err,
            },
            TidyRow {
                estimator: "isd".into(),
                seed: self.seed,
                n: self.n,
                m: None,
                metric: "dim_inv".into(),
                value: self.dim_inv as f64,
            },
        ];
        for (name, hist, test) in &self.r2 {
            for (metric, value) in [("r2_history", *hist), ("r2_test", *test)] {
                rows.push(TidyRow {
                    estimator: name.clone(),
                    seed: self.seed,
                    n: self.n,
                    m: None,
                    metric: metric.into(),
                    value,
                });
            }
        }
        rows
    }
}

/// A cell that failed keeps its key and the error text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    pub seed: u64,
    pub m: Option<usize>,
    pub error: String,
}

/// Fit the pipeline on the history of one generated dataset and score the
/// invariant estimate, pooled OLS, magging and the oracle on history and test.
pub fn zero_shot_cell(
    generator: Generator,
    n: usize,
    seed: u64,
    cfg: &IsdConfig,
) -> Result<ZeroShotCell> {
    let (ts, truth) = generate(generator, n, seed, &Schedule::zero_shot())?;
    let (hist, test) = history_and_test(&ts, &truth)?;
    let test = test.expect("zero-shot schedule has a test segment");
    let fit = fit_isd(&hist, cfg)?;
    let ols = pooled_ols(&hist)?;
    let gammas: Vec<DVector<f64>> = fit.moments.iter().map(|m| m.gamma_hat.clone()).collect();
    let mm = magging(&gammas, &fit.model.pooled.var_x_bar)?;

    let hist_plan = fit.plan.clone();
    let test_plan = contiguous_windows(test.n(), 1)?;
    let candidates: [(&str, &DVector<f64>); 4] = [
        ("isd", &fit.model.beta_inv),
        ("oracle", &truth.beta_inv_true),
        ("ols", &ols.slope),
        ("magging", &mm),
    ];
    let mut r2 = Vec::new();
    for (name, beta) in candidates {
        r2.push((
            name.to_string(),
            r_squared(beta, 0.0, &hist, &hist_plan)?,
            r_squared(beta, 0.0, &test, &test_plan)?,
        ));
    }
    Ok(ZeroShotCell {
        n,
        seed,
        block_dims: fit.decomposition.block_dims(),
        dim_inv: fit.split.dim_inv(),
        lambda: fit.split.lambda,
        beta_err: (&fit.model.beta_inv - &truth.beta_inv_true).norm_squared(),
        r2,
    })
}

/// Run `zero_shot_cell` over the grid `ns × seeds`.
pub fn zero_shot_sweep(
    generator: Generator,
    ns: &[usize],
    seeds: &[u64],
    cfg: &IsdConfig,
) -> Result<(Vec<ZeroShotCell>, Vec<CellFailure>)> {
    if ns.is_empty() || seeds.is_empty() {
        return Err(IsdError::InvalidParameter("empty sweep".into()));
    }
    let keys: Vec<(usize, u64)> = ns
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: Vec<_> = keys
        .par_iter()
        .map(|&(n, seed)| (n, seed, zero_shot_cell(generator, n, seed, cfg)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (n, seed, r) in results {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => failed.push(CellFailure {
                n,
                seed,
                m: None,
                error: e.to_string(),
            }),
        }
    }
    Ok((ok, failed))
}

/// Rolling-window prediction errors on the test segments for one window length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationCell {
    pub seed: u64,
    pub m: usize,
    /// Mean of `(X_tᵀ(γ_{0,t} − γ̂))²` over evaluation points, `None` when infeasible.
    pub mspe_isd: Option<f64>,
    pub mspe_ols: Option<f64>,
    pub evaluations: usize,
}

impl AdaptationCell {
    pub fn tidy(&self, n: usize) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for (name, v) in [("isd", self.mspe_isd), ("ols", self.mspe_ols)] {
            rows.push(TidyRow {
                estimator: name.into(),
                seed: self.seed,
                n,
                m: Some(self.m),
                metric: "mspe".into(),
                value: v.unwrap_or(f64::NAN),
            });
        }
        rows
    }
}

/// For each test segment and each `t` whose preceding `m` rows lie inside the
/// same segment, fit on `[t−m, t)` and score the prediction at `t`.
pub fn rolling_mspe(
    test: &TimeSeries,
    truth: &GroundTruth,
    model: &IsdModel,
    m: usize,
) -> Result<(Option<f64>, Option<f64>, usize)> {
    let offset = truth.n_hist;
    let (mut isd_sum, mut ols_sum, mut count) = (0.0, 0.0, 0usize);
    let mut isd_ok = true;
    let mut ols_ok = true;
    for seg in truth.test_segments() {
        let (s, e) = (seg.start - offset, seg.end - offset);
        for t in (s + m)..e {
            let window = test.slice(t - m, t)?;
            let x = test.x().row(t).transpose();
            let g0 = truth.gamma0(t + offset);
            if isd_ok {
                match fit_adaptation(&window, model) {
                    Ok(fit) => isd_sum += x.dot(&(&fit.gamma_isd - &g0)).powi(2),
                    Err(e) if e.is_numerical() => isd_ok = false,
                    Err(e) => return Err(e),
                }
            }
            if ols_ok {
                match rolling_ols(&window) {
                    Ok(fit) => ols_sum += x.dot(&(&fit.slope - &g0)).powi(2),
                    Err(e) if e.is_numerical() => ols_ok = false,
                    Err(e) => return Err(e),
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(IsdError::InsufficientData(format!(
            "no evaluation points for m = {m}"
        )));
    }
    let c = count as f64;
    Ok((
        isd_ok.then_some(isd_sum / c),
        ols_ok.then_some(ols_sum / c),
        count,
    ))
}

/// How the split used for adaptation is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSource {
    Estimated,
    Oracle,
}

/// Adaptation experiment on the two-shift test data: `β̂^inv` from the history
/// of length `n`, then rolling windows of each length in `ms`.
pub fn adaptation_sweep(
    n: usize,
    ms: &[usize],
    seeds: &[u64],
    cfg: &IsdConfig,
    source: SplitSource,
) -> Result<(Vec<AdaptationCell>, Vec<CellFailure>)> {
    if ms.is_empty() || seeds.is_empty() {
        return Err(IsdError::InvalidParameter("empty sweep".into()));
    }
    let per_seed: Vec<_> = seeds
        .par_iter()
        .map(|&seed| -> (u64, Result<Vec<AdaptationCell>>) {
            let run = || -> Result<Vec<AdaptationCell>> {
                let (ts, truth) = gen_main(n, seed, &Schedule::two_shifts())?;
                let (hist, test) = history_and_test(&ts, &truth)?;
                let test = test.expect("two-shift schedule has test data");
                let model = match source {
                    SplitSource::Oracle => fit_with_split(&hist, cfg, &truth.oracle_split()?)?,
                    SplitSource::Estimated => fit_isd(&hist, cfg)?.model,
                };
                ms.iter()
                    .map(|&m| {
                        let (isd, ols, evaluations) = rolling_mspe(&test, &truth, &model, m)?;
                        Ok(AdaptationCell {
                            seed,
                            m,
                            mspe_isd: isd,
                            mspe_ols: ols,
                            evaluations,
                        })
                    })
                    .collect()
            };
            (seed, run())
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in per_seed {
        match r {
            Ok(cells) => ok.extend(cells),
            Err(e) => failed.push(CellFailure {
                n,
                seed,
                m: None,
                error: e.to_string(),
            }),
        }
    }
    ok.sort_by_key(|c| (c.m, c.seed));
    Ok((ok, failed))
}

/// Per-step output of a rolling adaptation run over test data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptStep {
    pub t: usize,
    pub y: f64,
    pub pred_isd: f64,
    pub pred_ols: Option<f64>,
    pub pred_inv: f64,
    pub gamma_isd: Vec<f64>,
    pub gamma_ols: Option<Vec<f64>>,
}

/// Slide a window of length `m` through `test`; at each step fit on the
/// window and predict the next row with ISD, rolling OLS and `β̂^inv` alone.
pub fn rolling_adapt(test: &TimeSeries, model: &IsdModel, m: usize) -> Result<Vec<AdaptStep>> {
    if m < model.split.dim_res() + 2 {
        return Err(IsdError::InvalidParameter(format!(
            "m = {m} is below dim_res + 2 = {}",
            model.split.dim_res() + 2
        )));
    }
    if test.n() <= m {
        return Err(IsdError::InsufficientData(format!(
            "test data has {} rows, need more than m = {m}",
            test.n()
        )));
    }
    let inv_intercept = model.zero_shot_intercept();
    (m..test.n())
        .map(|t| {
            let window = test.slice(t - m, t)?;
            let x = test.x().row(t).transpose();
            let fit = fit_adaptation(&window, model)?;
            let ols = match rolling_ols(&window) {
                Ok(o) => Some(o),
                Err(e) if e.is_numerical() => None,
                Err(e) => return Err(e),
            };
            Ok(AdaptStep {
                t,
                y: test.y()[t],
                pred_isd: fit.intercept + x.dot(&fit.gamma_isd),
                pred_ols: ols.as_ref().map(|o| o.intercept + x.dot(&o.slope)),
                pred_inv: inv_intercept + x.dot(&model.beta_inv),
                gamma_isd: fit.gamma_isd.iter().copied().collect(),
                gamma_ols: ols.map(|o| o.slope.iter().copied().collect()),
            })
        })
        .collect()
}

/// Median of a per-cell quantity grouped by `n`, in the order of `ns`.
pub fn medians_by_n<F>(cells: &[ZeroShotCell], ns: &[usize], f: F) -> Vec<f64>
where
    F: Fn(&ZeroShotCell) -> Option<f64>,
{
    ns.iter()
        .map(|&n| {
            let v: Vec<f64> = cells.iter().filter(|c| c.n == n).filter_map(&f).collect();
            crate::metrics::median(&v)
        })
        .collect()
}
