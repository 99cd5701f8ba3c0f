//! Invariant / residual classification of estimated blocks and the threshold
//! cross-validation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimeSeries, WindowPlan};
use crate::error::{IsdError, Result};
use crate::estimators::{fit_adaptation, fit_invariant, InterceptPolicy};
use crate::jbd::BlockDecomposition;
use crate::linalg::{self, center, serde_matrix, serde_vector};

/// `|ĉ_k^j|`: absolute correlation, in window `k`, between the residual and the
/// fitted part of block `j`'s share of the averaged coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceScores {
    #[serde(with = "serde_matrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub mean_abs: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceSplit {
    /// `[U_inv | U_res]`, each side orthonormal.
    #[serde(with = "serde_matrix")]
    pub u_hat: DMatrix<f64>,
    /// Columns of the block decomposition's basis assigned to each side.
    pub inv_columns: Vec<usize>,
    pub res_columns: Vec<usize>,
    /// Threshold that produced the split; NaN (`null`) for given bases.
    #[serde(with = "crate::linalg::serde_nan")]
    pub lambda: f64,
    pub dims: (usize, usize),
}

impl SubspaceSplit {
    pub fn p(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn dim_inv(&self) -> usize {
        self.dims.0
    }

    pub fn dim_res(&self) -> usize {
        self.dims.1
    }

    pub fn u_inv(&self) -> DMatrix<f64> {
        self.u_hat.columns(0, self.dims.0).into_owned()
    }

    pub fn u_res(&self) -> DMatrix<f64> {
        self.u_hat.columns(self.dims.0, self.dims.1).into_owned()
    }

    pub fn proj_inv(&self) -> DMatrix<f64> {
        let u = self.u_inv();
        &u * u.transpose()
    }

    pub fn proj_res(&self) -> DMatrix<f64> {
        let u = self.u_res();
        &u * u.transpose()
    }

    /// Build a split directly from bases of the two sides (e.g. ground truth).
    pub fn from_bases(u_inv: &DMatrix<f64>, u_res: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let p = u_inv.nrows().max(u_res.nrows());
        if u_inv.ncols() + u_res.ncols() != p
            || (u_inv.ncols() > 0 && u_inv.nrows() != p)
            || (u_res.ncols() > 0 && u_res.nrows() != p)
        {
            return Err(IsdError::Dimension("split bases must fill the space".into()));
        }
        let qi = linalg::qr_orthonormalize(&resize_rows(u_inv, p))?;
        let qr = linalg::qr_orthonormalize(&resize_rows(u_res, p))?;
        let mut u_hat = DMatrix::zeros(p, p);
        u_hat.columns_mut(0, qi.ncols()).copy_from(&qi);
        u_hat.columns_mut(qi.ncols(), qr.ncols()).copy_from(&qr);
        Ok(Self {
            u_hat,
            inv_columns: (0..qi.ncols()).collect(),
            res_columns: (qi.ncols()..p).collect(),
            lambda,
            dims: (qi.ncols(), qr.ncols()),
        })
    }
}

fn resize_rows(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    if m.nrows() == p {
        m.clone()
    } else {
        DMatrix::zeros(p, 0)
    }
}

/// Absolute correlation of the centered inputs; 0 if either is flat.
fn abs_corr_fitted(resid: &DVector<f64>, fitted: &DVector<f64>, y_ss: f64) -> f64 {
    let (r, _) = center(resid);
    let (f, _) = center(fitted);
    let f_ss = f.norm_squared();
    let r_ss = r.norm_squared();
    // a component that explains nothing cannot violate invariance
    if f_ss <= 1e-24 * y_ss || r_ss <= 1e-24 * y_ss {
        return 0.0;
    }
    (r.dot(&f) / (r_ss * f_ss).sqrt()).abs().min(1.0)
}

pub fn invariance_scores(
    ts: &TimeSeries,
    plan: &WindowPlan,
    bd: &BlockDecomposition,
    gamma_bar: &DVector<f64>,
) -> Result<InvarianceScores> {
    if gamma_bar.len() != ts.p() || bd.p() != ts.p() {
        return Err(IsdError::Dimension(
            "gamma_bar, decomposition and data disagree on p".into(),
        ));
    }
    if gamma_bar.iter().any(|v| !v.is_finite()) {
        return Err(IsdError::NonFinite("gamma_bar".into()));
    }
    plan.validate_for(ts.n(), ts.p())?;
    let q = bd.num_blocks();
    let k = plan.len();
    let projected: Vec<DVector<f64>> = (0..q).map(|j| bd.block_projector(j) * gamma_bar).collect();
    let mut c = DMatrix::zeros(k, q);
    for (row, &(s, e)) in plan.windows.iter().enumerate() {
        let x = ts.x().rows(s, e - s);
        let y = ts.y().rows(s, e - s).into_owned();
        let (yc, _) = center(&y);
        let y_ss = yc.norm_squared();
        if !(y_ss > 0.0) {
            return Err(IsdError::InsufficientData(format!(
                "window [{s}, {e}) has zero response variance"
            )));
        }
        for (j, b) in projected.iter().enumerate() {
            let fitted = x * b;
            let resid = &y - &fitted;
            c[(row, j)] = abs_corr_fitted(&resid, &fitted, y_ss);
        }
    }
    let mean_abs = DVector::from_iterator(q, c.column_iter().map(|col| col.mean()));
    Ok(InvarianceScores { c, mean_abs })
}

/// Assign block `j` to the invariant side iff `mean_abs[j] ≤ lambda`.
pub fn split_subspaces(
    scores: &InvarianceScores,
    bd: &BlockDecomposition,
    lambda: f64,
) -> Result<SubspaceSplit> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(IsdError::InvalidParameter(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if scores.mean_abs.len() != bd.num_blocks() {
        return Err(IsdError::Dimension("one score per block expected".into()));
    }
    let mut inv_columns = Vec::new();
    let mut res_columns = Vec::new();
    for (j, block) in bd.blocks.iter().enumerate() {
        if scores.mean_abs[j] <= lambda {
            inv_columns.extend_from_slice(block);
        } else {
            res_columns.extend_from_slice(block);
        }
    }
    let p = bd.p();
    let qi = linalg::qr_orthonormalize(&linalg::select_columns(&bd.u_hat, &inv_columns))?;
    let qr = linalg::qr_orthonormalize(&linalg::select_columns(&bd.u_hat, &res_columns))?;
    let mut u_hat = DMatrix::zeros(p, p);
    u_hat.columns_mut(0, qi.ncols()).copy_from(&qi);
    u_hat.columns_mut(qi.ncols(), qr.ncols()).copy_from(&qr);
    Ok(SubspaceSplit {
        u_hat,
        dims: (inv_columns.len(), res_columns.len()),
        inv_columns,
        res_columns,
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    /// Adaptation window length inside each held-out fold; `None` means `2p`.
    pub d: Option<usize>,
    pub t_se: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            d: None,
            t_se: 1.0,
        }
    }
}

/// Per-threshold cross-validation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub selected: f64,
}

/// Smallest grid value whose mean is within `t_se` standard errors of the best.
pub fn one_se_rule(grid: &[f64], mean: &[f64], se: &[f64], t_se: f64) -> f64 {
    let best = (0..grid.len())
        .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
        .expect("non-empty grid");
    let cutoff = mean[best] - t_se * se[best];
    grid.iter()
        .zip(mean)
        .filter(|(_, &m)| m >= cutoff)
        .map(|(&l, _)| l)
        .fold(f64::INFINITY, f64::min)
}

/// Select `lambda` by rolling-window one-step explained variance on held-out folds.
///
/// `intercepts` are the historical per-window intercept estimates used for the
/// intercept policy of each refit.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_lambda(
    ts: &TimeSeries,
    bd: &BlockDecomposition,
    scores: &InvarianceScores,
    intercepts: &[f64],
    policy: InterceptPolicy,
    opts: CvOptions,
) -> Result<CvReport> {
    let p = ts.p();
    let n = ts.n();
    let folds = opts.folds;
    let d = opts.d.unwrap_or(2 * p);
    if folds < 2 {
        return Err(IsdError::InvalidParameter("cross-validation needs at least 2 folds".into()));
    }
    let fold_len = n / folds;
    if fold_len <= d {
        return Err(IsdError::InsufficientData(format!(
            "{folds} folds of {fold_len} rows leave no evaluation points for d = {d}"
        )));
    }

    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain(scores.mean_abs.iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let splits: Vec<SubspaceSplit> = grid
        .iter()
        .map(|&l| split_subspaces(scores, bd, l))
        .collect::<Result<_>>()?;
    for s in &splits {
        if d < s.dim_res() + 2 {
            return Err(IsdError::InsufficientData(format!(
                "d = {d} is too short for a residual dimension of {}",
                s.dim_res()
            )));
        }
    }

    // fold_scores[g][l]
    let fold_scores: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|split| {
            (0..folds)
                .map(|l| {
                    let (start, end) = (l * fold_len, (l + 1) * fold_len);
                    let train = ts.without(start, end)?;
                    let held = ts.slice(start, end)?;
                    let model = fit_invariant(&train, split, intercepts, policy)?;
                    let mut total = 0.0;
                    for t_star in d..held.n() {
                        let window = held.slice(t_star - d, t_star)?;
                        let fit = fit_adaptation(&window, &model)?;
                        let x = held.x().row(t_star).transpose();
                        let y = held.y()[t_star];
                        let pred = fit.intercept + x.dot(&fit.gamma_isd);
                        total += y * y - (y - pred) * (y - pred);
                    }
                    Ok(total / (held.n() - d) as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let lf = folds as f64;
    let mean: Vec<f64> = fold_scores.iter().map(|s| s.iter().sum::<f64>() / lf).collect();
    let se: Vec<f64> = fold_scores
        .iter()
        .zip(&mean)
        .map(|(s, m)| s.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt() / lf)
        .collect();
    let selected = one_se_rule(&grid, &mean, &se, opts.t_se);
    Ok(CvReport {
        grid,
        mean,
        se,
        selected,
    })
}
