//! Approximate joint diagonalization with the uniformly weighted exhaustive
//! diagonalization (uwedge) iteration.
//!
//! Given symmetric `M_1..M_K`, find an invertible `V` whose rows make every
//! `V M_k Vᵀ` as diagonal as possible in the least-squares sense. `M_1` must be
//! positive definite; it seeds the whitening initializer and fixes the row scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{IsdError, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct Diagonalizer {
    /// Demixing matrix; row `i` is the `i`-th direction.
    pub v: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct UwedgeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for UwedgeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

/// `(1/K) Σ_k Σ_{i≠j} (V M_k Vᵀ)_{ij}²`.
pub fn offdiag_cost(v: &DMatrix<f64>, mats: &[DMatrix<f64>]) -> f64 {
    if mats.is_empty() {
        return 0.0;
    }
    let total: f64 = mats
        .iter()
        .map(|m| {
            let c = v * m * v.transpose();
            let diag: f64 = c.diagonal().iter().map(|d| d * d).sum();
            c.norm_squared() - diag
        })
        .sum();
    (total / mats.len() as f64).max(0.0)
}

fn check_inputs(mats: &[DMatrix<f64>]) -> Result<usize> {
    let first = mats
        .first()
        .ok_or_else(|| IsdError::InvalidParameter("uwedge needs at least one matrix".into()))?;
    let p = first.nrows();
    for (k, m) in mats.iter().enumerate() {
        if m.shape() != (p, p) {
            return Err(IsdError::Dimension(format!(
                "matrix {k} is {}x{}, expected {p}x{p}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !linalg::is_symmetric(m, 1e-10) {
            return Err(IsdError::NotSymmetric(format!("input matrix {k}")));
        }
    }
    Ok(p)
}

fn normalize_rows(v: &mut DMatrix<f64>, m1: &DMatrix<f64>) -> Result<()> {
    let c = &*v * m1 * v.transpose();
    for i in 0..v.nrows() {
        let d = c[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(IsdError::Singular(
                "uwedge: demixing row collapsed against the first matrix".into(),
            ));
        }
        v.row_mut(i).scale_mut(1.0 / d.sqrt());
    }
    Ok(())
}

/// Whitening initializer `Λ^{-1/2} Eᵀ` from the eigendecomposition of `M_1`.
pub fn whitening_init(m1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = linalg::sym_eig(m1)?;
    if !(eig.min_value() > 0.0) {
        return Err(IsdError::NotPositiveDefinite(
            "uwedge: first matrix must be positive definite".into(),
        ));
    }
    let p = m1.nrows();
    let scale = DVector::from_iterator(p, eig.values.iter().map(|l| 1.0 / l.sqrt()));
    Ok(DMatrix::from_diagonal(&scale) * eig.vectors.transpose())
}

pub fn uwedge(
    mats: &[DMatrix<f64>],
    init: Option<&DMatrix<f64>>,
    opts: UwedgeOptions,
) -> Result<Diagonalizer> {
    let p = check_inputs(mats)?;
    let m1 = &mats[0];
    if linalg::inverse_spd(m1).is_err() {
        return Err(IsdError::NotPositiveDefinite(
            "uwedge: first matrix must be positive definite".into(),
        ));
    }
    let mut v = match init {
        Some(v0) => {
            if v0.shape() != (p, p) {
                return Err(IsdError::Dimension("uwedge: init has the wrong shape".into()));
            }
            v0.clone()
        }
        None => whitening_init(m1)?,
    };
    normalize_rows(&mut v, m1)?;

    let k = mats.len();
    let mut converged = false;
    let mut iterations = 0;
    let mut transformed: Vec<DMatrix<f64>> = mats.iter().map(|m| &v * m * v.transpose()).collect();

    while iterations < opts.max_iter {
        iterations += 1;
        // diag[k][i] = (C_k)_ii
        let diag: Vec<DVector<f64>> = transformed.iter().map(|c| c.diagonal()).collect();
        let mut a = DMatrix::<f64>::identity(p, p);
        for i in 0..p {
            for j in (i + 1)..p {
                let (mut sii, mut sjj, mut sij) = (0.0, 0.0, 0.0);
                let (mut bi, mut bj) = (0.0, 0.0);
                for kk in 0..k {
                    let di = diag[kk][i];
                    let dj = diag[kk][j];
                    let cij = transformed[kk][(i, j)];
                    sii += di * di;
                    sjj += dj * dj;
                    sij += di * dj;
                    bi += di * cij;
                    bj += dj * cij;
                }
                // normal equations for C_ij ≈ E_ij d_j + E_ji d_i
                let det = sii * sjj - sij * sij;
                if det <= 1e-14 * sii * sjj || det <= f64::MIN_POSITIVE {
                    continue;
                }
                a[(i, j)] = (sii * bj - sij * bi) / det;
                a[(j, i)] = (sjj * bi - sij * bj) / det;
            }
        }
        let step = (&a - DMatrix::<f64>::identity(p, p)).norm();
        let a_lu = a.lu();
        v = a_lu
            .solve(&v)
            .ok_or_else(|| IsdError::Singular("uwedge: update matrix is singular".into()))?;
        normalize_rows(&mut v, m1)?;
        transformed = mats.iter().map(|m| &v * m * v.transpose()).collect();
        if step <= opts.tol {
            converged = true;
            break;
        }
    }

    let final_cost = offdiag_cost(&v, mats);
    Ok(Diagonalizer {
        v,
        iterations,
        converged,
        final_cost,
    })
}
