//! Dense kernels shared by the rest of the crate.
//!
//! Everything here works on small matrices (p ≤ 64) and is deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{IsdError, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEig> {
    if !a.is_square() {
        return Err(IsdError::Dimension(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(IsdError::NonFinite("sym_eig input".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's order among repeated eigenvalues
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

pub fn lambda_min(a: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eig(a)?.min_value())
}

fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !a.is_square() {
        return Err(IsdError::Dimension(format!("{what}: matrix is not square")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(IsdError::NonFinite(what.to_string()));
    }
    // Cholesky happily factors numerically singular matrices; guard with a pivot check.
    let chol = Cholesky::new(symmetrize(a))
        .ok_or_else(|| IsdError::NotPositiveDefinite(what.to_string()))?;
    let l = chol.l_dirty();
    let diag_max = (0..a.nrows()).map(|i| l[(i, i)]).fold(0.0_f64, f64::max);
    let diag_min = (0..a.nrows())
        .map(|i| l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if !(diag_min > diag_max * 1e-7) {
        return Err(IsdError::NotPositiveDefinite(what.to_string()));
    }
    Ok(chol)
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(IsdError::Dimension(format!(
            "solve_spd: {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(cholesky(a, "solve_spd")?.solve(b))
}

pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(a, "inverse_spd")?.inverse()))
}

/// Orthonormal basis for the column span of `b`, via Householder QR.
///
/// Columns of the result are sign-fixed so that the R factor has a positive
/// diagonal, which makes the output a deterministic function of `b`.
pub fn qr_orthonormalize(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = b.shape();
    if k == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if k > n {
        return Err(IsdError::Singular(format!(
            "qr_orthonormalize: {k} columns in dimension {n}"
        )));
    }
    let qr = b.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let rmax = (0..k).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
    for i in 0..k {
        let d = r[(i, i)];
        if !(d.abs() > rmax * 1e-10) {
            return Err(IsdError::Singular(
                "qr_orthonormalize: rank-deficient input".into(),
            ));
        }
        if d < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    Ok(q)
}

/// Closed-form pseudoinverse `U (Uᵀ Σ U)⁻¹ Uᵀ` of the compressed matrix
/// `U Uᵀ Σ U Uᵀ`, valid when `U` has orthonormal columns spanning a
/// Σ-invariant subspace.
pub fn pinv_projected(sigma: &DMatrix<f64>, u_block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    if u_block.nrows() != p || !sigma.is_square() {
        return Err(IsdError::Dimension(
            "pinv_projected: basis and covariance disagree".into(),
        ));
    }
    if u_block.ncols() == 0 {
        return Ok(DMatrix::zeros(p, p));
    }
    let reduced = u_block.transpose() * sigma * u_block;
    let inv = inverse_spd(&reduced)?;
    Ok(u_block * inv * u_block.transpose())
}

/// Nearest orthogonal matrix in Frobenius norm (polar factor `W Zᵀ` of the SVD).
pub fn nearest_orthogonal(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| IsdError::Singular("svd failed to produce U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| IsdError::Singular("svd failed to produce Vᵀ".into()))?;
    let smin = svd.singular_values.min();
    if !(smin > svd.singular_values.max() * 1e-12) {
        return Err(IsdError::Singular("nearest_orthogonal: singular input".into()));
    }
    Ok(u * v_t)
}

/// Columns of `m` selected by `cols`, in order.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let means = column_means(x);
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (xc, means)
}

pub fn center(v: &DVector<f64>) -> (DVector<f64>, f64) {
    let mean = if v.is_empty() { 0.0 } else { v.mean() };
    (v.add_scalar(-mean), mean)
}

/// Least squares of centered `y` on the centered columns `x·basis`, returning the
/// coefficient in the original coordinates (`basis · reduced_coef`).
///
/// With `basis = I` this is ordinary least squares with an intercept.
pub(crate) fn reduced_ls(
    xc: &DMatrix<f64>,
    yc: &DVector<f64>,
    basis: &DMatrix<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    let p = xc.ncols();
    if basis.ncols() == 0 {
        return Ok(DVector::zeros(p));
    }
    let z = xc * basis;
    let gram = z.transpose() * &z;
    let rhs = z.transpose() * yc;
    let coef = solve_spd(&gram, &rhs).map_err(|e| match e {
        IsdError::NotPositiveDefinite(_) => IsdError::Singular(format!("{what}: reduced Gram")),
        other => other,
    })?;
    Ok(basis * coef)
}

/// Row-major nested vectors, the JSON layout used for every matrix we serialize.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(IsdError::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// `f64` fields where NaN means "not applicable"; NaN is written as `null`.
pub(crate) mod serde_nan {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub(crate) mod serde_matrices {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(super::to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter()
            .map(|rows| super::from_rows(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}
