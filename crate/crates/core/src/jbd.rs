//! Joint block diagonalization from an approximate joint diagonalizer.
//!
//! The AJD output `V` is permuted so that the residual off-diagonal mass of the
//! transformed covariances collects into common diagonal blocks. Block sizes
//! come from a thresholded correlation graph; the threshold minimizes mean
//! off-block-diagonal magnitude plus a penalty on the number of in-block entries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ajd::Diagonalizer;
use crate::error::{IsdError, Result};
use crate::linalg::{self, serde_matrix};

/// Estimated joint block diagonalizer with column groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDecomposition {
    /// Orthogonal basis, columns grouped block by block.
    #[serde(with = "serde_matrix")]
    pub u_hat: DMatrix<f64>,
    /// Column index sets of `u_hat`, sorted by smallest member.
    pub blocks: Vec<Vec<usize>>,
    /// Chosen threshold; `null` in JSON when the singleton partition won.
    #[serde(with = "serde_tau")]
    pub tau_star: f64,
    #[serde(with = "crate::linalg::serde_nan")]
    pub objective: f64,
}

impl BlockDecomposition {
    pub fn p(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Orthonormal basis of block `j`.
    pub fn block_basis(&self, j: usize) -> DMatrix<f64> {
        linalg::select_columns(&self.u_hat, &self.blocks[j])
    }

    pub fn block_projector(&self, j: usize) -> DMatrix<f64> {
        let b = self.block_basis(j);
        &b * b.transpose()
    }

    /// Wrap a known orthogonal basis and partition, e.g. a ground-truth split.
    pub fn from_basis(u: DMatrix<f64>, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let p = u.nrows();
        if !u.is_square() {
            return Err(IsdError::Dimension("basis must be square".into()));
        }
        check_partition(&blocks, p)?;
        let mut blocks = blocks;
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        Ok(Self {
            u_hat: u,
            blocks,
            tau_star: f64::NAN,
            objective: f64::NAN,
        })
    }
}

mod serde_tau {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub(crate) fn check_partition(blocks: &[Vec<usize>], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    for b in blocks {
        if b.is_empty() {
            return Err(IsdError::InvalidParameter("empty block".into()));
        }
        for &i in b {
            if i >= p || seen[i] {
                return Err(IsdError::InvalidParameter(format!(
                    "blocks do not partition 0..{p}: index {i}"
                )));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(IsdError::InvalidParameter(format!(
            "blocks do not cover 0..{p}"
        )));
    }
    Ok(())
}

/// Entrywise maximum of `|V M_k Vᵀ|` over the family.
#[derive(Debug, Clone)]
pub struct ResidualProfile {
    pub sigma_max: DMatrix<f64>,
}

pub fn residual_profile(v: &Diagonalizer, mats: &[DMatrix<f64>]) -> Result<ResidualProfile> {
    let p = v.v.nrows();
    let mut sigma_max = DMatrix::zeros(p, p);
    for (k, m) in mats.iter().enumerate() {
        if m.shape() != (p, p) {
            return Err(IsdError::Dimension(format!("matrix {k} has the wrong shape")));
        }
        let c = &v.v * m * v.v.transpose();
        sigma_max.zip_apply(&c, |acc: &mut f64, x: f64| *acc = acc.max(x.abs()));
    }
    Ok(ResidualProfile {
        sigma_max: linalg::symmetrize(&sigma_max),
    })
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the graph with an edge wherever `sigma_max[i,j] ≥ tau`.
pub fn blocks_at_threshold(profile: &ResidualProfile, tau: f64) -> Vec<Vec<usize>> {
    let s = &profile.sigma_max;
    let p = s.nrows();
    let mut dsu = DisjointSet::new(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if s[(i, j)] >= tau {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; p];
    for i in 0..p {
        let r = dsu.find(i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    // members come out ascending, and groups are created in order of their
    // smallest member
    groups
}

/// Mean absolute entry outside the diagonal blocks; 0 when there is none.
fn off_block_mean(c: &DMatrix<f64>, label: &[usize]) -> f64 {
    let p = c.nrows();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..p {
        for j in 0..p {
            if label[i] != label[j] {
                sum += c[(i, j)].abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn labels(blocks: &[Vec<usize>], p: usize) -> Vec<usize> {
    let mut label = vec![0; p];
    for (b, members) in blocks.iter().enumerate() {
        for &i in members {
            label[i] = b;
        }
    }
    label
}

/// Penalized threshold objective for a candidate partition.
pub(crate) fn threshold_objective(
    transformed: &[DMatrix<f64>],
    blocks: &[Vec<usize>],
    nu: f64,
) -> f64 {
    let p = transformed[0].nrows();
    let label = labels(blocks, p);
    let obd = transformed
        .iter()
        .map(|c| off_block_mean(c, &label))
        .sum::<f64>()
        / transformed.len() as f64;
    let in_block: usize = blocks.iter().map(|b| b.len() * b.len()).sum();
    obd + nu * in_block as f64 / (p * p) as f64
}

/// Choose the block structure of `V` by the penalized threshold search.
pub fn select_blocks(v: &Diagonalizer, mats: &[DMatrix<f64>]) -> Result<BlockDecomposition> {
    if mats.is_empty() {
        return Err(IsdError::InvalidParameter(
            "select_blocks needs at least one matrix".into(),
        ));
    }
    let p = v.v.nrows();
    let mut nu = 0.0;
    for (k, m) in mats.iter().enumerate() {
        let lmin = linalg::lambda_min(m)?;
        if !(lmin > 0.0) {
            return Err(IsdError::NotPositiveDefinite(format!(
                "covariance estimate {k} has minimum eigenvalue {lmin:e}"
            )));
        }
        nu += lmin;
    }
    nu /= mats.len() as f64;

    let profile = residual_profile(v, mats)?;
    let transformed: Vec<DMatrix<f64>> = mats.iter().map(|m| &v.v * m * v.v.transpose()).collect();

    let mut candidates = vec![0.0];
    for i in 0..p {
        for j in (i + 1)..p {
            candidates.push(profile.sigma_max[(i, j)]);
        }
    }
    candidates.push(f64::INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<(f64, f64, Vec<Vec<usize>>)> = None;
    for &tau in &candidates {
        let blocks = blocks_at_threshold(&profile, tau);
        let j = threshold_objective(&transformed, &blocks, nu);
        // ascending taus: `<=` lets a later (larger) tau win ties
        if best.as_ref().is_none_or(|(bj, _, _)| j <= *bj) {
            best = Some((j, tau, blocks));
        }
    }
    let (objective, tau_star, blocks) = best.expect("candidate grid is never empty");

    // Columns of Vᵀ grouped by block, then the nearest orthogonal matrix.
    let order: Vec<usize> = blocks.iter().flatten().copied().collect();
    let mut u = linalg::select_columns(&v.v.transpose(), &order);
    for mut col in u.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let u_hat = linalg::nearest_orthogonal(&u)?;
    let mut start = 0;
    let grouped: Vec<Vec<usize>> = blocks
        .iter()
        .map(|b| {
            let g: Vec<usize> = (start..start + b.len()).collect();
            start += b.len();
            g
        })
        .collect();

    Ok(BlockDecomposition {
        u_hat,
        blocks: grouped,
        tau_star,
        objective,
    })
}

/// True when `basis` splits every matrix into uncorrelated blocks:
/// `max |(U^{S_i})ᵀ M_k U^{S_j}| ≤ tol` for all `k` and `i ≠ j`.
pub fn is_decorrelating(
    blocks: &[Vec<usize>],
    basis: &DMatrix<f64>,
    mats: &[DMatrix<f64>],
    tol: f64,
) -> bool {
    let parts: Vec<DMatrix<f64>> = blocks
        .iter()
        .map(|b| linalg::select_columns(basis, b))
        .collect();
    for m in mats {
        for i in 0..parts.len() {
            for j in 0..parts.len() {
                if i == j {
                    continue;
                }
                let cross = parts[i].transpose() * m * &parts[j];
                if cross.amax() > tol {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag_v(p: usize) -> Diagonalizer {
        Diagonalizer {
            v: DMatrix::identity(p, p),
            iterations: 0,
            converged: true,
            final_cost: 0.0,
        }
    }

    #[test]
    fn profile_single_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let prof = residual_profile(&diag_v(2), std::slice::from_ref(&m)).unwrap();
        assert_abs_diff_eq!(prof.sigma_max, m);
    }

    #[test]
    fn profile_takes_max() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -0.4, -0.4, 1.0]);
        let prof = residual_profile(&diag_v(2), &[a, b]).unwrap();
        assert_abs_diff_eq!(prof.sigma_max[(0, 1)], 0.4);
    }

    #[test]
    fn profile_of_diagonal_family() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let prof = residual_profile(&diag_v(3), &[a.clone(), a * 2.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(prof.sigma_max[(i, j)], 0.0);
                }
            }
        }
    }

    fn linked_profile() -> ResidualProfile {
        let mut s = DMatrix::from_element(4, 4, 0.01);
        s.fill_diagonal(1.0);
        s[(0, 1)] = 0.5;
        s[(1, 0)] = 0.5;
        s[(2, 3)] = 0.5;
        s[(3, 2)] = 0.5;
        ResidualProfile { sigma_max: s }
    }

    #[test]
    fn threshold_extremes() {
        let prof = linked_profile();
        assert_eq!(blocks_at_threshold(&prof, 0.6).len(), 4);
        assert_eq!(blocks_at_threshold(&prof, 0.0), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn threshold_two_components() {
        assert_eq!(
            blocks_at_threshold(&linked_profile(), 0.1),
            vec![vec![0, 1], vec![2, 3]]
        );
    }

    #[test]
    fn components_sorted_by_min_index() {
        let mut s = DMatrix::zeros(4, 4);
        s[(0, 3)] = 1.0;
        s[(3, 0)] = 1.0;
        let blocks = blocks_at_threshold(&ResidualProfile { sigma_max: s }, 0.5);
        assert_eq!(blocks, vec![vec![0, 3], vec![1], vec![2]]);
    }

    #[test]
    fn objective_endpoints() {
        let c = DMatrix::from_element(3, 3, 1.0);
        let singletons = vec![vec![0], vec![1], vec![2]];
        let whole = vec![vec![0, 1, 2]];
        // singletons: mean off-diag 1, penalty nu * 3/9; one block: 0 + nu
        assert_abs_diff_eq!(threshold_objective(std::slice::from_ref(&c), &singletons, 0.9), 1.3);
        assert_abs_diff_eq!(threshold_objective(&[c], &whole, 0.9), 0.9);
    }

    #[test]
    fn select_rejects_non_pd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            select_blocks(&diag_v(2), &[m]),
            Err(IsdError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn decorrelating_checks() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let singles = vec![vec![0], vec![1]];
        assert!(is_decorrelating(&singles, &DMatrix::identity(2, 2), &[a], 1e-12));
        let dense = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(!is_decorrelating(&singles, &DMatrix::identity(2, 2), &[dense], 1e-6));
    }

    #[test]
    fn tau_json_null_for_infinity() {
        let bd = BlockDecomposition {
            u_hat: DMatrix::identity(2, 2),
            blocks: vec![vec![0], vec![1]],
            tau_star: f64::INFINITY,
            objective: 0.5,
        };
        let v = serde_json::to_value(&bd).unwrap();
        assert!(v["tau_star"].is_null());
        assert_eq!(v["blocks"], serde_json::json!([[0], [1]]));
        let back: BlockDecomposition = serde_json::from_value(v).unwrap();
        assert!(back.tau_star.is_infinite());
    }
}
