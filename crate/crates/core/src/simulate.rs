//! Seeded generators for the synthetic settings, with ground truth for oracles.
//!
//! All randomness flows from a `ChaCha20Rng` seeded with a `u64`, so a
//! (generator, n, seed) triple reproduces bit for bit on every platform.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeries;
use crate::decomposition::SubspaceSplit;
use crate::error::{IsdError, Result};
use crate::linalg::{self, serde_matrices, serde_matrix, serde_vector};

pub type SimRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Block sizes of the main setting, in coordinate order.
pub const MAIN_BLOCKS: [usize; 4] = [2, 4, 3, 1];
/// Coordinates (in the rotated basis) whose coefficients vary over time.
pub const MAIN_VARYING: [usize; 3] = [0, 1, 9];
pub const MAIN_CONSTANT_VALUE: f64 = 0.2;
pub const MAIN_NOISE_VAR: f64 = 0.64;
pub const MAIN_REGIMES: usize = 10;
pub const QUICK_SEGMENTS: usize = 20;
pub const EXAMPLE2D_NOISE_VAR: f64 = 0.25;
/// Length of the adaptation segment appended to the two-dimensional example.
pub const EXAMPLE2D_TEST_LEN: usize = 350;

/// A labelled run of consecutive rows, e.g. history or one test level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub generator: String,
    pub seed: u64,
    /// Number of historical rows; rows after this are test data.
    pub n_hist: usize,
    #[serde(with = "serde_matrix")]
    pub u_true: DMatrix<f64>,
    /// Row `t` is `γ_{0,t}ᵀ`.
    #[serde(with = "serde_matrix")]
    pub gamma0_t: DMatrix<f64>,
    #[serde(with = "serde_matrices")]
    pub sigma_regimes: Vec<DMatrix<f64>>,
    /// Half-open row ranges, one per entry of `sigma_regimes`.
    pub regime_bounds: Vec<(usize, usize)>,
    pub noise_var: f64,
    pub dims: (usize, usize),
    pub block_dims: Vec<usize>,
    /// Columns of `u_true` spanning the invariant subspace.
    pub inv_columns: Vec<usize>,
    #[serde(with = "serde_vector")]
    pub beta_inv_true: DVector<f64>,
    pub segments: Vec<Segment>,
}

impl GroundTruth {
    pub fn p(&self) -> usize {
        self.u_true.nrows()
    }

    pub fn res_columns(&self) -> Vec<usize> {
        (0..self.p()).filter(|c| !self.inv_columns.contains(c)).collect()
    }

    pub fn u_inv(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.u_true, &self.inv_columns)
    }

    pub fn u_res(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.u_true, &self.res_columns())
    }

    /// Oracle split built from the true bases.
    pub fn oracle_split(&self) -> Result<SubspaceSplit> {
        SubspaceSplit::from_bases(&self.u_inv(), &self.u_res(), f64::NAN)
    }

    pub fn gamma0(&self, t: usize) -> DVector<f64> {
        self.gamma0_t.row(t).transpose()
    }

    pub fn regime_of(&self, t: usize) -> Option<usize> {
        self.regime_bounds.iter().position(|&(s, e)| s <= t && t < e)
    }

    pub fn sigma_at(&self, t: usize) -> Option<&DMatrix<f64>> {
        self.regime_of(t).map(|r| &self.sigma_regimes[r])
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn test_segments(&self) -> Vec<&Segment> {
        self.segments.iter().filter(|s| s.start >= self.n_hist).collect()
    }

    /// Regimes that cover the historical rows.
    pub fn historical_regimes(&self) -> Vec<usize> {
        (0..self.regime_bounds.len())
            .filter(|&r| self.regime_bounds[r].0 < self.n_hist)
            .collect()
    }
}

/// SPD matrix `A Aᵀ + 0.1 I` with Gaussian `A`, scaled to unit mean diagonal.
pub fn random_spd_block_with(dim: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
    let scale = m.trace() / dim as f64;
    linalg::symmetrize(&(m / scale))
}

pub fn random_spd_block(dim: usize, seed: u64) -> DMatrix<f64> {
    random_spd_block_with(dim, &mut rng_from_seed(seed))
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with the
/// R diagonal made positive.
pub fn random_orthogonal_with(p: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    random_orthogonal_with(p, &mut rng_from_seed(seed))
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(p, p);
    let mut off = 0;
    for b in blocks {
        let d = b.nrows();
        out.view_mut((off, off), (d, d)).copy_from(b);
        off += d;
    }
    out
}

/// Draws rows `X_t ~ N(0, Σ)` and `Y_t = X_tᵀγ_t + ε` for a run of rows sharing `Σ`.
struct Sampler<'a> {
    rng: &'a mut SimRng,
    noise_sd: f64,
    x_rows: Vec<DVector<f64>>,
    y: Vec<f64>,
}

impl Sampler<'_> {
    fn draw(&mut self, chol_l: &DMatrix<f64>, gamma: &DVector<f64>) {
        let p = chol_l.nrows();
        let z = DVector::from_fn(p, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let x = chol_l * z;
        let eps: f64 = self.rng.sample(StandardNormal);
        self.y.push(x.dot(gamma) + self.noise_sd * eps);
        self.x_rows.push(x);
    }

    fn finish(self) -> Result<TimeSeries> {
        let n = self.y.len();
        let p = self.x_rows.first().map_or(0, |r| r.len());
        let x = DMatrix::from_fn(n, p, |i, j| self.x_rows[i][j]);
        TimeSeries::new(x, DVector::from_vec(self.y))
    }
}

fn chol_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| IsdError::NotPositiveDefinite("generator covariance".into()))
}

// ---------------------------------------------------------------------------
// Two-dimensional example

pub fn example2d_u() -> DMatrix<f64> {
    let c = 0.5 * 3f64.sqrt();
    DMatrix::from_row_slice(2, 2, &[c, 0.5, -0.5, c])
}

/// `Σ = U diag(σ₁, σ₂) Uᵀ`.
pub fn example2d_sigma(s1: f64, s2: f64) -> DMatrix<f64> {
    let r3 = 3f64.sqrt();
    DMatrix::from_row_slice(
        2,
        2,
        &[3.0 * s1 + s2, r3 * (s2 - s1), r3 * (s2 - s1), s1 + 3.0 * s2],
    ) * 0.25
}

/// Historical coefficient at time `t ∈ [1, n]`.
pub fn example2d_gamma(t: f64, n: f64) -> DVector<f64> {
    let r3 = 3f64.sqrt();
    let s = t / n;
    DVector::from_vec(vec![1.5 * r3 + 1.0 - r3 * s, s - 1.5 + r3])
}

/// Coefficient at `t > n` on the adaptation segment of length `horizon`.
pub fn example2d_gamma_ad(t: f64, n: f64, horizon: f64) -> DVector<f64> {
    let r3 = 3f64.sqrt();
    let s = (t - n) / horizon;
    let g = s * (s + 1.0).sin().powi(2);
    DVector::from_vec(vec![1.0 + 0.5 * r3 - 1.5 * r3 * g, r3 - 0.5 + 1.5 * g])
}

pub fn gen_example2d(n: usize, seed: u64) -> Result<(TimeSeries, GroundTruth)> {
    gen_example2d_with(n, EXAMPLE2D_TEST_LEN, EXAMPLE2D_NOISE_VAR, seed)
}

/// The two-dimensional example: `n` historical rows, then `test_len` rows on
/// the adaptation trajectory. `σ₁, σ₂ ~ U[0, 1]` are redrawn at every time point.
pub fn gen_example2d_with(
    n: usize,
    test_len: usize,
    noise_var: f64,
    seed: u64,
) -> Result<(TimeSeries, GroundTruth)> {
    if n < 4 {
        return Err(IsdError::InvalidParameter("example2d needs n >= 4".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(IsdError::InvalidParameter("noise variance must be >= 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let total = n + test_len;
    let (nf, hf) = (n as f64, test_len.max(1) as f64);
    let mut sigmas = Vec::with_capacity(total);
    let mut gammas = DMatrix::zeros(total, 2);
    let mut draws = Vec::with_capacity(total);
    for t in 1..=total {
        let s1: f64 = rng.random();
        let s2: f64 = rng.random();
        let tf = t as f64;
        let g = if t <= n {
            example2d_gamma(tf, nf)
        } else {
            example2d_gamma_ad(tf, nf, hf)
        };
        gammas.row_mut(t - 1).copy_from(&g.transpose());
        sigmas.push(example2d_sigma(s1, s2));
        draws.push((s1, s2));
    }
    let u = example2d_u();
    let mut sampler = Sampler {
        rng: &mut rng,
        noise_sd: noise_var.sqrt(),
        x_rows: Vec::with_capacity(total),
        y: Vec::with_capacity(total),
    };
    for (t, &(s1, s2)) in draws.iter().enumerate() {
        // Σ may be nearly singular when a σ draw is tiny; factor through U instead
        let l = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![s1.sqrt(), s2.sqrt()]));
        sampler.draw(&l, &gammas.row(t).transpose());
    }
    let ts = sampler.finish()?;
    let mut segments = vec![Segment {
        name: "history".into(),
        start: 0,
        end: n,
    }];
    if test_len > 0 {
        segments.push(Segment {
            name: "adaptation".into(),
            start: n,
            end: total,
        });
    }
    let truth = GroundTruth {
        generator: "example2d".into(),
        seed,
        n_hist: n,
        u_true: u,
        gamma0_t: gammas,
        regime_bounds: (0..total).map(|t| (t, t + 1)).collect(),
        sigma_regimes: sigmas,
        noise_var,
        dims: (1, 1),
        block_dims: vec![1, 1],
        inv_columns: vec![1],
        beta_inv_true: DVector::from_vec(vec![1.0, 3f64.sqrt()]),
        segments,
    };
    Ok((ts, truth))
}

// ---------------------------------------------------------------------------
// Ten-dimensional setting

/// How the varying coefficients (before rotation) evolve over the history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryPattern {
    /// `1 − 1.5 (t/n) sin²(i t/n + i)`, range about `[−0.25, 1]`.
    Smooth,
    /// `0.5 − (t/n) sin²(i t/n + i)`, used with the three-level test run.
    Damped,
    /// Uniform draws around centers in `[0, 1.2]` that change 20 times.
    QuickVarying,
}

/// History pattern plus the test levels appended after the history; each
/// test level is `(value, length)` and gets a fresh covariance regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub history: HistoryPattern,
    pub test: Vec<(f64, usize)>,
}

impl Schedule {
    pub fn historical() -> Self {
        Self {
            history: HistoryPattern::Smooth,
            test: vec![],
        }
    }

    /// One test window of 250 rows with the varying coefficients at −1.
    pub fn zero_shot() -> Self {
        Self {
            history: HistoryPattern::Smooth,
            test: vec![(-1.0, 250)],
        }
    }

    /// Two consecutive test windows of 1000 rows at −0.5 and −2.
    pub fn two_shifts() -> Self {
        Self {
            history: HistoryPattern::Smooth,
            test: vec![(-0.5, 1000), (-2.0, 1000)],
        }
    }

    /// Damped history, then three windows of 150 rows at −0.3, −0.65 and −1.
    pub fn three_levels() -> Self {
        Self {
            history: HistoryPattern::Damped,
            test: vec![(-0.3, 150), (-0.65, 150), (-1.0, 150)],
        }
    }

    pub fn with_history(mut self, history: HistoryPattern) -> Self {
        self.history = history;
        self
    }
}

impl FromStr for Schedule {
    type Err = IsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "historical" => Ok(Self::historical()),
            "zero_shot" => Ok(Self::zero_shot()),
            "two_shifts" => Ok(Self::two_shifts()),
            "three_levels" => Ok(Self::three_levels()),
            other => Err(IsdError::InvalidParameter(format!(
                "unknown schedule '{other}' (expected historical, zero_shot, two_shifts or three_levels)"
            ))),
        }
    }
}

/// Value of varying coordinate `coord` at time `t ∈ [1, n]` for the smooth patterns.
pub fn main_varying_value(pattern: HistoryPattern, coord: usize, t: f64, n: f64) -> f64 {
    let i = (coord + 1) as f64;
    let s = t / n;
    let wave = (i * s + i).sin().powi(2);
    match pattern {
        HistoryPattern::Smooth => 1.0 - 1.5 * s * wave,
        HistoryPattern::Damped => 0.5 - s * wave,
        HistoryPattern::QuickVarying => f64::NAN,
    }
}

fn equal_bounds(n: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts).map(|r| (r * n / parts, (r + 1) * n / parts)).collect()
}

/// The ten-dimensional setting: blocks of sizes 2, 4, 3, 1 rotated by a random
/// orthogonal `U`, 10 covariance regimes over the history, constant coefficients
/// 0.2 on the two middle blocks and time-varying coefficients on the others.
pub fn gen_main(n: usize, seed: u64, schedule: &Schedule) -> Result<(TimeSeries, GroundTruth)> {
    if n < 100 {
        return Err(IsdError::InvalidParameter("main generator needs n >= 100".into()));
    }
    let p: usize = MAIN_BLOCKS.iter().sum();
    let mut rng = rng_from_seed(seed);
    let u = random_orthogonal_with(p, &mut rng);

    let mut regime_bounds = equal_bounds(n, MAIN_REGIMES);
    let mut start = n;
    let mut segments = vec![Segment {
        name: "history".into(),
        start: 0,
        end: n,
    }];
    for (j, &(value, len)) in schedule.test.iter().enumerate() {
        regime_bounds.push((start, start + len));
        segments.push(Segment {
            name: format!("test{}:{value}", j + 1),
            start,
            end: start + len,
        });
        start += len;
    }
    let total = start;

    let sigma_regimes: Vec<DMatrix<f64>> = regime_bounds
        .iter()
        .map(|_| {
            let blocks: Vec<DMatrix<f64>> = MAIN_BLOCKS
                .iter()
                .map(|&d| random_spd_block_with(d, &mut rng))
                .collect();
            linalg::symmetrize(&(&u * block_diag(&blocks) * u.transpose()))
        })
        .collect();

    // quick-varying centers: one per (segment, varying coordinate)
    let centers: Vec<[f64; 3]> = if schedule.history == HistoryPattern::QuickVarying {
        (0..QUICK_SEGMENTS)
            .map(|_| {
                [
                    rng.random_range(0.0..1.2),
                    rng.random_range(0.0..1.2),
                    rng.random_range(0.0..1.2),
                ]
            })
            .collect()
    } else {
        vec![]
    };
    let quick_bounds = equal_bounds(n, QUICK_SEGMENTS);

    let (nf, mut tilde) = (n as f64, DMatrix::zeros(total, p));
    for t in 0..total {
        let mut row = DVector::from_element(p, MAIN_CONSTANT_VALUE);
        for (v, &coord) in MAIN_VARYING.iter().enumerate() {
            row[coord] = if t >= n {
                let seg = segments[1..]
                    .iter()
                    .position(|s| s.start <= t && t < s.end)
                    .expect("test row inside a segment");
                schedule.test[seg].0
            } else if schedule.history == HistoryPattern::QuickVarying {
                let seg = quick_bounds
                    .iter()
                    .position(|&(s, e)| s <= t && t < e)
                    .expect("history row inside a segment");
                centers[seg][v] + rng.random_range(-0.5..0.5)
            } else {
                main_varying_value(schedule.history, coord, (t + 1) as f64, nf)
            };
        }
        tilde.row_mut(t).copy_from(&row.transpose());
    }
    let gamma0_t = &tilde * u.transpose();

    let mut sampler = Sampler {
        rng: &mut rng,
        noise_sd: MAIN_NOISE_VAR.sqrt(),
        x_rows: Vec::with_capacity(total),
        y: Vec::with_capacity(total),
    };
    for (r, &(s, e)) in regime_bounds.iter().enumerate() {
        let l = chol_factor(&sigma_regimes[r])?;
        for t in s..e {
            sampler.draw(&l, &gamma0_t.row(t).transpose());
        }
    }
    let ts = sampler.finish()?;

    let inv_columns: Vec<usize> = (0..p).filter(|c| !MAIN_VARYING.contains(c)).collect();
    let mut inv_tilde = DVector::zeros(p);
    for &c in &inv_columns {
        inv_tilde[c] = MAIN_CONSTANT_VALUE;
    }
    let generator = match schedule.history {
        HistoryPattern::QuickVarying => "quick_varying",
        _ => "main",
    };
    let truth = GroundTruth {
        generator: generator.into(),
        seed,
        n_hist: n,
        beta_inv_true: &u * inv_tilde,
        u_true: u,
        gamma0_t,
        sigma_regimes,
        regime_bounds,
        noise_var: MAIN_NOISE_VAR,
        dims: (inv_columns.len(), p - inv_columns.len()),
        block_dims: MAIN_BLOCKS.to_vec(),
        inv_columns,
        segments,
    };
    Ok((ts, truth))
}

/// Ten-dimensional setting whose varying coefficients jump around quickly;
/// the test levels of `schedule` are kept.
pub fn gen_quick_varying(
    n: usize,
    seed: u64,
    schedule: &Schedule,
) -> Result<(TimeSeries, GroundTruth)> {
    gen_main(n, seed, &schedule.clone().with_history(HistoryPattern::QuickVarying))
}

/// Rotation angle of a 2×2 rotation matrix, used in examples and tests.
pub fn rotation_angle(u: &DMatrix<f64>) -> f64 {
    u[(1, 0)].atan2(u[(0, 0)]).rem_euclid(2.0 * PI)
}
