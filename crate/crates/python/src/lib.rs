//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use isd_core::experiments::{rolling_adapt, Generator};
use isd_core::pipeline::fit_with_split;
use isd_core::simulate::{gen_example2d, gen_main, gen_quick_varying, Schedule};
use isd_core::{fit_isd, CvOptions, IsdConfig, IsdError, IsdModel, LambdaChoice, TimeSeries};

fn to_py(e: IsdError) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn series(x: &[Vec<f64>], y: Vec<f64>) -> PyResult<TimeSeries> {
    TimeSeries::new(matrix(x)?, DVector::from_vec(y)).map_err(to_py)
}

fn schedule(name: &str) -> PyResult<Schedule> {
    match name {
        "historical" => Ok(Schedule::historical()),
        "zero_shot" => Ok(Schedule::zero_shot()),
        "two_shifts" => Ok(Schedule::two_shifts()),
        "three_levels" => Ok(Schedule::three_levels()),
        other => Err(PyValueError::new_err(format!("unknown schedule '{other}'"))),
    }
}

/// Generate a synthetic dataset. Returns a dict with `x`, `y`, `n_hist`,
/// `beta_inv_true`, `dims`, `u_inv`, `u_res` and the full truth as JSON.
#[pyfunction]
#[pyo3(signature = (n, seed=0, generator="main", schedule="historical"))]
fn simulate<'py>(
    py: Python<'py>,
    n: usize,
    seed: u64,
    generator: &str,
    schedule: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let sched = self::schedule(schedule)?;
    let (ts, truth) = match generator {
        "example2d" => gen_example2d(n, seed),
        g => match g.parse::<Generator>().map_err(to_py)? {
            Generator::Main => gen_main(n, seed, &sched),
            Generator::QuickVarying => gen_quick_varying(n, seed, &sched),
        },
    }
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x", rows(ts.x()))?;
    d.set_item("y", ts.y().as_slice().to_vec())?;
    d.set_item("n_hist", truth.n_hist)?;
    d.set_item("beta_inv_true", truth.beta_inv_true.as_slice().to_vec())?;
    d.set_item("dims", truth.dims)?;
    d.set_item("u_inv", rows(&truth.u_inv()))?;
    d.set_item("u_res", rows(&truth.u_res()))?;
    let json = serde_json::to_string(&truth).map_err(|e| PyValueError::new_err(e.to_string()))?;
    d.set_item("truth_json", json)?;
    Ok(d)
}

/// A fitted invariant model.
#[pyclass(module = "isd", frozen)]
struct Model {
    inner: IsdModel,
    /// Estimated block sizes; absent when the split was supplied.
    block_dims: Option<Vec<usize>>,
}

#[pymethods]
impl Model {
    /// Estimate the decomposition and invariant coefficient from historical data.
    /// `lam=None` selects the threshold by cross-validation.
    #[staticmethod]
    #[pyo3(signature = (x, y, lam=None, k=25, w=None, folds=10))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, lam: Option<f64>, k: usize, w: Option<usize>, folds: usize) -> PyResult<Self> {
        let ts = series(&x, y)?;
        let cfg = IsdConfig {
            k,
            w,
            lambda: match lam {
                Some(l) => LambdaChoice::Fixed(l),
                None => LambdaChoice::Cv(CvOptions {
                    folds,
                    ..CvOptions::default()
                }),
            },
            ..IsdConfig::default()
        };
        let fit = fit_isd(&ts, &cfg).map_err(to_py)?;
        Ok(Model {
            block_dims: Some(fit.decomposition.block_dims()),
            inner: fit.model,
        })
    }

    /// Fit only the invariant coefficient for known orthonormal bases.
    #[staticmethod]
    #[pyo3(signature = (x, y, u_inv, u_res, k=25))]
    fn fit_with_bases(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        u_inv: Vec<Vec<f64>>,
        u_res: Vec<Vec<f64>>,
        k: usize,
    ) -> PyResult<Self> {
        let ts = series(&x, y)?;
        let split = isd_core::SubspaceSplit::from_bases(&matrix(&u_inv)?, &matrix(&u_res)?, f64::NAN).map_err(to_py)?;
        let cfg = IsdConfig { k, ..IsdConfig::default() };
        let inner = fit_with_split(&ts, &cfg, &split).map_err(to_py)?;
        Ok(Model {
            block_dims: None,
            inner,
        })
    }

    /// Deserialize a model written by `to_json` or by the `isd fit` command's `model` field.
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let inner: IsdModel = serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Model {
            block_dims: None,
            inner,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn beta_inv(&self) -> Vec<f64> {
        self.inner.beta_inv.as_slice().to_vec()
    }

    #[getter]
    fn dim_inv(&self) -> usize {
        self.inner.split.dim_inv()
    }

    #[getter]
    fn dim_res(&self) -> usize {
        self.inner.split.dim_res()
    }

    /// Threshold used for the split; NaN when the bases were given.
    #[getter]
    fn lam(&self) -> f64 {
        self.inner.split.lambda
    }

    #[getter]
    fn block_dims(&self) -> Option<Vec<usize>> {
        self.block_dims.clone()
    }

    #[getter]
    fn u_inv(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.split.u_inv())
    }

    #[getter]
    fn u_res(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.split.u_res())
    }

    /// Zero-shot predictions from the invariant coefficient alone.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix(&x)?;
        if x.ncols() != self.inner.split.p() {
            return Err(PyValueError::new_err("column count does not match the model"));
        }
        let c = self.inner.zero_shot_intercept();
        Ok((x * &self.inner.beta_inv).iter().map(|v| v + c).collect())
    }

    /// Slide a window of length `m` over test data; one dict per predicted step.
    fn adapt<'py>(&self, py: Python<'py>, x: Vec<Vec<f64>>, y: Vec<f64>, m: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ts = series(&x, y)?;
        let steps = rolling_adapt(&ts, &self.inner, m).map_err(to_py)?;
        steps
            .into_iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("t", s.t)?;
                d.set_item("y", s.y)?;
                d.set_item("pred_isd", s.pred_isd)?;
                d.set_item("pred_ols", s.pred_ols)?;
                d.set_item("pred_inv", s.pred_inv)?;
                d.set_item("gamma_isd", s.gamma_isd)?;
                d.set_item("gamma_ols", s.gamma_ols)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(p={}, dim_inv={}, dim_res={})",
            self.inner.split.p(),
            self.inner.split.dim_inv(),
            self.inner.split.dim_res()
        )
    }
}

#[pymodule]
fn isd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<Model>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
