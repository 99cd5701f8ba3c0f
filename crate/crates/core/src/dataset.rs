//! Time-indexed regression data, CSV ingestion and window planning.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IsdError, Result};

/// Ordered observations `(X_t, y_t)`; row `t` of `x` is `X_tᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    x: DMatrix<f64>,
    y: DVector<f64>,
    t0: i64,
}

impl TimeSeries {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::with_start(x, y, 1)
    }

    pub fn with_start(x: DMatrix<f64>, y: DVector<f64>, t0: i64) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(IsdError::Dimension(format!(
                "time series needs n >= 1 and p >= 1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(IsdError::Dimension(format!(
                "x has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            // nalgebra is column-major
            let (row, col) = (pos % x.nrows(), pos / x.nrows());
            return Err(IsdError::NonFinite(format!("x[{row}, {col}]")));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(IsdError::NonFinite(format!("y[{row}]")));
        }
        Ok(Self { x, y, t0 })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `[start, end)` as a new series; `t0` shifts accordingly.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.n() {
            return Err(IsdError::InvalidParameter(format!(
                "slice [{start}, {end}) out of range for n = {}",
                self.n()
            )));
        }
        let len = end - start;
        Ok(TimeSeries {
            x: self.x.rows(start, len).into_owned(),
            y: self.y.rows(start, len).into_owned(),
            t0: self.t0 + start as i64,
        })
    }

    /// The series with rows `[start, end)` removed.
    pub fn without(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.n() {
            return Err(IsdError::InvalidParameter(format!(
                "removal range [{start}, {end}) out of range for n = {}",
                self.n()
            )));
        }
        let keep: Vec<usize> = (0..start).chain(end..self.n()).collect();
        if keep.is_empty() {
            return Err(IsdError::InsufficientData(
                "removing the range leaves no rows".into(),
            ));
        }
        Ok(TimeSeries {
            x: self.x.select_rows(&keep),
            y: self.y.select_rows(&keep),
            t0: self.t0,
        })
    }

    /// Concatenate two series with the same number of covariates.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries> {
        if self.p() != other.p() {
            return Err(IsdError::Dimension(format!(
                "cannot concatenate p = {} with p = {}",
                self.p(),
                other.p()
            )));
        }
        let n = self.n() + other.n();
        let x = DMatrix::from_fn(n, self.p(), |i, j| {
            if i < self.n() {
                self.x[(i, j)]
            } else {
                other.x[(i - self.n(), j)]
            }
        });
        let y = DVector::from_fn(n, |i, _| {
            if i < self.n() {
                self.y[i]
            } else {
                other.y[i - self.n()]
            }
        });
        Ok(TimeSeries { x, y, t0: self.t0 })
    }
}

/// Read `x_columns` and `y_column` from a headed, comma-separated file.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    x_columns: &[&str],
    y_column: &str,
) -> Result<TimeSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| IsdError::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| IsdError::Csv(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IsdError::Csv(format!("missing column '{name}'")))
    };
    let x_idx: Vec<usize> = x_columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let y_idx = find(y_column)?;
    if x_columns.is_empty() {
        return Err(IsdError::Csv("no covariate columns requested".into()));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // data row numbering is 1-based and excludes the header
        let record = record.map_err(|e| IsdError::Csv(format!("row {}: {e}", row + 1)))?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let cell = record.get(idx).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IsdError::Csv(format!(
                    "row {}, column '{name}': cannot use value '{cell}'",
                    row + 1
                ))),
            }
        };
        for (&idx, name) in x_idx.iter().zip(x_columns) {
            xs.push(parse(idx, name)?);
        }
        ys.push(parse(y_idx, y_column)?);
    }
    if ys.is_empty() {
        return Err(IsdError::Csv(format!("{}: no data rows", path.display())));
    }
    let x = DMatrix::from_row_slice(ys.len(), x_columns.len(), &xs);
    TimeSeries::new(x, DVector::from_vec(ys))
}

/// Column names of a headed CSV file, skipping `#` comment lines.
pub fn read_csv_header<P: AsRef<Path>>(path: P) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| IsdError::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| IsdError::Csv(format!("{}: {e}", path.display())))?;
    Ok(headers.iter().map(str::to_string).collect())
}

/// Write a series as CSV with the given covariate and response headers.
///
/// Values use Rust's shortest round-trip float formatting.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    ts: &TimeSeries,
    x_names: &[String],
    y_name: &str,
) -> Result<()> {
    write_csv_with_preamble(path, ts, x_names, y_name, "")
}

/// Open `path` for CSV output, first writing each line of `preamble` as a
/// `#` comment. `load_csv` skips such lines.
pub fn csv_writer_with_preamble<P: AsRef<Path>>(
    path: P,
    preamble: &str,
) -> Result<csv::Writer<std::fs::File>> {
    use std::io::Write;
    let path = path.as_ref();
    let mut file = std::fs::File::create(path)
        .map_err(|e| IsdError::Csv(format!("{}: {e}", path.display())))?;
    for line in preamble.lines() {
        writeln!(file, "# {line}")?;
    }
    Ok(csv::Writer::from_writer(file))
}

/// `write_csv` with a `#`-commented preamble, e.g. the run configuration.
pub fn write_csv_with_preamble<P: AsRef<Path>>(
    path: P,
    ts: &TimeSeries,
    x_names: &[String],
    y_name: &str,
    preamble: &str,
) -> Result<()> {
    if x_names.len() != ts.p() {
        return Err(IsdError::Dimension(format!(
            "{} column names for p = {}",
            x_names.len(),
            ts.p()
        )));
    }
    let mut w = csv_writer_with_preamble(path, preamble)?;
    let mut header: Vec<&str> = x_names.iter().map(String::as_str).collect();
    header.push(y_name);
    w.write_record(&header)
        .map_err(|e| IsdError::Csv(e.to_string()))?;
    for t in 0..ts.n() {
        let mut rec: Vec<String> = ts.x().row(t).iter().map(|v| v.to_string()).collect();
        rec.push(ts.y()[t].to_string());
        w.write_record(&rec).map_err(|e| IsdError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Default covariate names `x1..xp`.
pub fn default_x_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScheme {
    /// Back-to-back windows of length `floor(n / K)`; trailing rows are dropped.
    Contiguous,
    /// `K` windows of length `w` with evenly spaced starts over `[0, n - w]`.
    EquallySpaced,
}

impl std::str::FromStr for WindowScheme {
    type Err = IsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(WindowScheme::Contiguous),
            "equally_spaced" | "equally-spaced" => Ok(WindowScheme::EquallySpaced),
            other => Err(IsdError::InvalidParameter(format!(
                "unknown window scheme '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub scheme: WindowScheme,
    #[serde(rename = "K")]
    pub k: usize,
    pub w: usize,
    /// Half-open `[start, end)` row ranges, ordered by start.
    pub windows: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Check that the plan fits a series of length `n` with `p` covariates.
    pub fn validate_for(&self, n: usize, p: usize) -> Result<()> {
        for &(s, e) in &self.windows {
            if e > n || s >= e {
                return Err(IsdError::InvalidParameter(format!(
                    "window [{s}, {e}) does not fit n = {n}"
                )));
            }
            if e - s < p + 2 {
                return Err(IsdError::InsufficientData(format!(
                    "window [{s}, {e}) has {} rows, need at least p + 2 = {}",
                    e - s,
                    p + 2
                )));
            }
        }
        Ok(())
    }
}

pub fn make_windows(n: usize, k: usize, w: usize, scheme: WindowScheme) -> Result<WindowPlan> {
    if k == 0 {
        return Err(IsdError::InvalidParameter("K must be at least 1".into()));
    }
    if w == 0 {
        return Err(IsdError::InvalidParameter("window length must be positive".into()));
    }
    if w > n {
        return Err(IsdError::InvalidParameter(format!(
            "window length {w} exceeds series length {n}"
        )));
    }
    let windows = match scheme {
        WindowScheme::Contiguous => {
            if k * w > n {
                return Err(IsdError::InvalidParameter(format!(
                    "{k} contiguous windows of length {w} exceed n = {n}"
                )));
            }
            if w != n / k {
                return Err(IsdError::InvalidParameter(format!(
                    "contiguous windows must have length floor(n / K) = {}, got {w}",
                    n / k
                )));
            }
            (0..k).map(|j| (j * w, (j + 1) * w)).collect()
        }
        WindowScheme::EquallySpaced => {
            let span = n - w;
            (0..k)
                .map(|j| {
                    let start = if k == 1 { 0 } else { j * span / (k - 1) };
                    (start, start + w)
                })
                .collect()
        }
    };
    Ok(WindowPlan {
        scheme,
        k,
        w,
        windows,
    })
}

/// Contiguous plan with `w = floor(n / K)`.
pub fn contiguous_windows(n: usize, k: usize) -> Result<WindowPlan> {
    if k == 0 {
        return Err(IsdError::InvalidParameter("K must be at least 1".into()));
    }
    make_windows(n, k, n / k, WindowScheme::Contiguous)
}
