//! Subcommand implementations.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use isd_core::dataset::{default_x_names, read_csv_header, write_csv_with_preamble};
use isd_core::decomposition::CvReport;
use isd_core::experiments::{
    adaptation_sweep, history_and_test, rolling_adapt, zero_shot_sweep, CellFailure, Generator,
    SplitSource,
};
use isd_core::metrics::{cumulative_xv, median, write_tidy_csv_with_preamble, TidyRow};
use isd_core::pipeline::fit_with_split;
use isd_core::simulate::{gen_example2d, gen_main, gen_quick_varying, GroundTruth, Schedule};
use isd_core::{fit_isd, load_csv, IsdError, IsdModel, TimeSeries};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{
    AdaptArgs, BenchmarkArgs, ExperimentArg, FitArgs, GeneratorArg, ScheduleArg, SimulateArgs,
};

pub const VERSION: &str = env!("ISD_VERSION");

/// One-line JSON stamp `{"version", "command", "config"}` for CSV preambles.
fn stamp<T: Serialize>(command: &str, config: &T) -> Result<String> {
    Ok(serde_json::to_string(&json!({
        "version": VERSION,
        "command": command,
        "config": config,
    }))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(IsdError::from)
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub version: String,
    pub run_config: Value,
    pub truth: GroundTruth,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let schedule = match args.schedule {
        ScheduleArg::Historical => Schedule::historical(),
        ScheduleArg::ZeroShot => Schedule::zero_shot(),
        ScheduleArg::TwoShifts => Schedule::two_shifts(),
        ScheduleArg::ThreeLevels => Schedule::three_levels(),
    };
    let (ts, truth) = match args.generator {
        GeneratorArg::Main => gen_main(args.n, args.seed, &schedule)?,
        GeneratorArg::QuickVarying => gen_quick_varying(args.n, args.seed, &schedule)?,
        GeneratorArg::Example2d => gen_example2d(args.n, args.seed)?,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let preamble = stamp("simulate", args)?;
    let names = default_x_names(ts.p());
    write_csv_with_preamble(args.out.join("data.csv"), &ts, &names, "y", &preamble)?;
    let (hist, test) = history_and_test(&ts, &truth)?;
    write_csv_with_preamble(args.out.join("history.csv"), &hist, &names, "y", &preamble)?;
    if let Some(test) = &test {
        write_csv_with_preamble(args.out.join("test.csv"), test, &names, "y", &preamble)?;
    }
    let file = TruthFile {
        version: VERSION.to_string(),
        run_config: serde_json::to_value(args)?,
        truth,
    };
    write_json(&args.out.join("truth.json"), &file)?;
    println!(
        "wrote {} rows ({} history, {} test) to {}",
        ts.n(),
        hist.n(),
        test.map_or(0, |t| t.n()),
        args.out.display()
    );
    Ok(())
}

/// Covariate and response columns: explicit list, or every non-response column.
fn resolve_columns(path: &Path, x_cols: Option<&[String]>, y_col: &str) -> Result<Vec<String>> {
    match x_cols {
        Some(cols) if !cols.is_empty() => Ok(cols.to_vec()),
        _ => {
            let header = read_csv_header(path)?;
            let cols: Vec<String> = header.into_iter().filter(|c| c != y_col).collect();
            if cols.is_empty() {
                bail!(IsdError::Csv(format!("{}: no covariate columns", path.display())));
            }
            Ok(cols)
        }
    }
}

fn load(path: &Path, x_cols: &[String], y_col: &str) -> Result<TimeSeries> {
    let refs: Vec<&str> = x_cols.iter().map(String::as_str).collect();
    Ok(load_csv(path, &refs, y_col)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub block_dims: Vec<usize>,
    pub mean_abs_scores: Vec<f64>,
    /// `null` when the singleton partition won.
    pub tau_star: Option<f64>,
    pub lambda: Option<f64>,
    pub dims: (usize, usize),
    pub uwedge_iterations: usize,
    pub uwedge_converged: bool,
    pub cv: Option<CvReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub run_config: Value,
    pub x_columns: Vec<String>,
    pub y_column: String,
    /// `estimated`, `oracle_split` or `oracle_beta`.
    pub mode: String,
    pub model: IsdModel,
    pub diagnostics: Option<Diagnostics>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let x_cols = resolve_columns(&args.data, args.x_cols.as_deref(), &args.y_col)?;
    let ts = load(&args.data, &x_cols, &args.y_col)?;
    let cfg = args.estimation.config();
    let oracle = args.oracle_split.as_ref().or(args.oracle_beta.as_ref());
    let (mode, model, diagnostics) = match oracle {
        Some(path) => {
            let truth: TruthFile = read_json(path)?;
            if truth.truth.p() != ts.p() {
                bail!(IsdError::Dimension(format!(
                    "ground truth has p = {}, data has p = {}",
                    truth.truth.p(),
                    ts.p()
                )));
            }
            let mut model = fit_with_split(&ts, &cfg, &truth.truth.oracle_split()?)?;
            let mode = if args.oracle_beta.is_some() {
                model.beta_inv = truth.truth.beta_inv_true.clone();
                "oracle_beta"
            } else {
                "oracle_split"
            };
            (mode, model, None)
        }
        None => {
            let fit = fit_isd(&ts, &cfg)?;
            let diag = Diagnostics {
                block_dims: fit.decomposition.block_dims(),
                mean_abs_scores: fit.scores.mean_abs.iter().copied().collect(),
                tau_star: finite(fit.decomposition.tau_star),
                lambda: finite(fit.split.lambda),
                dims: fit.split.dims,
                uwedge_iterations: fit.uwedge_iterations,
                uwedge_converged: fit.uwedge_converged,
                cv: fit.cv.clone(),
            };
            ("estimated", fit.model, Some(diag))
        }
    };
    println!(
        "mode {mode}: dim_inv {}, dim_res {}, beta_inv {:?}",
        model.split.dim_inv(),
        model.split.dim_res(),
        model.beta_inv.as_slice()
    );
    if let Some(d) = &diagnostics {
        println!("blocks {:?}, scores {:?}, lambda {:?}", d.block_dims, d.mean_abs_scores, d.lambda);
    }
    let file = ModelFile {
        version: VERSION.to_string(),
        run_config: serde_json::to_value(args)?,
        x_columns: x_cols,
        y_column: args.y_col.clone(),
        mode: mode.to_string(),
        model,
        diagnostics,
    };
    write_json(&args.out, &file)
}

pub fn adapt(args: &AdaptArgs) -> Result<()> {
    let file: ModelFile = read_json(&args.model)?;
    let ts = load(&args.data, &file.x_columns, &file.y_column)?;
    if ts.p() != file.model.split.p() {
        bail!(IsdError::Dimension("model and data disagree on p".into()));
    }
    let steps = rolling_adapt(&ts, &file.model, args.m)?;
    let y = DVector::from_iterator(steps.len(), steps.iter().map(|s| s.y));
    let mean = y.mean();
    let centered = |f: &dyn Fn(usize) -> f64| DVector::from_fn(steps.len(), |i, _| f(i) - mean);
    let xv_isd = cumulative_xv(&centered(&|i| steps[i].pred_isd), &y)?;
    let xv_inv = cumulative_xv(&centered(&|i| steps[i].pred_inv), &y)?;
    let ols_ok = steps.iter().all(|s| s.pred_ols.is_some());
    let xv_ols = if ols_ok {
        Some(cumulative_xv(&centered(&|i| steps[i].pred_ols.unwrap()), &y)?)
    } else {
        None
    };

    let p = ts.p();
    let mut w = isd_core::dataset::csv_writer_with_preamble(&args.out, &stamp("adapt", args)?)?;
    let mut header: Vec<String> = [
        "t", "y", "pred_isd", "pred_ols", "pred_inv", "cum_xv_isd", "cum_xv_ols", "cum_xv_inv", "ols_status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(file.x_columns.iter().map(|c| format!("gamma_isd_{c}")));
    header.extend(file.x_columns.iter().map(|c| format!("gamma_ols_{c}")));
    let csv_err = |e: csv::Error| IsdError::Csv(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (i, s) in steps.iter().enumerate() {
        let mut rec = vec![
            s.t.to_string(),
            s.y.to_string(),
            s.pred_isd.to_string(),
            opt(s.pred_ols),
            s.pred_inv.to_string(),
            xv_isd[i].to_string(),
            opt(xv_ols.as_ref().map(|v| v[i])),
            xv_inv[i].to_string(),
            if s.pred_ols.is_some() { "ok" } else { "underdetermined" }.to_string(),
        ];
        rec.extend(s.gamma_isd.iter().map(|v| v.to_string()));
        match &s.gamma_ols {
            Some(g) => rec.extend(g.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), p)),
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    let last = steps.len() - 1;
    println!(
        "{} steps; final cumulative explained variance: isd {:.4}, ols {}, invariant only {:.4}",
        steps.len(),
        xv_isd[last],
        xv_ols.map_or("n/a (underdetermined)".to_string(), |v| format!("{:.4}", v[last])),
        xv_inv[last]
    );
    Ok(())
}

fn failures_json(failed: &[CellFailure]) -> Value {
    serde_json::to_value(failed).unwrap_or(Value::Null)
}

/// Median of `value` for each `(estimator, n, m, metric)` group, in first-seen order.
fn summarize(rows: &[TidyRow]) -> Vec<Value> {
    let mut keys: Vec<(String, usize, Option<usize>, String)> = Vec::new();
    for r in rows {
        let k = (r.estimator.clone(), r.n, r.m, r.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(estimator, n, m, metric)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.estimator == estimator && r.n == n && r.m == m && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            json!({
                "estimator": estimator, "n": n, "m": m, "metric": metric,
                "median": median(&v), "mean": mean, "count": v.len(),
            })
        })
        .collect()
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let seeds = &args.seeds.0;
    let cfg = args.estimation.config();
    let (rows, failed): (Vec<TidyRow>, Vec<CellFailure>) = match args.experiment {
        ExperimentArg::ZeroShot => {
            let generator = match args.generator {
                GeneratorArg::Main => Generator::Main,
                GeneratorArg::QuickVarying => Generator::QuickVarying,
                GeneratorArg::Example2d => bail!(IsdError::InvalidParameter(
                    "the zero-shot sweep supports the main and quick_varying generators".into()
                )),
            };
            let (cells, failed) = zero_shot_sweep(generator, &args.ns, seeds, &cfg)?;
            (cells.iter().flat_map(|c| c.tidy()).collect(), failed)
        }
        ExperimentArg::Adaptation => {
            if args.generator != GeneratorArg::Main {
                bail!(IsdError::InvalidParameter(
                    "the adaptation sweep uses the main generator".into()
                ));
            }
            let source = if args.oracle_split {
                SplitSource::Oracle
            } else {
                SplitSource::Estimated
            };
            let (cells, failed) = adaptation_sweep(args.n, &args.ms, seeds, &cfg, source)?;
            (cells.iter().flat_map(|c| c.tidy(args.n)).collect(), failed)
        }
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_tidy_csv_with_preamble(args.out.join("tidy.csv"), &rows, &stamp("benchmark", args)?)?;
    let summary = json!({
        "version": VERSION,
        "run_config": args,
        "cells_failed": failures_json(&failed),
        "summary": summarize(&rows),
    });
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "{} rows, {} failed cells, written to {}",
        rows.len(),
        failed.len(),
        args.out.display()
    );
    if !failed.is_empty() {
        for f in &failed {
            eprintln!("cell n={} seed={} failed: {}", f.n, f.seed, f.error);
        }
    }
    Ok(())
}
