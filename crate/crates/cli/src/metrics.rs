use std::path::Path;

use ndarray::ArrayView2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One sampling run scored against its held-out truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: usize,
    pub label: String,
    pub task: String,
    pub pde: String,
    pub obs_count: usize,
    pub rel_err_u: f64,
    /// NaN for single-channel tasks.
    pub rel_err_a: f64,
    pub pde_residual: f64,
    /// NaN without observations.
    pub obs_rel_err: f64,
}

/// Per-slice scores of time-dependent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub run_id: usize,
    pub time_index: usize,
    pub rel_err: f64,
    /// NaN at the two end slices, where no residual is defined.
    pub pde_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run_id: usize,
    pub wall_time_s: f64,
}

/// `‖gen − truth‖₂ / ‖truth‖₂` over grid values.
pub fn relative_error(generated: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> f64 {
    relative_error_iter(generated.iter().zip(truth.iter()))
}

pub fn relative_error_iter<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (g, t) in pairs {
        num += (g - t) * (g - t);
        den += t * t;
    }
    (num / den).sqrt()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(e.to_string()))?;
    pisd_core::io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Mean and sample standard deviation; NaN entries are skipped.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub task: String,
    pub pde: String,
    pub obs_count: usize,
    pub runs: usize,
    pub rel_err_u_mean: f64,
    pub rel_err_u_std: f64,
    pub rel_err_a_mean: f64,
    pub rel_err_a_std: f64,
    pub pde_residual_mean: f64,
    pub pde_residual_std: f64,
    pub obs_rel_err_mean: f64,
    pub obs_rel_err_std: f64,
    pub wall_time_s_mean: f64,
}

/// Aggregates the rows of one configuration.
pub fn summarize(rows: &[MetricsRow], timings: &[TimingRow]) -> CliResult<SummaryRow> {
    let first = rows
        .first()
        .ok_or_else(|| CliError::config("no metrics rows to summarize"))?;
    let col = |f: fn(&MetricsRow) -> f64| mean_std(rows.iter().map(f));
    let (u, us) = col(|r| r.rel_err_u);
    let (a, as_) = col(|r| r.rel_err_a);
    let (p, ps) = col(|r| r.pde_residual);
    let (o, os) = col(|r| r.obs_rel_err);
    Ok(SummaryRow {
        label: first.label.clone(),
        task: first.task.clone(),
        pde: first.pde.clone(),
        obs_count: first.obs_count,
        runs: rows.len(),
        rel_err_u_mean: u,
        rel_err_u_std: us,
        rel_err_a_mean: a,
        rel_err_a_std: as_,
        pde_residual_mean: p,
        pde_residual_std: ps,
        obs_rel_err_mean: o,
        obs_rel_err_std: os,
        wall_time_s_mean: mean_std(timings.iter().map(|t| t.wall_time_s)).0,
    })
}

/// Fixed-width text table of summaries, `mean ± std` per metric.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let pm = |m: f64, s: f64| {
        if m.is_nan() {
            "-".to_string()
        } else {
            format!("{m:.4e} ± {s:.2e}")
        }
    };
    let mut out = format!(
        "{:<16} {:<14} {:<13} {:>6} {:>5} {:>22} {:>22} {:>22} {:>22} {:>10}\n",
        "label",
        "task",
        "pde",
        "obs",
        "runs",
        "rel_err_u",
        "rel_err_a",
        "pde_residual",
        "obs_rel_err",
        "time_s"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<14} {:<13} {:>6} {:>5} {:>22} {:>22} {:>22} {:>22} {:>10.3}\n",
            r.label,
            r.task,
            r.pde,
            r.obs_count,
            r.runs,
            pm(r.rel_err_u_mean, r.rel_err_u_std),
            pm(r.rel_err_a_mean, r.rel_err_a_std),
            pm(r.pde_residual_mean, r.pde_residual_std),
            pm(r.obs_rel_err_mean, r.obs_rel_err_std),
            r.wall_time_s_mean
        ));
    }
    out
}
