use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::runner::ResultsTable;
use crate::domain::create_new;
use crate::error::{Error, Result};

/// Mean and standard error over seeds of one metric at one data size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub algorithm: String,
    pub n_demos: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_seeds: usize,
}

/// Learning curves of `metric`, one point per `(algorithm, n_demos)`, in
/// first-appearance order of the algorithms.
pub fn curves(table: &ResultsTable, metric: &str) -> Result<Vec<CurvePoint>> {
    if !table.rows.iter().any(|r| r.metric == metric) {
        return Err(Error::Config(format!(
            "unknown metric `{metric}` (available: {})",
            table.metrics().join(", ")
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for row in table.rows.iter().filter(|r| r.metric == metric) {
        let idx = match order.iter().position(|a| *a == row.algorithm) {
            Some(i) => i,
            None => {
                order.push(row.algorithm.clone());
                order.len() - 1
            }
        };
        groups
            .entry((idx, row.n_demos))
            .or_default()
            .push(row.value);
    }
    Ok(groups
        .into_iter()
        .map(|((idx, n_demos), values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                algorithm: order[idx].clone(),
                n_demos,
                mean,
                stderr,
                n_seeds: n,
            }
        })
        .collect())
}

/// Reads `results`, computes the curves of `metric` and writes them to `out`.
pub fn emit_curves(results: &Path, metric: &str, out: &Path) -> Result<Vec<CurvePoint>> {
    let table = ResultsTable::read_csv(results)?;
    let points = curves(&table, metric)?;
    let mut w = csv::Writer::from_writer(create_new(out)?);
    for p in &points {
        w.serialize(p).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(points)
}
