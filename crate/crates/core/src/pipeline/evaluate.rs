//! Scoring a labelled table against its truth columns.
//!
//! Two methods are reported: `babe` (the table's `y_hat`/`e_hat`) and `z`
//! (the observed score used directly: `Y_Z` for labels, `Z` for `E`).
//!
//! | metric             | scopes        | notes                                     |
//! |--------------------|---------------|-------------------------------------------|
//! | `acc_y`            | all, s0, s1   | accuracy of labels against `y`            |
//! | `acc_e`            | all, s0, s1   | rows with an `e_hat` only                 |
//! | `dist`             | all, s0, s1   | rows with an `e_hat` only                 |
//! | `coverage_e`       | all           | fraction of rows with an `e_hat`          |
//! | `spd`              | all           |                                           |
//! | `cspd_mean_abs`    | all           |                                           |
//! | `cspd_mean_signed` | all           |                                           |
//! | `cspd`             | `e=<value>`   | one row per defined stratum               |
//! | `eod`              | all           |                                           |
//! | `tpr`              | s0, s1        |                                           |
//! | `wasserstein`      | all, s0, s1   | against the empirical distribution of `e` |
//!
//! The `z` rows for `acc_e` and `dist` use the same rows as `babe`, so both
//! are averaged over one set. Without an `e_hat` column they use every row.

use std::collections::BTreeMap;

use super::PipelineError;
use crate::metrics::{self, MetricError};
use crate::types::{DecisionThreshold, Domain, GroupLabel, GroupedDistribution, ProbVector, SampleTable};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub dataset_id: String,
    pub method: String,
    pub metric: String,
    pub group_scope: String,
    pub value: f64,
}

pub const BABE: &str = "babe";
pub const BASELINE: &str = "z";

struct Sink<'a> {
    run_id: &'a str,
    dataset_id: &'a str,
    rows: Vec<MetricRow>,
}

impl Sink<'_> {
    fn push(&mut self, method: &str, metric: &str, scope: &str, value: Result<f64, MetricError>) {
        match value {
            Ok(v) => self.rows.push(MetricRow {
                run_id: self.run_id.into(),
                dataset_id: self.dataset_id.into(),
                method: method.into(),
                metric: metric.into(),
                group_scope: scope.into(),
                value: v,
            }),
            Err(e) => log::warn!("{}/{}: {method} {metric} [{scope}] undefined: {e}", self.run_id, self.dataset_id),
        }
    }
}

fn full<T: Copy>(col: Option<&[Option<T>]>, name: &'static str) -> Result<Vec<T>, PipelineError> {
    col.ok_or(PipelineError::MissingColumn(name))?
        .iter()
        .map(|v| v.ok_or(PipelineError::MissingColumn(name)))
        .collect()
}

/// Histogram of `values` on the set of values that occur.
pub fn empirical(values: impl IntoIterator<Item = i64>) -> Option<ProbVector> {
    let mut counts = BTreeMap::new();
    let mut n = 0usize;
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let domain = Domain::new(counts.keys().copied().collect()).ok()?;
    let mass = counts.values().map(|&c| c as f64 / n as f64).collect();
    ProbVector::new(domain, mass).ok()
}

fn scoped<T: Copy>(values: &[T], groups: &[GroupLabel], g: Option<usize>) -> Vec<T> {
    values.iter().zip(groups).filter(|(_, s)| g.is_none_or(|g| s.0 == g)).map(|(&v, _)| v).collect()
}

fn scope_name(g: Option<usize>) -> String {
    g.map_or_else(|| "all".to_string(), |g| format!("s{g}"))
}

fn label_metrics(sink: &mut Sink, method: &str, y_hat: &[u8], y: &[u8], e: &[i64], s: &[GroupLabel]) {
    for g in [None, Some(0), Some(1)] {
        let (p, t) = (scoped(y_hat, s, g), scoped(y, s, g));
        sink.push(method, "acc_y", &scope_name(g), metrics::accuracy(&p, &t));
    }
    sink.push(method, "spd", "all", metrics::spd(y_hat, s));
    match metrics::cspd(y_hat, s, e) {
        Ok(c) => {
            sink.push(method, "cspd_mean_abs", "all", Ok(c.mean_abs));
            sink.push(method, "cspd_mean_signed", "all", Ok(c.mean_signed));
            for (v, d) in &c.per_e {
                if let Some(d) = d {
                    sink.push(method, "cspd", &format!("e={v}"), Ok(*d));
                }
            }
        }
        Err(err) => sink.push(method, "cspd_mean_abs", "all", Err(err)),
    }
    match metrics::eod(y_hat, y, s) {
        Ok(d) => {
            sink.push(method, "eod", "all", Ok(d.difference));
            sink.push(method, "tpr", "s0", Ok(d.tpr0));
            sink.push(method, "tpr", "s1", Ok(d.tpr1));
        }
        Err(err) => sink.push(method, "eod", "all", Err(err)),
    }
}

fn point_metrics(sink: &mut Sink, method: &str, pairs: &[(GroupLabel, i64, i64)]) {
    for g in [None, Some(0), Some(1)] {
        let (est, truth): (Vec<i64>, Vec<i64>) =
            pairs.iter().filter(|p| g.is_none_or(|g| p.0 .0 == g)).map(|p| (p.1, p.2)).unzip();
        sink.push(method, "acc_e", &scope_name(g), metrics::accuracy(&est, &truth));
        sink.push(method, "dist", &scope_name(g), metrics::distortion(&est, &truth));
    }
}

/// All metrics for one labelled table with truth columns `e` and `y`.
///
/// `estimate` is the fitted `P̂[E|S]`; when given, its Wasserstein distance
/// to the empirical `P[E|S]` of the table is reported.
pub fn evaluate(
    table: &SampleTable,
    thr: &DecisionThreshold,
    estimate: Option<&GroupedDistribution>,
    run_id: &str,
    dataset_id: &str,
) -> Result<Vec<MetricRow>, PipelineError> {
    let e = full(table.e(), "e")?;
    let y = full(table.y(), "y")?;
    let y_hat = full(table.y_hat(), "y_hat")?;
    let s = table.s();
    let z = table.z();
    let mut sink = Sink { run_id, dataset_id, rows: Vec::new() };

    label_metrics(&mut sink, BABE, &y_hat, &y, &e, s);
    let yz = metrics::baseline_yz(z, thr);
    label_metrics(&mut sink, BASELINE, &yz, &y, &e, s);

    let (babe_pairs, z_pairs): (Vec<_>, Vec<_>) = match table.e_hat() {
        Some(e_hat) => {
            let rows: Vec<usize> = (0..table.len()).filter(|&i| e_hat[i].is_some()).collect();
            sink.push(BABE, "coverage_e", "all", Ok(rows.len() as f64 / table.len().max(1) as f64));
            rows.iter().map(|&i| ((s[i], e_hat[i].expect("filtered"), e[i]), (s[i], z[i], e[i]))).unzip()
        }
        None => (Vec::new(), (0..table.len()).map(|i| (s[i], z[i], e[i])).collect()),
    };
    if table.e_hat().is_some() {
        point_metrics(&mut sink, BABE, &babe_pairs);
    }
    point_metrics(&mut sink, BASELINE, &z_pairs);

    for g in [None, Some(0), Some(1)] {
        let scope = scope_name(g);
        let Some(truth) = empirical(scoped(&e, s, g)) else { continue };
        let observed = empirical(scoped(z, s, g)).expect("same rows as truth");
        sink.push(BASELINE, "wasserstein", &scope, metrics::wasserstein_union(&observed, &truth));
        if let Some(est) = estimate {
            let fitted = match g {
                Some(g) if g < est.num_groups() => est.group(GroupLabel(g)).clone(),
                Some(_) => continue,
                None => {
                    let w = crate::channel::group_weights(table, est.num_groups());
                    est.mixture(&w)?
                }
            };
            sink.push(BABE, "wasserstein", &scope, metrics::wasserstein_union(&fitted, &truth));
        }
    }
    Ok(sink.rows)
}
