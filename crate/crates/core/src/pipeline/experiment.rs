//! Repeated source → channel → target → estimate → decode → score runs.
//!
//! Repetition `r` uses the seed `derive_seed(base_seed, r)`. Synthetic runs
//! generate a fresh shift suite from it; runs over fixed input files only
//! re-split the targets. Each target is split per group into an estimation
//! part (without `e`, `y`) and a held-out part that is decoded and scored.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, MetricRow};
use super::io;
use super::PipelineError;
use crate::channel::{empirical_phi, estimate_channel};
use crate::datagen::{derive_seed, generate_shift_suite, GeneratedDataset};
use crate::decoder::{method1_applicability, preprocess};
use crate::estimator::{babe_estimate, EmConfig, EmResult};
use crate::types::{Channel, DecisionMethod, Domain, GroupLabel, SampleTable};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset_id: String,
    /// Rule that produced the labels.
    pub method: DecisionMethod,
    pub em_iterations: Vec<usize>,
    pub em_converged: Vec<bool>,
    pub wall_time_seconds: f64,
    /// Fraction of held-out rows on which the mode rule does not abstain.
    pub applicability_fraction: f64,
    pub estimation_rows: usize,
    pub evaluation_rows: usize,
    pub metric_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub metrics: Vec<MetricRow>,
    pub failures: Vec<RunFailure>,
}

pub fn run_id(repetition: usize) -> String {
    format!("r{repetition}")
}

/// Splits row indices per group; `round(fraction · n_s)` rows of each group go
/// to the first part. Both parts are returned in row order.
pub fn stratified_split(table: &SampleTable, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for g in 0..table.num_groups() {
        let mut rows: Vec<usize> = (0..table.len()).filter(|&i| table.s()[i].0 == g).collect();
        rows.shuffle(&mut rng);
        let k = (fraction * rows.len() as f64).round() as usize;
        first.extend_from_slice(&rows[..k]);
        second.extend_from_slice(&rows[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Fits `P̂[E|S]` from the `(s, z)` columns of `estimation` only.
pub fn fit_target(channel: &Channel, estimation: &SampleTable, em: &EmConfig) -> Result<EmResult> {
    let obs = estimation.observations_only();
    let phi = empirical_phi(&obs, channel.z_domain(), channel.num_groups())?;
    Ok(babe_estimate(channel, &phi, em)?)
}

/// The generated source and targets of repetition `repetition`.
pub fn synthetic_suite(cfg: &ExperimentConfig, repetition: usize) -> Result<Vec<GeneratedDataset>> {
    let mut base = cfg.generator.clone();
    base.seed = derive_seed(cfg.base_seed, repetition as u64);
    Ok(generate_shift_suite(&base, &cfg.shift.mean0_values, cfg.shift.p_group1_target)?)
}

/// Writes `<dataset_id>.csv` per table plus `manifest.csv`; returns the paths.
pub fn write_suite(dir: &Path, suite: &[GeneratedDataset]) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    let mut manifest = Vec::new();
    for d in suite {
        let file = format!("{}.csv", d.id);
        let path = dir.join(&file);
        io::write_dataset(&path, &d.table)?;
        paths.push(path);
        manifest.push(vec![
            d.id.clone(),
            d.role.as_str().to_string(),
            file,
            d.config.seed.to_string(),
            d.config.mean0.to_string(),
            d.config.mean1.to_string(),
            d.config.p_group1.to_string(),
            d.table.len().to_string(),
        ]);
    }
    io::write_records(
        &dir.join("manifest.csv"),
        &["dataset_id", "role", "file", "seed", "mean0", "mean1", "p_group1", "n_samples"],
        manifest,
    )?;
    Ok(paths)
}

struct Prepared {
    channel: Channel,
    targets: Vec<(String, SampleTable)>,
}

fn prepare_channel(cfg: &ExperimentConfig, source: &SampleTable, e: &Domain, z: &Domain) -> Result<Channel> {
    let groups = source.num_groups().max(2);
    let est = estimate_channel(source, e, z, groups, cfg.smoothing)?;
    if !est.warnings.is_empty() {
        log::warn!("{} channel rows had no source observations and were set uniform", est.warnings.len());
    }
    Ok(est.channel)
}

fn load_fixed(cfg: &ExperimentConfig, e: &Domain, z: &Domain) -> Result<Option<Prepared>> {
    let Some(input) = &cfg.input else { return Ok(None) };
    let source = io::read_dataset(&input.source)?;
    let channel = prepare_channel(cfg, &source, e, z)?;
    let targets = input
        .targets
        .iter()
        .map(|p| {
            let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((id, io::read_dataset(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Prepared { channel, targets }))
}

fn run_target(
    cfg: &ExperimentConfig,
    channel: &Channel,
    run: &str,
    dataset_id: &str,
    target: &SampleTable,
    split_seed: u64,
) -> Result<(RunRecord, Vec<MetricRow>)> {
    let (est_rows, eval_rows) = stratified_split(target, cfg.split_fraction, split_seed);
    let estimation = target.select(&est_rows).observations_only();
    let held_out = target.select(&eval_rows).without_derived();

    let fit = fit_target(channel, &estimation, &cfg.em)?;
    let prior = &fit.estimate;
    let applicability = method1_applicability(&held_out.observations_only(), channel, prior, cfg.mass_floor)?;
    let method = cfg.method.resolve(applicability);

    // e_hat always comes from the mode rule; labels from the chosen rule.
    let by_mode = preprocess(&held_out, channel, prior, &cfg.threshold, DecisionMethod::Mode, cfg.mass_floor)?;
    let labelled = match method {
        DecisionMethod::Mode => by_mode.table,
        DecisionMethod::Mass => {
            preprocess(&held_out, channel, prior, &cfg.threshold, DecisionMethod::Mass, cfg.mass_floor)?
                .table
                .with_e_hat(by_mode.table.e_hat().map(<[_]>::to_vec))?
        }
    };
    let metrics = evaluate(&labelled, &cfg.threshold, Some(prior), run, dataset_id)?;
    let record = RunRecord {
        run_id: run.to_string(),
        dataset_id: dataset_id.to_string(),
        method,
        em_iterations: fit.iterations.clone(),
        em_converged: fit.converged.clone(),
        wall_time_seconds: fit.wall_time,
        applicability_fraction: applicability,
        estimation_rows: est_rows.len(),
        evaluation_rows: eval_rows.len(),
        metric_rows: metrics.len(),
    };
    log::info!(
        "{run}/{dataset_id}: {} iterations, {:.3}s, applicability {:.3}, method {}",
        fmt_list(&record.em_iterations),
        record.wall_time_seconds,
        applicability,
        method.code()
    );
    Ok((record, metrics))
}

fn run_repetition(
    cfg: &ExperimentConfig,
    fixed: Option<&Prepared>,
    domains: &(Domain, Domain),
    rep: usize,
) -> Result<Vec<(RunRecord, Vec<MetricRow>)>> {
    let seed = derive_seed(cfg.base_seed, rep as u64);
    let run = run_id(rep);
    let generated;
    let (channel, targets): (Channel, Vec<(&str, &SampleTable)>) = match fixed {
        Some(p) => (p.channel.clone(), p.targets.iter().map(|(id, t)| (id.as_str(), t)).collect()),
        None => {
            generated = synthetic_suite(cfg, rep)?;
            let channel = prepare_channel(cfg, &generated[0].table, &domains.0, &domains.1)?;
            (channel, generated[1..].iter().map(|d| (d.id.as_str(), &d.table)).collect())
        }
    };
    targets
        .iter()
        .enumerate()
        .map(|(i, (id, t))| run_target(cfg, &channel, &run, id, t, derive_seed(seed, 1000 + i as u64)))
        .collect()
}

/// Runs every repetition. A failing repetition is logged and listed in
/// [`ExperimentOutput::failures`]; the others still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let domains = cfg.domains()?;
    let fixed = load_fixed(cfg, &domains.0, &domains.1)?;
    let one = |rep: usize| run_repetition(cfg, fixed.as_ref(), &domains, rep);
    let outcomes: Vec<_> = if cfg.parallel {
        (0..cfg.repetitions).into_par_iter().map(one).collect()
    } else {
        (0..cfg.repetitions).map(one).collect()
    };

    let mut out = ExperimentOutput::default();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(runs) => {
                for (record, metrics) in runs {
                    out.records.push(record);
                    out.metrics.extend(metrics);
                }
            }
            Err(e) => {
                log::error!("repetition {rep} aborted: {e}");
                out.failures.push(RunFailure { run_id: run_id(rep), message: e.to_string() });
            }
        }
    }
    Ok(out)
}

/// Plot-data files and the metrics each one holds.
pub const PLOT_FILES: [(&str, &[&str]); 7] = [
    ("fig3_wass", &["wasserstein"]),
    ("fig4_accE", &["acc_e"]),
    ("fig5_accY", &["acc_y"]),
    ("fig6_dist", &["dist"]),
    ("fig7_cspd", &["cspd_mean_signed", "cspd_mean_abs", "cspd"]),
    ("fig8_eod", &["eod", "tpr"]),
    ("fig9_spd", &["spd"]),
];

pub const RUNTIME_FILE: &str = "appB_runtime";

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// Writes `results.csv`, `runrecords.csv`, `failures.csv` and `plots/*.csv`.
///
/// Only `runrecords.csv` and `plots/appB_runtime.csv` contain wall times;
/// every other file is a function of the configuration.
pub fn write_experiment(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    io::write_metric_rows(&dir.join("results.csv"), &out.metrics)?;
    io::write_records(
        &dir.join("runrecords.csv"),
        &[
            "run_id",
            "dataset_id",
            "method",
            "em_iterations",
            "em_converged",
            "wall_time_seconds",
            "applicability_fraction",
            "estimation_rows",
            "evaluation_rows",
            "metric_rows",
        ],
        out.records.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.dataset_id.clone(),
                r.method.code().to_string(),
                fmt_list(&r.em_iterations),
                fmt_list(&r.em_converged),
                r.wall_time_seconds.to_string(),
                r.applicability_fraction.to_string(),
                r.estimation_rows.to_string(),
                r.evaluation_rows.to_string(),
                r.metric_rows.to_string(),
            ]
        }),
    )?;
    io::write_records(
        &dir.join("failures.csv"),
        &["run_id", "message"],
        out.failures.iter().map(|f| vec![f.run_id.clone(), f.message.clone()]),
    )?;
    let plots = dir.join("plots");
    for (name, metrics) in PLOT_FILES {
        let rows: Vec<MetricRow> = out.metrics.iter().filter(|r| metrics.contains(&r.metric.as_str())).cloned().collect();
        io::write_metric_rows(&plots.join(format!("{name}.csv")), &rows)?;
    }
    io::write_records(
        &plots.join(format!("{RUNTIME_FILE}.csv")),
        &["run_id", "dataset_id", "group_scope", "iterations", "converged", "wall_time_seconds"],
        out.records.iter().flat_map(|r| {
            r.em_iterations.iter().zip(&r.em_converged).enumerate().map(|(g, (it, ok))| {
                vec![
                    r.run_id.clone(),
                    r.dataset_id.clone(),
                    format!("s{g}"),
                    it.to_string(),
                    ok.to_string(),
                    r.wall_time_seconds.to_string(),
                ]
            })
        }),
    )?;
    Ok(())
}

/// Number of rows of `table` in group `s`, for reporting.
pub fn group_rows(table: &SampleTable, s: usize) -> usize {
    table.group_count(GroupLabel(s))
}
