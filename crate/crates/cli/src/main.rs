use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use babe::channel::{channel_diagnostics, estimate_channel};
use babe::decoder::preprocess;
use babe::pipeline::config::MethodChoice;
use babe::pipeline::experiment::{fit_target, synthetic_suite, write_experiment, write_suite};
use babe::pipeline::{evaluate, io, run_experiment, ExperimentConfig, PipelineError};
use babe::types::{DecisionMethod, DecisionThreshold};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "babe", version, about = "Bias elimination through a known bias channel")]
struct Cli {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `output_dir` from the config).
    #[arg(long, global = true, env = "BABE_OUT_DIR")]
    out: Option<PathBuf>,
    /// Run repetitions and groups concurrently.
    #[arg(long, global = true)]
    parallel: bool,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the source and target datasets plus manifest.csv.
    Generate,
    /// Estimate P[Z|E,S] from a source table with an e column.
    EstimateChannel {
        #[arg(long)]
        source: PathBuf,
        /// Additive smoothing (default 0).
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
    },
    /// Fit P̂[E|S] to the (s, z) columns of a target table.
    Estimate {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        channel: PathBuf,
    },
    /// Label every row of a target with e_hat and y_hat.
    Preprocess {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        channel: PathBuf,
        /// Distribution file written by `estimate`.
        #[arg(long)]
        estimate: PathBuf,
        /// 1, 2 or auto (default: the config's `method`).
        #[arg(long)]
        method: Option<MethodChoice>,
    },
    /// Score an augmented table that still has its truth columns.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Optional fitted distribution, for the Wasserstein rows.
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Run the full repeated experiment.
    Experiment,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    if cli.parallel {
        cfg.parallel = true;
        cfg.em.parallel = true;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".to_string(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Generate => {
            let suite = synthetic_suite(&cfg, 0)?;
            let paths = write_suite(&out, &suite)?;
            log::info!("wrote {} datasets to {}", paths.len(), out.display());
        }
        Command::EstimateChannel { source, smoothing } => {
            let (e_domain, z_domain) = cfg.domains().map_err(PipelineError::from)?;
            let table = io::read_dataset(source)?;
            let groups = table.num_groups().max(2);
            let est = estimate_channel(&table, &e_domain, &z_domain, groups, *smoothing).map_err(PipelineError::from)?;
            io::write_channel(&out.join("channel.csv"), &est.channel)?;
            let diag = channel_diagnostics(&est.channel);
            for d in &diag {
                log::info!(
                    "group {}: rank {} of {}, min singular value {:e}",
                    d.group,
                    d.rank,
                    e_domain.len(),
                    d.min_singular_value
                );
            }
            io::write_records(
                &out.join("channel_diagnostics.csv"),
                &["s", "rank", "e_values", "min_singular_value", "max_singular_value"],
                diag.iter().map(|d| {
                    vec![
                        d.group.0.to_string(),
                        d.rank.to_string(),
                        e_domain.len().to_string(),
                        d.min_singular_value.to_string(),
                        d.max_singular_value.to_string(),
                    ]
                }),
            )?;
            if !est.warnings.is_empty() {
                log::warn!("{} (s, e) rows had no source observations; set uniform", est.warnings.len());
            }
            io::write_records(
                &out.join("zero_rows.csv"),
                &["s", "e"],
                est.warnings.iter().map(|w| vec![w.group.0.to_string(), w.e.to_string()]),
            )?;
        }
        Command::Estimate { target, channel } => {
            let channel = io::read_channel(channel)?;
            let table = io::read_dataset(target)?;
            let fit = fit_target(&channel, &table, &cfg.em)?;
            io::write_distribution(&out.join("estimate.csv"), &fit.estimate)?;
            io::write_records(
                &out.join("em_result.csv"),
                &["s", "iterations", "converged", "wall_time_seconds"],
                fit.iterations.iter().zip(&fit.converged).enumerate().map(|(g, (it, ok))| {
                    vec![g.to_string(), it.to_string(), ok.to_string(), fit.wall_time.to_string()]
                }),
            )?;
            log::info!("iterations {:?}, converged {:?}, {:.3}s", fit.iterations, fit.converged, fit.wall_time);
        }
        Command::Preprocess { target, channel, estimate, method } => {
            let channel = io::read_channel(channel)?;
            let prior = io::read_distribution(estimate)?;
            let table = io::read_dataset(target)?;
            let choice = method.unwrap_or(cfg.method);
            let thr: DecisionThreshold = cfg.threshold;
            let by_mode = preprocess(&table, &channel, &prior, &thr, DecisionMethod::Mode, cfg.mass_floor)
                .map_err(PipelineError::from)?;
            let applicability = by_mode.summary.applicability_fraction;
            let chosen = choice.resolve(applicability);
            let result = match chosen {
                DecisionMethod::Mode => by_mode,
                DecisionMethod::Mass => preprocess(&table, &channel, &prior, &thr, DecisionMethod::Mass, cfg.mass_floor)
                    .map_err(PipelineError::from)?,
            };
            io::write_dataset(&out.join("augmented.csv"), &result.table)?;
            let s = result.summary;
            io::write_records(
                &out.join("preprocess_summary.csv"),
                &["rows", "method", "applicability_fraction", "abstained_rows", "tie_rows", "multimodal_rows"],
                [vec![
                    s.rows.to_string(),
                    chosen.code().to_string(),
                    applicability.to_string(),
                    s.abstained_rows.to_string(),
                    s.tie_rows.to_string(),
                    s.multimodal_rows.to_string(),
                ]],
            )?;
            log::info!("method {} (mode applicability {:.3})", chosen.code(), applicability);
        }
        Command::Evaluate { input, estimate } => {
            let table = io::read_dataset(input)?;
            let prior = estimate.as_deref().map(io::read_distribution).transpose()?;
            let rows = evaluate(&table, &cfg.threshold, prior.as_ref(), "eval", &stem(input))?;
            io::write_metric_rows(&out.join("results.csv"), &rows)?;
        }
        Command::Experiment => {
            let result = run_experiment(&cfg)?;
            write_experiment(&result, &out)?;
            log::info!(
                "{} run records, {} failed repetitions, results in {}",
                result.records.len(),
                result.failures.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(e) => e.exit_code() as u8,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match run(&cli).context("babe failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(exit_code(&err))
        }
    }
}
