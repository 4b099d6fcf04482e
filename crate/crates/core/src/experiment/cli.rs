//! Argument parsing and dispatch for the `phsbench` binary.

use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

use super::commands::{
    cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_report, import_reports, registry_listing,
    registry_validate, CommandError, ReportOptions,
};
use super::config::{ExperimentConfig, DEFAULT_HOME};
use super::store::{FailureKind, RunMetrics, RunStatus, RunStore};
use crate::corpus::Registry;
use crate::evalkit::{published::published_reports, read_reports, OutputFormat};

#[derive(Debug, Parser)]
#[command(
    name = "phsbench",
    version,
    about = "Public-health social media text benchmark runner"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for datasets, folds and batch preparation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Continue MLM/NSP pretraining on the configured corpus.
    Pretrain,
    /// Fine-tune and evaluate on every configured dataset.
    Finetune,
    /// Import predictions or precomputed reports into the run store.
    Evaluate(EvaluateArgs),
    /// Render the comparison table from the run store.
    Report(ReportArgs),
    /// Inspect the dataset registry.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["predictions", "reports", "published"])))]
struct EvaluateArgs {
    /// Predictions JSONL (`id`, `prediction`, optional `fold`).
    #[arg(long, requires = "dataset")]
    predictions: Option<PathBuf>,
    /// Report JSONL as written by the evaluation kit.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// The bundled published comparison grid.
    #[arg(long)]
    published: bool,
    /// Dataset the predictions belong to.
    #[arg(long)]
    dataset: Option<String>,
    /// Model id for the predictions; defaults to the config's.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Baseline model id for the first ΔMP column.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value = "md")]
    format: OutputFormat,
    /// Run ids whose reports override the latest ones.
    #[arg(long)]
    pin: Vec<String>,
    /// Column order, comma separated.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum RegistryAction {
    List {
        #[arg(long, default_value = "md")]
        format: OutputFormat,
    },
    /// Check the registry against the bundled dataset statistics.
    Validate {
        /// Also require every data file to exist.
        #[arg(long)]
        check_files: bool,
    },
}

pub type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

/// Process environment lookup.
pub fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, env: Env, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, env, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(
    cli: &Cli,
    env: Env,
    required: bool,
) -> Result<Option<ExperimentConfig>, CommandError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if required => return Err(CommandError::Usage("this command needs --config".into())),
        None => return Ok(None),
    };
    cfg.apply_env(env);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

fn store_root(cfg: Option<&ExperimentConfig>, env: Env) -> PathBuf {
    match cfg {
        Some(c) => c.store_root(env),
        None => env("PHSBENCH_HOME")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_HOME)),
    }
}

fn registry_for(
    cfg: Option<&ExperimentConfig>,
    env: Env,
) -> Result<(Registry, bool), CommandError> {
    let root = store_root(cfg, env);
    let explicit = cfg
        .and_then(|c| c.registry_path.clone())
        .or_else(|| env("PHSBENCH_REGISTRY").map(PathBuf::from));
    match explicit {
        Some(p) => Registry::load(&p).map(|r| (r, false)),
        None => {
            let data_root = cfg
                .and_then(|c| c.data_root.clone())
                .or_else(|| env("PHSBENCH_DATA_ROOT").map(PathBuf::from))
                .unwrap_or_else(|| root.join("data"));
            Ok((Registry::bundled(&data_root), true))
        }
    }
    .map_err(|e| CommandError::Data {
        stage: "registry",
        message: e.to_string(),
    })
}

fn dispatch(
    cli: Cli,
    env: Env,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CommandError> {
    let jobs = cli.jobs as usize;
    let io = |e: std::io::Error| CommandError::Data {
        stage: "output",
        message: e.to_string(),
    };
    match &cli.command {
        Command::Pretrain => {
            let cfg = load_config(&cli, env, true)?.expect("required");
            let store = RunStore::open(cfg.store_root(env))?;
            let rec = cmd_pretrain(&cfg, &store, jobs)?;
            if let RunMetrics::Trajectory {
                steps,
                final_mlm_loss,
                ..
            } = &rec.metrics
            {
                let loss = final_mlm_loss
                    .map(|l| format!("{l:.4}"))
                    .unwrap_or_else(|| "-".into());
                writeln!(
                    out,
                    "pretrain run {}: {steps} steps, final MLM loss {loss}",
                    rec.run_id
                )
                .map_err(io)?;
            }
            for a in &rec.artifacts {
                writeln!(out, "  {}", a.display()).map_err(io)?;
            }
            Ok(0)
        }
        Command::Finetune => {
            let cfg = load_config(&cli, env, true)?.expect("required");
            let store = RunStore::open(cfg.store_root(env))?;
            let records = cmd_finetune(&cfg, &store, jobs)?;
            let mut code = 0;
            for r in &records {
                let dataset = r.dataset_id.as_deref().unwrap_or("?");
                match (&r.status, r.report(), &r.failure) {
                    (RunStatus::Completed, Some(rep), _) => writeln!(
                        out,
                        "{dataset}: macro-F1 {:.2} ± {:.2} over {} folds (run {})",
                        rep.mean_f1, rep.std_f1, rep.fold_count, r.run_id
                    )
                    .map_err(io)?,
                    (_, _, Some(f)) => {
                        writeln!(err, "{dataset}: failed at {}: {}", f.stage, f.message)
                            .map_err(io)?;
                        let c = match f.kind {
                            FailureKind::Data => 2,
                            FailureKind::Training => 3,
                        };
                        if code == 0 {
                            code = c;
                        }
                    }
                    _ => {}
                }
                for w in &r.warnings {
                    writeln!(err, "{dataset}: warning: {w}").map_err(io)?;
                }
            }
            Ok(code)
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&cli, env, args.predictions.is_some())?;
            let store = RunStore::open(store_root(cfg.as_ref(), env))?;
            let records = if let Some(path) = &args.predictions {
                let cfg = cfg.expect("required");
                let dataset = args.dataset.as_deref().expect("clap requires --dataset");
                let model = args.model.clone().unwrap_or_else(|| cfg.model_id.clone());
                vec![cmd_evaluate(&cfg, &store, dataset, &model, path)?]
            } else if let Some(path) = &args.reports {
                let f = std::fs::File::open(path).map_err(|e| CommandError::Data {
                    stage: "reports",
                    message: format!("{}: {e}", path.display()),
                })?;
                let reports = read_reports(BufReader::new(f)).map_err(|e| CommandError::Data {
                    stage: "reports",
                    message: e.to_string(),
                })?;
                import_reports(&store, &reports)?
            } else {
                let (registry, _) = registry_for(cfg.as_ref(), env)?;
                import_reports(&store, &published_reports(Some(&registry)))?
            };
            for r in &records {
                if let Some(rep) = r.report() {
                    writeln!(
                        out,
                        "{} / {}: macro-F1 {:.2} (run {})",
                        rep.dataset_id, rep.model_id, rep.mean_f1, r.run_id
                    )
                    .map_err(io)?;
                }
            }
            Ok(0)
        }
        Command::Report(args) => {
            let cfg = load_config(&cli, env, false)?;
            let store = RunStore::open(store_root(cfg.as_ref(), env))?;
            let (registry, _) = registry_for(cfg.as_ref(), env)?;
            let settings = cfg.as_ref().map(|c| c.report.clone()).unwrap_or_default();
            let mut pins = settings.pin.clone();
            pins.extend(args.pin.iter().cloned());
            let options = ReportOptions {
                baseline: args
                    .baseline
                    .clone()
                    .or(settings.baseline)
                    .unwrap_or_else(|| ReportOptions::default().baseline),
                pins,
                model_order: args.models.clone().or(settings.model_order),
            };
            let table = cmd_report(&store, Some(&registry), &options)?;
            for w in &table.warnings {
                writeln!(err, "warning: {w}").map_err(io)?;
            }
            let text = table.render(args.format);
            match &args.output {
                Some(p) => std::fs::write(p, text).map_err(io)?,
                None => write!(out, "{text}").map_err(io)?,
            }
            Ok(0)
        }
        Command::Registry { action } => {
            let cfg = load_config(&cli, env, false)?;
            let (registry, bundled) = registry_for(cfg.as_ref(), env)?;
            match action {
                RegistryAction::List { format } => {
                    write!(
                        out,
                        "{}",
                        registry_listing(&registry, *format == OutputFormat::Csv)
                    )
                    .map_err(io)?;
                    Ok(0)
                }
                RegistryAction::Validate { check_files } => {
                    let check = registry_validate(&registry, bundled, *check_files);
                    for p in &check.problems {
                        writeln!(out, "FAIL {p}").map_err(io)?;
                    }
                    let verdict = if check.problems.is_empty() {
                        "OK"
                    } else {
                        "FAIL"
                    };
                    writeln!(out, "{verdict}: {}", check.summary()).map_err(io)?;
                    Ok(if check.problems.is_empty() { 0 } else { 2 })
                }
            }
        }
    }
}
