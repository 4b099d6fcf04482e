use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{derive_seed, ConfigError, ExperimentConfig};
use super::store::{
    CommandKind, FailureKind, RunFailure, RunMetrics, RunRecord, RunStatus, RunStore, StoreError,
};
use crate::corpus::{
    ingest, stratified_kfold, DatasetDescriptor, Fold, IngestOptions, LabeledExample, Registry,
    SplitStrategy, TaskFamily,
};
use crate::evalkit::{
    aggregate, build_comparison_table, ComparisonTable, EvalReport, FoldResult, TableLayout,
};
use crate::finetune::{build_classifier, finetune, plan_training, EpochMetrics, FinetuneError};
use crate::nn::{Checkpoint, Encoder};
use crate::normalizer::{normalize, normalize_corpus, read_posts, NormalizationConfig, RawPost};
use crate::pretrain::{
    run_pretraining_with_heads, write_trajectory_csv, PretrainError, PretrainHeads,
};
use crate::tokenizer::{Tokenizer, WordPiece};

/// Errors carry the stage that failed. The variant decides the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Data {
        stage: &'static str,
        message: String,
    },
    #[error("{stage}: {message}")]
    Training {
        stage: &'static str,
        message: String,
    },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 1,
            CommandError::Data { .. } => 2,
            CommandError::Training { .. } => 3,
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            CommandError::Usage(_) => "config",
            CommandError::Data { stage, .. } | CommandError::Training { stage, .. } => stage,
        }
    }

    fn data(stage: &'static str, e: impl Display) -> Self {
        CommandError::Data {
            stage,
            message: e.to_string(),
        }
    }

    fn training(stage: &'static str, e: impl Display) -> Self {
        CommandError::Training {
            stage,
            message: e.to_string(),
        }
    }

    fn failure(&self) -> RunFailure {
        let (kind, message) = match self {
            CommandError::Usage(m) => (FailureKind::Data, m.clone()),
            CommandError::Data { message, .. } => (FailureKind::Data, message.clone()),
            CommandError::Training { message, .. } => (FailureKind::Training, message.clone()),
        };
        RunFailure {
            stage: self.stage().to_string(),
            kind,
            message,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Usage(e.to_string())
    }
}

impl From<StoreError> for CommandError {
    fn from(e: StoreError) -> Self {
        CommandError::data("store", e)
    }
}

fn pretrain_error(e: PretrainError) -> CommandError {
    match e {
        PretrainError::InvalidConfig(_) | PretrainError::RandomInitRefused => {
            CommandError::Usage(format!("pretrain: {e}"))
        }
        PretrainError::CannotPair(_)
        | PretrainError::NothingMaskable
        | PretrainError::VocabMismatch { .. } => CommandError::data("pretrain", e),
        PretrainError::NonFiniteLoss { .. } => CommandError::training("pretrain", e),
    }
}

fn finetune_error(e: FinetuneError) -> CommandError {
    match e {
        FinetuneError::NonFiniteLoss { .. }
        | FinetuneError::DataLeak(_)
        | FinetuneError::Eval(_) => CommandError::training("finetune", e),
        FinetuneError::InvalidConfig(_) | FinetuneError::InvalidSchedule(_) => {
            CommandError::Usage(format!("finetune: {e}"))
        }
        _ => CommandError::data("finetune", e),
    }
}

pub fn write_json_lines<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, &item)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CommandError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CommandError::Usage(format!("cannot start {jobs} workers: {e}")))
}

/// File name of the encoder checkpoint a `pretrain` run leaves behind.
pub const PRETRAIN_CHECKPOINT: &str = "encoder.ckpt";

/// Normalizes the corpus, pretrains and saves checkpoint + loss trajectory.
///
/// Failures before training leave no trace; later failures leave the run
/// directory marked incomplete. No record is appended unless every
/// artifact was written.
pub fn cmd_pretrain(
    cfg: &ExperimentConfig,
    store: &RunStore,
    jobs: usize,
) -> Result<RunRecord, CommandError> {
    let cfg = &cfg.resolved();
    cfg.validate()?;
    let started = Utc::now();
    let section = &cfg.pretrain;
    let corpus_path = section
        .corpus_path
        .as_ref()
        .ok_or_else(|| CommandError::Usage("pretrain.corpus_path is not set".into()))?;
    let file = File::open(corpus_path)
        .map_err(|e| CommandError::data("corpus", format!("{}: {e}", corpus_path.display())))?;

    let ncfg = cfg.normalizer.build()?;
    let (posts, stats) = normalize_corpus(read_posts(BufReader::new(file)), &ncfg);
    let mut warnings = Vec::new();
    if stats.skipped > 0 {
        warnings.push(format!(
            "skipped {} undecodable corpus lines",
            stats.skipped
        ));
    }
    if posts.is_empty() {
        return Err(CommandError::data("normalize", "corpus has no posts"));
    }

    let (encoder, tokenizer, heads) = match &section.objective.init_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| CommandError::data("model", e))?;
            let tokenizer = match (&ck.vocab, &section.vocab_path) {
                (Some(v), _) => {
                    WordPiece::from_tokens(v.clone()).map_err(|e| CommandError::data("model", e))?
                }
                (None, Some(p)) => {
                    WordPiece::from_file(p).map_err(|e| CommandError::data("model", e))?
                }
                (None, None) => {
                    return Err(CommandError::data(
                        "model",
                        "checkpoint has no vocabulary and vocab_path is not set",
                    ))
                }
            };
            let (h, v) = (ck.encoder.config.hidden, ck.encoder.config.vocab_size);
            let heads = match (ck.head("mlm"), ck.head("nsp")) {
                (Some(m), Some(n)) => PretrainHeads::from_sets(m, n, h, v),
                _ => None,
            };
            (ck.encoder, tokenizer, heads)
        }
        None => {
            let tokenizer = match &section.vocab_path {
                Some(p) => WordPiece::from_file(p).map_err(|e| CommandError::data("model", e))?,
                None => WordPiece::build(posts.iter().map(|p| p.text.as_str()), section.vocab_size),
            };
            let config = section.encoder.encoder_config(tokenizer.vocab_size());
            let seed = derive_seed(cfg.seed, "pretrain-init", 0);
            (Encoder::random(config, seed), tokenizer, None)
        }
    };
    let heads = heads.unwrap_or_else(|| {
        PretrainHeads::random(
            encoder.config.hidden,
            encoder.config.vocab_size,
            derive_seed(cfg.seed, "pretrain-heads", 0),
        )
    });

    let run_id = RunStore::new_run_id();
    let run_dir = store.create_run_dir(&run_id)?;
    let outcome = thread_pool(jobs)?
        .install(|| {
            run_pretraining_with_heads(
                &posts,
                encoder,
                heads,
                &tokenizer,
                &section.objective,
                section.steps,
            )
        })
        .map_err(|e| {
            let err = pretrain_error(e);
            store.mark_incomplete(&run_dir, &err.to_string());
            err
        })?;

    let save = || -> Result<Vec<PathBuf>, String> {
        let ckpt = run_dir.join(PRETRAIN_CHECKPOINT);
        Checkpoint {
            encoder: outcome.encoder.clone(),
            heads: vec![
                ("mlm".into(), outcome.heads.mlm.clone()),
                ("nsp".into(), outcome.heads.nsp.clone()),
            ],
            vocab: Some(tokenizer.tokens().to_vec()),
            metadata: serde_json::json!({
                "model_id": cfg.model_id,
                "run_id": run_id,
                "config_hash": cfg.config_hash(),
                "steps": section.steps,
            }),
        }
        .save(&ckpt)
        .map_err(|e| e.to_string())?;
        let traj = run_dir.join("trajectory.csv");
        let f = File::create(&traj).map_err(|e| e.to_string())?;
        write_trajectory_csv(&outcome.trajectory, f).map_err(|e| e.to_string())?;
        let stats_path = run_dir.join("normalization.json");
        std::fs::write(
            &stats_path,
            serde_json::to_string_pretty(&stats).expect("stats serialize"),
        )
        .map_err(|e| e.to_string())?;
        Ok(vec![ckpt, traj, stats_path])
    };
    let artifacts = save().map_err(|e| {
        store.mark_incomplete(&run_dir, &e);
        CommandError::data("save", e)
    })?;

    let record = RunRecord {
        run_id,
        command: CommandKind::Pretrain,
        status: RunStatus::Completed,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        started,
        ended: Utc::now(),
        model_id: cfg.model_id.clone(),
        dataset_id: None,
        metrics: RunMetrics::Trajectory {
            path: store.relative(&artifacts[1]),
            steps: outcome.trajectory.len(),
            final_mlm_loss: outcome.trajectory.last().map(|r| r.mlm_loss),
        },
        artifacts: artifacts.iter().map(|p| store.relative(p)).collect(),
        warnings,
        failure: None,
    };
    store.append(&record)?;
    Ok(record)
}

/// `(id, gold, predicted)` for one test example.
type Prediction = (String, usize, usize);

/// Starting point shared by every fold of a fine-tuning invocation.
#[allow(clippy::large_enum_variant)]
enum BaseModel {
    Pretrained {
        encoder: Encoder,
        tokenizer: Arc<WordPiece>,
    },
    Random,
}

fn load_base(cfg: &ExperimentConfig, store: &RunStore) -> Result<BaseModel, CommandError> {
    let path = match (&cfg.finetune.checkpoint, &cfg.finetune.pretrain_run) {
        (Some(p), _) => p.clone(),
        (None, Some(run)) => {
            let rec = store
                .records()?
                .into_iter()
                .find(|r| &r.run_id == run)
                .ok_or_else(|| {
                    CommandError::data("model", format!("no run `{run}` in the store"))
                })?;
            if rec.command != CommandKind::Pretrain || rec.status != RunStatus::Completed {
                return Err(CommandError::data(
                    "model",
                    format!("run `{run}` is not a completed pretrain run"),
                ));
            }
            store
                .root()
                .join("runs")
                .join(run)
                .join(PRETRAIN_CHECKPOINT)
        }
        (None, None) if cfg.finetune.allow_random_init => return Ok(BaseModel::Random),
        (None, None) => {
            return Err(CommandError::Usage(
                "finetune needs `checkpoint`, `pretrain_run`, or `allow_random_init = true`".into(),
            ))
        }
    };
    let ck = Checkpoint::load(&path).map_err(|e| CommandError::data("model", e))?;
    let vocab = ck.vocab.ok_or_else(|| {
        CommandError::data("model", format!("{} has no vocabulary", path.display()))
    })?;
    let tokenizer = WordPiece::from_tokens(vocab).map_err(|e| CommandError::data("model", e))?;
    Ok(BaseModel::Pretrained {
        encoder: ck.encoder,
        tokenizer: Arc::new(tokenizer),
    })
}

struct FinetuneContext<'a> {
    cfg: &'a ExperimentConfig,
    store: &'a RunStore,
    registry: &'a Registry,
    base: &'a BaseModel,
    normalizer: NormalizationConfig,
    config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub result: FoldResult,
    pub epochs: Vec<EpochMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    fold: usize,
    id: &'a str,
    label: &'a str,
    prediction: &'a str,
}

/// Fine-tunes and evaluates every configured dataset, one record each.
///
/// Datasets and their folds run on a pool of `jobs` workers. A dataset that
/// fails yields a failed record; the others carry on.
pub fn cmd_finetune(
    cfg: &ExperimentConfig,
    store: &RunStore,
    jobs: usize,
) -> Result<Vec<RunRecord>, CommandError> {
    let cfg = &cfg.resolved();
    cfg.validate()?;
    if cfg.dataset_ids.is_empty() {
        return Err(CommandError::Usage("dataset_ids is empty".into()));
    }
    let registry = cfg
        .registry(store.root())
        .map_err(|e| CommandError::data("registry", e))?;
    cfg.check_datasets(&registry)
        .map_err(|e| CommandError::data("registry", e))?;
    let base = load_base(cfg, store)?;
    let ctx = FinetuneContext {
        cfg,
        store,
        registry: &registry,
        base: &base,
        normalizer: cfg.normalizer.build()?,
        config_hash: cfg.config_hash(),
    };
    let records = thread_pool(jobs)?.install(|| {
        cfg.dataset_ids
            .par_iter()
            .map(|d| {
                let record = finetune_dataset(&ctx, d);
                store.append(&record).map(|_| record)
            })
            .collect::<Result<Vec<_>, StoreError>>()
    })?;
    Ok(records)
}

fn finetune_dataset(ctx: &FinetuneContext, dataset_id: &str) -> RunRecord {
    let started = Utc::now();
    let run_id = RunStore::new_run_id();
    let mut record = RunRecord {
        run_id: run_id.clone(),
        command: CommandKind::Finetune,
        status: RunStatus::Completed,
        config_hash: ctx.config_hash.clone(),
        seed: ctx.cfg.seed,
        started,
        ended: started,
        model_id: ctx.cfg.model_id.clone(),
        dataset_id: Some(dataset_id.to_string()),
        artifacts: Vec::new(),
        metrics: RunMetrics::None,
        warnings: Vec::new(),
        failure: None,
    };
    let outcome = ctx
        .store
        .create_run_dir(&run_id)
        .map_err(CommandError::from)
        .and_then(|dir| {
            run_dataset(ctx, dataset_id, &dir)
                .inspect_err(|e| ctx.store.mark_incomplete(&dir, &e.to_string()))
        });
    match outcome {
        Ok((report, artifacts, warnings)) => {
            record.metrics = RunMetrics::Eval { report };
            record.artifacts = artifacts.iter().map(|p| ctx.store.relative(p)).collect();
            record.warnings = warnings;
        }
        Err(e) => {
            log::error!("{dataset_id}: {e}");
            record.status = RunStatus::Failed;
            record.failure = Some(e.failure());
        }
    }
    record.ended = Utc::now();
    record
}

fn descriptor_for(
    ctx: &FinetuneContext,
    dataset_id: &str,
) -> Result<DatasetDescriptor, CommandError> {
    let base = ctx
        .registry
        .lookup(dataset_id)
        .map_err(|e| CommandError::data("registry", e))?;
    match ctx.cfg.finetune.variants.get(dataset_id) {
        Some(v) => base.with_variant(v).ok_or_else(|| {
            CommandError::data("registry", format!("`{dataset_id}` has no variant `{v}`"))
        }),
        None => Ok(base.clone()),
    }
}

type DatasetOutcome = (EvalReport, Vec<PathBuf>, Vec<String>);

fn run_dataset(
    ctx: &FinetuneContext,
    dataset_id: &str,
    run_dir: &Path,
) -> Result<DatasetOutcome, CommandError> {
    let desc = descriptor_for(ctx, dataset_id)?;
    let options = IngestOptions {
        strict_counts: ctx.cfg.finetune.strict_counts,
    };
    let mut dataset = ingest(&desc, options).map_err(|e| CommandError::data("ingest", e))?;
    let mut warnings = Vec::new();
    if dataset.count_delta != 0 {
        warnings.push(format!(
            "{} examples where the registry lists {} (delta {:+})",
            dataset.examples.len(),
            desc.num_samples,
            dataset.count_delta
        ));
    }
    for ex in &mut dataset.examples {
        let raw = RawPost::new(ex.id.clone(), std::mem::take(&mut ex.text), desc.platform);
        ex.text = normalize(&raw, &ctx.normalizer).text;
    }
    let plan = match desc.split_strategy {
        SplitStrategy::Official => dataset.official_plan(),
        SplitStrategy::Stratified5Fold => stratified_kfold(
            dataset_id,
            &dataset.examples,
            SplitStrategy::Stratified5Fold.fold_count(),
            derive_seed(ctx.cfg.seed, &format!("split/{dataset_id}"), 0),
        ),
    }
    .map_err(|e| CommandError::data("split", e))?;

    let examples = &dataset.examples;
    let folds: Vec<(FoldLog, Vec<Prediction>)> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| run_fold(ctx, &desc, examples, i, fold, run_dir))
        .collect::<Result<_, _>>()?;

    let results: Vec<FoldResult> = folds.iter().map(|(f, _)| f.result.clone()).collect();
    let report = aggregate(&results).map_err(|e| CommandError::training("evaluate", e))?;
    for (log, _) in &folds {
        warnings.extend(
            log.warnings
                .iter()
                .map(|w| format!("fold {}: {w}", log.fold)),
        );
    }

    let folds_path = run_dir.join("folds.jsonl");
    let preds_path = run_dir.join("predictions.jsonl");
    let name = |c: usize| desc.label_names.get(c).map(String::as_str).unwrap_or("?");
    write_json_lines(&folds_path, folds.iter().map(|(f, _)| f))
        .and_then(|_| {
            write_json_lines(
                &preds_path,
                folds.iter().flat_map(|(f, preds)| {
                    preds.iter().map(move |(id, gold, pred)| PredictionLine {
                        fold: f.fold,
                        id,
                        label: name(*gold),
                        prediction: name(*pred),
                    })
                }),
            )
        })
        .map_err(|e| CommandError::data("save", e))?;
    let mut artifacts = vec![folds_path, preds_path];
    if ctx.cfg.finetune.save_models {
        artifacts.extend((0..folds.len()).map(|i| run_dir.join(format!("fold{i}.ckpt"))));
    }
    Ok((report, artifacts, warnings))
}

fn run_fold(
    ctx: &FinetuneContext,
    desc: &DatasetDescriptor,
    examples: &[LabeledExample],
    index: usize,
    fold: &Fold,
    run_dir: &Path,
) -> Result<(FoldLog, Vec<Prediction>), CommandError> {
    let section = &ctx.cfg.finetune;
    let seed = derive_seed(ctx.cfg.seed, &desc.id, index);
    let (encoder, tokenizer) = match ctx.base {
        BaseModel::Pretrained { encoder, tokenizer } => (encoder.clone(), tokenizer.clone()),
        BaseModel::Random => {
            let train_texts = examples
                .iter()
                .filter(|e| fold.train_ids.contains(&e.id))
                .map(|e| e.text.as_str());
            let wp = WordPiece::build(train_texts, section.vocab_size);
            let encoder = Encoder::random(section.encoder.encoder_config(wp.vocab_size()), seed);
            (encoder, Arc::new(wp))
        }
    };
    let shared: Arc<dyn Tokenizer> = tokenizer.clone();
    let mut model = build_classifier(
        encoder,
        shared,
        desc.num_classes,
        &section.head,
        section.training.max_seq_len,
        seed,
    )
    .map_err(finetune_error)?;

    let mut training = section.training.clone();
    training.seed = seed;
    let plan = plan_training(examples, fold, &training).map_err(finetune_error)?;
    let mut schedule = ctx.cfg.schedule.clone();
    schedule.total_steps = plan.total_steps.max(1);
    let outcome =
        finetune(&mut model, fold, examples, &training, &schedule).map_err(finetune_error)?;

    let test: Vec<&LabeledExample> = examples
        .iter()
        .filter(|e| fold.test_ids.contains(&e.id))
        .collect();
    let texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
    let gold: Vec<usize> = test.iter().map(|e| e.label).collect();
    let pred = model.predict_labels(&texts, training.batch_size.max(32));
    let result = FoldResult::from_predictions(
        &desc.id,
        &ctx.cfg.model_id,
        index,
        &gold,
        &pred,
        desc.num_classes,
    )
    .map_err(|e| CommandError::training("evaluate", e))?;
    if section.save_models {
        model
            .save(&run_dir.join(format!("fold{index}.ckpt")), &tokenizer)
            .map_err(|e| CommandError::data("save", e))?;
    }
    let predictions = test
        .iter()
        .zip(gold.iter().zip(&pred))
        .map(|(e, (&g, &p))| (e.id.clone(), g, p))
        .collect();
    Ok((
        FoldLog {
            fold: index,
            train_size: plan.train_ids.len(),
            dev_size: plan.dev_ids.len(),
            test_size: test.len(),
            result,
            epochs: outcome.epochs,
            warnings: outcome.warnings,
        },
        predictions,
    ))
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    id: String,
    prediction: serde_json::Value,
    #[serde(default)]
    fold: usize,
}

/// Scores externally produced predictions against a registry dataset.
///
/// Each JSONL line has `id`, `prediction` (label name or index) and an
/// optional `fold` (default 0). Only the ids present are scored.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    store: &RunStore,
    dataset_id: &str,
    model_id: &str,
    predictions: &Path,
) -> Result<RunRecord, CommandError> {
    let started = Utc::now();
    let registry = cfg
        .registry(store.root())
        .map_err(|e| CommandError::data("registry", e))?;
    let base = registry
        .lookup(dataset_id)
        .map_err(|e| CommandError::data("registry", e))?;
    let desc = match cfg.finetune.variants.get(dataset_id) {
        Some(v) => base.with_variant(v).ok_or_else(|| {
            CommandError::data("registry", format!("`{dataset_id}` has no variant `{v}`"))
        })?,
        None => base.clone(),
    };
    let dataset =
        ingest(&desc, IngestOptions::default()).map_err(|e| CommandError::data("ingest", e))?;
    let gold: HashMap<&str, usize> = dataset
        .examples
        .iter()
        .map(|e| (e.id.as_str(), e.label))
        .collect();

    let file = File::open(predictions).map_err(|e| {
        CommandError::data("predictions", format!("{}: {e}", predictions.display()))
    })?;
    let mut by_fold: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let bad = |m: String| {
            CommandError::data(
                "predictions",
                format!("{}:{}: {m}", predictions.display(), i + 1),
            )
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label_text = match &rec.prediction {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(bad(format!(
                    "prediction must be a string or number, got {other}"
                )))
            }
        };
        let pred = desc
            .label_index(&label_text)
            .ok_or_else(|| bad(format!("unknown label `{label_text}`")))?;
        let g = *gold
            .get(rec.id.as_str())
            .ok_or_else(|| bad(format!("id `{}` is not in the dataset", rec.id)))?;
        if !seen.insert((rec.fold, rec.id.clone())) {
            return Err(bad(format!(
                "duplicate prediction for `{}` in fold {}",
                rec.id, rec.fold
            )));
        }
        let entry = by_fold.entry(rec.fold).or_default();
        entry.0.push(g);
        entry.1.push(pred);
    }
    if by_fold.is_empty() {
        return Err(CommandError::data("predictions", "no predictions"));
    }
    let results: Vec<FoldResult> = by_fold
        .iter()
        .map(|(&f, (g, p))| {
            FoldResult::from_predictions(dataset_id, model_id, f, g, p, desc.num_classes)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CommandError::data("evaluate", e))?;
    let report = aggregate(&results).map_err(|e| CommandError::data("evaluate", e))?;

    let run_id = RunStore::new_run_id();
    let dir = store.create_run_dir(&run_id)?;
    let copy = dir.join("predictions.jsonl");
    std::fs::copy(predictions, &copy).map_err(|e| CommandError::data("save", e))?;
    let folds = dir.join("folds.jsonl");
    write_json_lines(&folds, &results).map_err(|e| CommandError::data("save", e))?;
    let record = RunRecord {
        run_id,
        command: CommandKind::Evaluate,
        status: RunStatus::Completed,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        started,
        ended: Utc::now(),
        model_id: model_id.to_string(),
        dataset_id: Some(dataset_id.to_string()),
        artifacts: vec![store.relative(&copy), store.relative(&folds)],
        metrics: RunMetrics::Eval { report },
        warnings: Vec::new(),
        failure: None,
    };
    store.append(&record)?;
    Ok(record)
}

/// Appends precomputed reports, one evaluate record each. The config hash
/// of such a record is the SHA-256 of the report JSON.
pub fn import_reports(
    store: &RunStore,
    reports: &[EvalReport],
) -> Result<Vec<RunRecord>, CommandError> {
    let now = Utc::now();
    let mut out = Vec::with_capacity(reports.len());
    for report in reports {
        let json = serde_json::to_string(report).expect("report serializes");
        let record = RunRecord {
            run_id: RunStore::new_run_id(),
            command: CommandKind::Evaluate,
            status: RunStatus::Completed,
            config_hash: hex::encode(Sha256::digest(json.as_bytes())),
            seed: 0,
            started: now,
            ended: now,
            model_id: report.model_id.clone(),
            dataset_id: Some(report.dataset_id.clone()),
            artifacts: Vec::new(),
            metrics: RunMetrics::Eval {
                report: report.clone(),
            },
            warnings: Vec::new(),
            failure: None,
        };
        store.append(&record)?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub baseline: String,
    pub pins: Vec<String>,
    pub model_order: Option<Vec<String>>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            baseline: "BERT".into(),
            pins: Vec::new(),
            model_order: None,
        }
    }
}

/// Comparison table over the latest report per (dataset, model).
///
/// Rows follow `registry` order; datasets it does not know are appended
/// under the other-health family with a warning.
pub fn cmd_report(
    store: &RunStore,
    registry: Option<&Registry>,
    options: &ReportOptions,
) -> Result<ComparisonTable, CommandError> {
    let reports = store.latest_reports(&options.pins)?;
    if reports.is_empty() {
        return Err(CommandError::data(
            "report",
            "the run store has no evaluation reports",
        ));
    }
    let mut layout = registry
        .map(TableLayout::from_registry)
        .unwrap_or(TableLayout {
            datasets: Vec::new(),
            model_order: None,
        });
    let mut warnings = Vec::new();
    for r in &reports {
        if !layout.datasets.iter().any(|(d, _)| d == &r.dataset_id) {
            warnings.push(format!(
                "dataset `{}` is not in the registry; listed under other health",
                r.dataset_id
            ));
            layout
                .datasets
                .push((r.dataset_id.clone(), TaskFamily::OtherHealth));
        }
    }
    layout.model_order = options.model_order.clone();
    let mut table = build_comparison_table(&reports, &options.baseline, &layout)
        .map_err(|e| CommandError::data("report", e))?;
    warnings.append(&mut table.warnings);
    table.warnings = warnings;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryCheck {
    pub rows: usize,
    pub sources: usize,
    pub families: usize,
    pub problems: Vec<String>,
}

impl RegistryCheck {
    pub fn summary(&self) -> String {
        format!(
            "{} rows, {} datasets, {} task families, {} problems",
            self.rows,
            self.sources,
            self.families,
            self.problems.len()
        )
    }
}

/// Checks a registry: against the bundled dataset statistics when
/// `against_table` is set, and for data files on disk when `check_files` is.
pub fn registry_validate(
    registry: &Registry,
    against_table: bool,
    check_files: bool,
) -> RegistryCheck {
    let mut problems = if against_table {
        registry.stats_discrepancies()
    } else {
        Vec::new()
    };
    if check_files {
        for d in registry.iter() {
            for p in std::iter::once(&d.data_path).chain(d.test_path.iter()) {
                if !p.exists() {
                    problems.push(format!("`{}`: missing data file {}", d.id, p.display()));
                }
            }
        }
    }
    RegistryCheck {
        rows: registry.len(),
        sources: registry.distinct_sources(),
        families: registry.families().len(),
        problems,
    }
}

fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

pub fn registry_listing(registry: &Registry, csv_out: bool) -> String {
    let header = [
        "id", "family", "platform", "unit", "samples", "classes", "split",
    ];
    let rows: Vec<[String; 7]> = registry
        .iter()
        .map(|d| {
            [
                d.id.clone(),
                d.task_family.title().to_string(),
                tag(&d.platform),
                tag(&d.unit),
                d.num_samples.to_string(),
                d.num_classes.to_string(),
                tag(&d.split_strategy),
            ]
        })
        .collect();
    if csv_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in &rows {
            w.write_record(r).expect("in-memory write");
        }
        return String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    }
    let mut out = format!(
        "| {} |\n|{}\n",
        header.join(" | "),
        "---|".repeat(header.len())
    );
    for r in &rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}
