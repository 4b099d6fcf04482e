//! Whole workflow on synthetic data: pretrain a toy encoder, fine-tune it
//! under stratified 5-fold on a registered dataset, score a majority-class
//! baseline, and render the comparison table.
//!
//! Run with `cargo run --release --example end_to_end`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use phsbench::evalkit::OutputFormat;
use phsbench::experiment::{
    cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_report, write_json_lines, ExperimentConfig,
    FoldLog, ReportOptions, RunMetrics, RunStore,
};
use phsbench::pretrain::LossRecord;
use phsbench::synth::{separable_dataset, synthetic_posts, write_labeled_jsonl, write_posts_jsonl};

pub struct Scale {
    pub posts: usize,
    pub pretrain_steps: usize,
    pub examples: usize,
    pub epochs: usize,
}

impl Scale {
    pub fn full() -> Scale {
        Scale {
            posts: 2000,
            pretrain_steps: 200,
            examples: 300,
            epochs: 6,
        }
    }
}

pub struct Outcome {
    pub trajectory: Vec<LossRecord>,
    pub fold_macro_f1: Vec<f64>,
    pub majority_fold_macro_f1: Vec<f64>,
    pub markdown: String,
}

const DATASET: &str = "synthetic-3class";

const REGISTRY: &str = r#"
[[dataset]]
id = "synthetic-3class"
task_family = "other_health"
platform = "twitter"
unit = "post"
num_samples = 300
num_classes = 3
split_strategy = "stratified_5fold"
label_names = ["0", "1", "2"]
data_path = "synthetic.jsonl"
"#;

pub fn run_pipeline(dir: &Path, scale: &Scale) -> Result<Outcome> {
    let posts = synthetic_posts(scale.posts, 11);
    write_posts_jsonl(&posts, &dir.join("posts.jsonl"))?;
    let examples = separable_dataset(scale.examples, 3, 12);
    write_labeled_jsonl(&examples, &dir.join("synthetic.jsonl"))?;
    let registry = REGISTRY.replace(
        "num_samples = 300",
        &format!("num_samples = {}", scale.examples),
    );
    std::fs::write(dir.join("registry.toml"), registry)?;

    let mut cfg = ExperimentConfig::new("toy-phs");
    cfg.seed = 5;
    cfg.dataset_ids = vec![DATASET.into()];
    cfg.registry_path = Some(dir.join("registry.toml"));
    cfg.pretrain.corpus_path = Some(dir.join("posts.jsonl"));
    cfg.pretrain.steps = scale.pretrain_steps;
    cfg.pretrain.vocab_size = 600;
    cfg.pretrain.objective.allow_random_init = true;
    cfg.pretrain.objective.learning_rate = 1e-3;
    cfg.pretrain.objective.max_seq_len = 48;
    cfg.pretrain.objective.batch_size = 16;
    cfg.finetune.training.epochs = scale.epochs;
    cfg.finetune.training.batch_size = 16;
    cfg.finetune.training.max_seq_len = 16;
    cfg.schedule.max_lr = 1e-3;

    let store = RunStore::open(dir.join("home"))?;
    let pre = cmd_pretrain(&cfg, &store, 1)?;
    let RunMetrics::Trajectory { path, .. } = &pre.metrics else {
        bail!("pretrain run has no trajectory");
    };
    let mut reader = csv::Reader::from_path(store.root().join(path))?;
    let trajectory: Vec<LossRecord> = reader.deserialize().collect::<Result<_, _>>()?;

    cfg.finetune.pretrain_run = Some(pre.run_id.clone());
    let records = cmd_finetune(&cfg, &store, 1)?;
    let rec = &records[0];
    if let Some(f) = &rec.failure {
        bail!("fine-tuning failed at {}: {}", f.stage, f.message);
    }
    let folds_path = rec
        .artifacts
        .iter()
        .find(|a| a.ends_with("folds.jsonl"))
        .context("no fold log")?;
    let folds: Vec<FoldLog> = std::fs::read_to_string(store.root().join(folds_path))?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let fold_macro_f1 = folds.iter().map(|f| f.result.macro_f1).collect();

    // Majority class of each fold's training part, predicted for its test part.
    let preds_path = rec
        .artifacts
        .iter()
        .find(|a| a.ends_with("predictions.jsonl"))
        .context("no predictions")?;
    let mut test_ids: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for line in std::fs::read_to_string(store.root().join(preds_path))?.lines() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        let fold = v["fold"].as_u64().context("fold")?;
        test_ids
            .entry(fold)
            .or_default()
            .push(v["id"].as_str().context("id")?.to_string());
    }
    let mut majority = Vec::new();
    for (fold, ids) in &test_ids {
        let mut counts = [0usize; 3];
        for e in examples.iter().filter(|e| !ids.contains(&e.id)) {
            counts[e.label] += 1;
        }
        let top = (0..3)
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .unwrap();
        for id in ids {
            majority.push(serde_json::json!({ "id": id, "fold": fold, "prediction": top }));
        }
    }
    let majority_path = dir.join("majority.jsonl");
    write_json_lines(&majority_path, &majority)?;
    let base = cmd_evaluate(&cfg, &store, DATASET, "majority", &majority_path)?;
    let majority_fold_macro_f1 = match &base.metrics {
        RunMetrics::Eval { report } => report.fold_f1.iter().map(|f| f / 100.0).collect(),
        _ => bail!("baseline has no report"),
    };

    let table = cmd_report(
        &store,
        None,
        &ReportOptions {
            baseline: "majority".into(),
            ..Default::default()
        },
    )?;
    Ok(Outcome {
        trajectory,
        fold_macro_f1,
        majority_fold_macro_f1,
        markdown: table.render(OutputFormat::Markdown),
    })
}

pub fn run_example() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let out = run_pipeline(dir.path(), &Scale::full())?;
    let first = &out.trajectory[..20.min(out.trajectory.len())];
    let last = &out.trajectory[out.trajectory.len().saturating_sub(20)..];
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.mlm_loss).sum::<f64>() / r.len() as f64;
    Ok(format!(
        "MLM loss {:.3} -> {:.3}\nfold macro-F1 {:?}\n\n{}",
        mean(first),
        mean(last),
        out.fold_macro_f1,
        out.markdown
    ))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    println!("{}", run_example()?);
    Ok(())
}
