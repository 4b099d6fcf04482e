use std::collections::HashMap;
use std::path::{Path, PathBuf};

use phsbench::experiment::cli::run;
use phsbench::experiment::{RunRecord, RunStatus, RunStore, INCOMPLETE_MARKER};
use phsbench::synth::{separable_dataset, synthetic_posts, write_labeled_jsonl, write_posts_jsonl};

struct Sandbox {
    dir: tempfile::TempDir,
    env: HashMap<String, String>,
}

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

const REGISTRY: &str = r#"
[[dataset]]
id = "toy"
task_family = "covid"
platform = "twitter"
unit = "post"
num_samples = 60
num_classes = 3
split_strategy = "stratified_5fold"
label_names = ["0", "1", "2"]
data_path = "toy.jsonl"

[[dataset]]
id = "broken"
task_family = "covid"
platform = "twitter"
unit = "post"
num_samples = 10
num_classes = 2
split_strategy = "stratified_5fold"
label_names = ["0", "1"]
data_path = "broken.jsonl"
"#;

const CONFIG: &str = r#"
model_id = "toy-bert"
seed = 3
dataset_ids = ["toy"]
registry_path = "registry.toml"

[pretrain]
corpus_path = "posts.jsonl"
steps = 6
vocab_size = 200
learning_rate = 1e-3
allow_random_init = true
max_seq_len = 24
batch_size = 4
encoder = { hidden = 16, layers = 1, max_positions = 32 }

[finetune]
allow_random_init = true
epochs = 2
batch_size = 8
max_seq_len = 12
encoder = { hidden = 16, layers = 1, max_positions = 32 }
"#;

impl Sandbox {
    fn new() -> Sandbox {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        write_posts_jsonl(&synthetic_posts(80, 1), &p.join("posts.jsonl")).unwrap();
        write_labeled_jsonl(&separable_dataset(60, 3, 2), &p.join("toy.jsonl")).unwrap();
        std::fs::write(p.join("broken.jsonl"), "{not json\n").unwrap();
        std::fs::write(p.join("registry.toml"), REGISTRY).unwrap();
        std::fs::write(p.join("exp.toml"), CONFIG).unwrap();
        let mut env = HashMap::new();
        env.insert(
            "PHSBENCH_HOME".to_string(),
            p.join("home").display().to_string(),
        );
        Sandbox { dir, env }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, text: &str) -> String {
        std::fs::write(self.path(name), text).unwrap();
        self.path(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Outcome {
        let env = |k: &str| self.env.get(k).cloned();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("phsbench").chain(args.iter().copied());
        let code = run(argv, &env, &mut out, &mut err);
        Outcome {
            code,
            stdout: String::from_utf8(out).unwrap(),
            stderr: String::from_utf8(err).unwrap(),
        }
    }

    fn store(&self) -> RunStore {
        RunStore::open(self.path("home")).unwrap()
    }

    fn records(&self) -> Vec<RunRecord> {
        self.store().records().unwrap()
    }
}

fn cfg(s: &Sandbox) -> String {
    s.path("exp.toml").display().to_string()
}

#[test]
fn usage_errors_exit_1() {
    let s = Sandbox::new();
    assert_eq!(s.run(&[]).code, 1);
    assert_eq!(s.run(&["frobnicate"]).code, 1);
    assert_eq!(s.run(&["pretrain"]).code, 1, "pretrain needs --config");
    assert_eq!(s.run(&["--jobs", "0", "report"]).code, 1);
    assert_eq!(s.run(&["report", "--format", "xml"]).code, 1);
    assert_eq!(s.run(&["evaluate"]).code, 1, "evaluate needs a source");
    let bad = s.config("bad.toml", &format!("{CONFIG}\nsurprise = 1\n"));
    assert_eq!(s.run(&["--config", &bad, "pretrain"]).code, 1);
    let help = s.run(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("finetune"));
}

#[test]
fn registry_commands() {
    let s = Sandbox::new();
    let out = s.run(&["registry", "validate"]);
    assert_eq!(out.code, 0, "{}", out.stdout);
    assert!(out
        .stdout
        .contains("OK: 26 rows, 25 datasets, 7 task families, 0 problems"));
    let list = s.run(&["registry", "list", "--format", "csv"]);
    assert_eq!(list.code, 0);
    assert_eq!(list.stdout.lines().count(), 27);

    let custom = s.run(&["--config", &cfg(&s), "registry", "list"]);
    assert_eq!(custom.code, 0);
    assert!(custom.stdout.contains("broken"));
}

#[test]
fn empty_store_report_is_a_data_error() {
    let s = Sandbox::new();
    let out = s.run(&["report"]);
    assert_eq!(out.code, 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn published_grid_round_trip() {
    let s = Sandbox::new();
    assert_eq!(s.run(&["evaluate", "--published"]).code, 0);
    let md = s.run(&["report"]);
    assert_eq!(md.code, 0, "{}", md.stderr);
    assert!(md.stdout.contains("| Suicide Ideation | R-SSD |"));
    assert!(md.stdout.contains("**30.28**"));
    assert!(md.stdout.contains("<u>26.96</u>"));
    let csv = s.run(&["report", "--format", "csv", "--baseline", "BioBERT"]);
    assert_eq!(csv.code, 0);
    let header = csv.stdout.lines().next().unwrap();
    assert!(
        header.starts_with("family,dataset,kind,BioBERT,"),
        "{header}"
    );
    assert!(header.ends_with("delta_mp_BioBERT,delta_mp_sb"), "{header}");
    let out = s.path("table.md");
    let written = s.run(&["report", "--output", out.to_str().unwrap()]);
    assert_eq!(written.code, 0);
    assert_eq!(std::fs::read_to_string(out).unwrap(), md.stdout);
}

#[test]
fn pretrain_records_are_reproducible() {
    let s = Sandbox::new();
    let first = s.run(&["--config", &cfg(&s), "pretrain"]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    let second = s.run(&["--config", &cfg(&s), "pretrain"]);
    assert_eq!(second.code, 0);
    let reseeded = s.run(&["--config", &cfg(&s), "--seed", "4", "pretrain"]);
    assert_eq!(reseeded.code, 0);

    let recs = s.records();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0].config_hash, recs[1].config_hash);
    assert_ne!(recs[0].run_id, recs[1].run_id);
    assert_ne!(recs[0].config_hash, recs[2].config_hash);
    assert_eq!(recs[2].seed, 4);
    for a in &recs[0].artifacts {
        assert!(s.path("home").join(a).is_file(), "{}", a.display());
    }
    // Same seed, same trajectory.
    let traj = |r: &RunRecord| {
        let p = r
            .artifacts
            .iter()
            .find(|a| a.ends_with("trajectory.csv"))
            .unwrap();
        std::fs::read_to_string(s.path("home").join(p)).unwrap()
    };
    assert_eq!(traj(&recs[0]), traj(&recs[1]));
}

#[test]
fn missing_corpus_fails_without_a_record() {
    let s = Sandbox::new();
    let text = CONFIG.replace("posts.jsonl", "nowhere.jsonl");
    let c = s.config("missing.toml", &text);
    let out = s.run(&["--config", &c, "pretrain"]);
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert!(s.records().is_empty());
}

#[test]
fn unknown_dataset_is_a_data_error() {
    let s = Sandbox::new();
    let c = s.config("unknown.toml", &CONFIG.replace(r#"["toy"]"#, r#"["nope"]"#));
    assert_eq!(s.run(&["--config", &c, "finetune"]).code, 2);
}

#[test]
fn failing_dataset_is_isolated() {
    let s = Sandbox::new();
    let c = s.config(
        "both.toml",
        &CONFIG.replace(r#"["toy"]"#, r#"["toy", "broken"]"#),
    );
    let out = s.run(&["--config", &c, "--jobs", "2", "finetune"]);
    assert_eq!(out.code, 2, "{}\n{}", out.stdout, out.stderr);
    assert!(out.stdout.contains("toy: macro-F1"));
    assert!(out.stderr.contains("broken: failed"));

    let recs = s.records();
    assert_eq!(recs.len(), 2);
    let ok = recs
        .iter()
        .find(|r| r.dataset_id.as_deref() == Some("toy"))
        .unwrap();
    let bad = recs
        .iter()
        .find(|r| r.dataset_id.as_deref() == Some("broken"))
        .unwrap();
    assert_eq!(ok.status, RunStatus::Completed);
    assert_eq!(ok.report().unwrap().fold_count, 5);
    assert_eq!(bad.status, RunStatus::Failed);
    let marker = s
        .path("home")
        .join("runs")
        .join(&bad.run_id)
        .join(INCOMPLETE_MARKER);
    assert!(marker.is_file());

    // One model in the store: the table renders without ΔMP columns.
    let rep = s.run(&["--config", &c, "report"]);
    assert_eq!(rep.code, 0, "{}", rep.stderr);
    assert!(rep.stdout.contains("toy-bert"));
    assert!(!rep.stdout.contains("ΔMP"));
}

#[test]
fn evaluate_predictions_file() {
    let s = Sandbox::new();
    let examples = separable_dataset(60, 3, 2);
    let preds: String = examples
        .iter()
        .map(|e| format!("{{\"id\":\"{}\",\"prediction\":\"{}\"}}\n", e.id, e.label))
        .collect();
    std::fs::write(s.path("preds.jsonl"), &preds).unwrap();
    let p = s.path("preds.jsonl");
    let out = s.run(&[
        "--config",
        &cfg(&s),
        "evaluate",
        "--predictions",
        p.to_str().unwrap(),
        "--dataset",
        "toy",
        "--model",
        "oracle",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("toy / oracle: macro-F1 100.00"));

    std::fs::write(
        s.path("dup.jsonl"),
        format!("{preds}{}", preds.lines().next().unwrap()),
    )
    .unwrap();
    let d = s.path("dup.jsonl");
    let dup = s.run(&[
        "--config",
        &cfg(&s),
        "evaluate",
        "--predictions",
        d.to_str().unwrap(),
        "--dataset",
        "toy",
    ]);
    assert_eq!(dup.code, 2);
    assert_eq!(s.records().len(), 1);

    let no_dataset = s.run(&[
        "--config",
        &cfg(&s),
        "evaluate",
        "--predictions",
        p.to_str().unwrap(),
    ]);
    assert_eq!(no_dataset.code, 1);
}

#[test]
fn store_is_append_only() {
    let s = Sandbox::new();
    assert_eq!(s.run(&["evaluate", "--published"]).code, 0);
    let before = std::fs::read_to_string(s.store().log_path()).unwrap();
    assert_eq!(s.run(&["--config", &cfg(&s), "pretrain"]).code, 0);
    let after = std::fs::read_to_string(s.store().log_path()).unwrap();
    assert!(after.starts_with(&before));
    assert_eq!(after.lines().count(), before.lines().count() + 1);
    assert!(Path::new(&s.path("home").join("runs")).is_dir());
}
