use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::registry::{DatasetDescriptor, SplitStrategy, Unit};
use super::split::{Fold, SplitPlan};
use super::{CorpusError, LabeledExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Turn a sample-count mismatch against the descriptor into an error.
    pub strict_counts: bool,
}

#[derive(Debug, Deserialize)]
struct DataRecord {
    id: String,
    text: String,
    label: serde_json::Value,
    #[serde(default)]
    group_key: Option<String>,
    #[serde(default)]
    split: Option<SplitSide>,
}

/// An ingested dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dataset_id: String,
    pub examples: Vec<LabeledExample>,
    /// Train/test designation per example id, when the files carry one.
    pub membership: BTreeMap<String, SplitSide>,
    /// `examples.len() - descriptor.num_samples`.
    pub count_delta: i64,
}

impl Dataset {
    /// The single-fold plan mirroring the designated train/test membership.
    pub fn official_plan(&self) -> Result<SplitPlan, CorpusError> {
        let mut train = BTreeSet::new();
        let mut test = BTreeSet::new();
        for ex in &self.examples {
            match self.membership.get(&ex.id) {
                Some(SplitSide::Train) => train.insert(ex.id.clone()),
                Some(SplitSide::Test) => test.insert(ex.id.clone()),
                None => {
                    return Err(CorpusError::MissingSplit {
                        dataset: self.dataset_id.clone(),
                        id: ex.id.clone(),
                    })
                }
            };
        }
        Ok(SplitPlan {
            dataset_id: self.dataset_id.clone(),
            seed: 0,
            folds: vec![Fold {
                train_ids: train,
                test_ids: test,
            }],
        })
    }
}

struct Row {
    id: String,
    text: String,
    label: usize,
    group_key: Option<String>,
    split: Option<SplitSide>,
}

fn read_rows(
    path: &Path,
    descriptor: &DatasetDescriptor,
    forced: Option<SplitSide>,
) -> Result<Vec<Row>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| CorpusError::BadRecord {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let rec: DataRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label_text = match &rec.label {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(bad(format!(
                    "label must be a string or number, got {other}"
                )))
            }
        };
        let label =
            descriptor
                .label_index(&label_text)
                .ok_or_else(|| CorpusError::UnknownLabel {
                    path: path.to_path_buf(),
                    line: line_no,
                    label: label_text.clone(),
                    expected: descriptor.label_names.clone(),
                })?;
        let user_level = descriptor.unit == Unit::User;
        match (&rec.group_key, user_level) {
            (None, true) => return Err(bad("user-level dataset requires `group_key`".into())),
            (Some(_), false) => {
                return Err(bad(
                    "`group_key` is only valid for user-level datasets".into()
                ))
            }
            _ => {}
        }
        let split = match (forced, rec.split) {
            (Some(f), Some(s)) if f != s => {
                return Err(bad(format!(
                    "record says split {s:?} but file is the {f:?} file"
                )))
            }
            (Some(f), _) => Some(f),
            (None, s) => s,
        };
        rows.push(Row {
            id: rec.id,
            text: rec.text,
            label,
            group_key: rec.group_key,
            split,
        });
    }
    Ok(rows)
}

/// Reads a dataset's data file(s) into labeled examples.
///
/// User-level datasets produce one example per user, whose text is the
/// user's posts joined by single spaces in file order.
pub fn ingest(
    descriptor: &DatasetDescriptor,
    options: IngestOptions,
) -> Result<Dataset, CorpusError> {
    let mut rows = match &descriptor.test_path {
        Some(test_path) => {
            let mut rows = read_rows(&descriptor.data_path, descriptor, Some(SplitSide::Train))?;
            rows.extend(read_rows(test_path, descriptor, Some(SplitSide::Test))?);
            rows
        }
        None => read_rows(&descriptor.data_path, descriptor, None)?,
    };

    let dataset = descriptor.id.clone();
    let mut membership = BTreeMap::new();
    let examples = if descriptor.unit == Unit::User {
        let mut order: Vec<String> = Vec::new();
        let mut users: HashMap<String, (Vec<String>, usize, Option<SplitSide>)> = HashMap::new();
        let mut seen_posts = BTreeSet::new();
        for row in rows.drain(..) {
            if !seen_posts.insert(row.id.clone()) {
                return Err(CorpusError::DuplicateExample {
                    dataset,
                    id: row.id,
                });
            }
            let user = row.group_key.expect("checked in read_rows");
            let entry = users.entry(user.clone()).or_insert_with(|| {
                order.push(user.clone());
                (Vec::new(), row.label, row.split)
            });
            if entry.1 != row.label {
                return Err(CorpusError::MixedGroupLabels {
                    group: user,
                    first: entry.1,
                    second: row.label,
                });
            }
            if entry.2 != row.split {
                return Err(CorpusError::SplitOverlap { dataset, id: user });
            }
            entry.0.push(row.text);
        }
        order
            .into_iter()
            .map(|user| {
                let (texts, label, split) = users.remove(&user).expect("user recorded");
                if let Some(s) = split {
                    membership.insert(user.clone(), s);
                }
                LabeledExample {
                    id: user.clone(),
                    text: texts.join(" "),
                    label,
                    group_key: Some(user),
                }
            })
            .collect::<Vec<_>>()
    } else {
        let mut out = Vec::with_capacity(rows.len());
        let mut sides: HashMap<String, Option<SplitSide>> = HashMap::new();
        for row in rows {
            if let Some(prev) = sides.get(&row.id) {
                if *prev != row.split && prev.is_some() && row.split.is_some() {
                    return Err(CorpusError::SplitOverlap {
                        dataset,
                        id: row.id,
                    });
                }
                return Err(CorpusError::DuplicateExample {
                    dataset,
                    id: row.id,
                });
            }
            sides.insert(row.id.clone(), row.split);
            if let Some(s) = row.split {
                membership.insert(row.id.clone(), s);
            }
            out.push(LabeledExample {
                id: row.id,
                text: row.text,
                label: row.label,
                group_key: None,
            });
        }
        out
    };

    let count_delta = examples.len() as i64 - descriptor.num_samples as i64;
    if count_delta != 0 {
        if options.strict_counts {
            return Err(CorpusError::CountMismatch {
                dataset: descriptor.id.clone(),
                expected: descriptor.num_samples,
                found: examples.len(),
                delta: count_delta,
            });
        }
        log::warn!(
            "dataset `{}`: expected {} samples, found {} (delta {:+})",
            descriptor.id,
            descriptor.num_samples,
            examples.len(),
            count_delta
        );
    }
    Ok(Dataset {
        dataset_id: descriptor.id.clone(),
        examples,
        membership,
        count_delta,
    })
}

/// Ingests an official-split dataset and returns its single-fold plan.
pub fn official_split(
    descriptor: &DatasetDescriptor,
    options: IngestOptions,
) -> Result<SplitPlan, CorpusError> {
    if descriptor.split_strategy != SplitStrategy::Official {
        return Err(CorpusError::WrongStrategy {
            dataset: descriptor.id.clone(),
            expected: SplitStrategy::Official,
            actual: descriptor.split_strategy,
        });
    }
    ingest(descriptor, options)?.official_plan()
}

#[cfg(test)]
mod tests {
    use std::io::Write;
    use std::path::PathBuf;

    use super::*;
    use crate::corpus::registry::TaskFamily;
    use crate::normalizer::Platform;

    fn descriptor(dir: &Path, unit: Unit, labels: &[&str], n: usize) -> DatasetDescriptor {
        DatasetDescriptor {
            id: "toy".into(),
            task_family: TaskFamily::Stress,
            platform: Platform::Twitter,
            unit,
            num_samples: n,
            num_classes: labels.len(),
            split_strategy: SplitStrategy::Official,
            label_names: labels.iter().map(|s| s.to_string()).collect(),
            data_path: dir.join("data.jsonl"),
            source: None,
            test_path: None,
            variants: vec![],
        }
    }

    fn write(path: &PathBuf, lines: &[&str]) {
        let mut f = File::create(path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
    }

    #[test]
    fn labels_follow_label_names_order() {
        let dir = tempfile::tempdir().unwrap();
        let d = descriptor(dir.path(), Unit::Post, &["pos", "neg"], 3);
        write(
            &d.data_path,
            &[
                r#"{"id":"a","text":"x","label":"pos"}"#,
                r#"{"id":"b","text":"y","label":"neg"}"#,
                r#"{"id":"c","text":"z","label":"pos"}"#,
            ],
        );
        let ds = ingest(&d, IngestOptions::default()).unwrap();
        let labels: Vec<_> = ds.examples.iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![0, 1, 0]);
        assert_eq!(ds.count_delta, 0);
    }

    #[test]
    fn user_posts_are_joined() {
        let dir = tempfile::tempdir().unwrap();
        let d = descriptor(dir.path(), Unit::User, &["0", "1"], 1);
        write(
            &d.data_path,
            &[
                r#"{"id":"p1","text":"first","label":1,"group_key":"u1"}"#,
                r#"{"id":"p2","text":"second","label":1,"group_key":"u1"}"#,
                r#"{"id":"p3","text":"third","label":1,"group_key":"u1"}"#,
            ],
        );
        let ds = ingest(&d, IngestOptions::default()).unwrap();
        assert_eq!(ds.examples.len(), 1);
        let ex = &ds.examples[0];
        assert_eq!(ex.group_key.as_deref(), Some("u1"));
        assert_eq!(ex.text, "first second third");
        assert_eq!(ex.label, 1);
    }

    #[test]
    fn unknown_label_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let d = descriptor(dir.path(), Unit::Post, &["pos", "neg"], 2);
        write(
            &d.data_path,
            &[
                r#"{"id":"a","text":"x","label":"pos"}"#,
                r#"{"id":"b","text":"y","label":"maybe"}"#,
            ],
        );
        let err = ingest(&d, IngestOptions::default()).unwrap_err();
        match err {
            CorpusError::UnknownLabel { line, label, .. } => {
                assert_eq!(line, 2);
                assert_eq!(label, "maybe");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn strict_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let d = descriptor(dir.path(), Unit::Post, &["a", "b"], 5);
        write(&d.data_path, &[r#"{"id":"a","text":"x","label":"a"}"#]);
        let lenient = ingest(&d, IngestOptions::default()).unwrap();
        assert_eq!(lenient.count_delta, -4);
        let err = ingest(
            &d,
            IngestOptions {
                strict_counts: true,
            },
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::CountMismatch { delta: -4, .. }));
    }

    #[test]
    fn official_two_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = descriptor(dir.path(), Unit::Post, &["a", "b"], 10);
        d.test_path = Some(dir.path().join("test.jsonl"));
        let train: Vec<String> = (0..8)
            .map(|i| format!(r#"{{"id":"tr{i}","text":"t","label":"a"}}"#))
            .collect();
        let test: Vec<String> = (0..2)
            .map(|i| format!(r#"{{"id":"te{i}","text":"t","label":"b"}}"#))
            .collect();
        write(
            &d.data_path,
            &train.iter().map(String::as_str).collect::<Vec<_>>(),
        );
        write(
            d.test_path.as_ref().unwrap(),
            &test.iter().map(String::as_str).collect::<Vec<_>>(),
        );
        let plan = official_split(&d, IngestOptions::default()).unwrap();
        assert_eq!(plan.folds.len(), 1);
        assert_eq!(
            (plan.folds[0].train_ids.len(), plan.folds[0].test_ids.len()),
            (8, 2)
        );
    }

    #[test]
    fn official_overlap_names_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = descriptor(dir.path(), Unit::Post, &["a", "b"], 2);
        d.test_path = Some(dir.path().join("test.jsonl"));
        write(&d.data_path, &[r#"{"id":"dup","text":"t","label":"a"}"#]);
        write(
            d.test_path.as_ref().unwrap(),
            &[r#"{"id":"dup","text":"t","label":"a"}"#],
        );
        let err = official_split(&d, IngestOptions::default()).unwrap_err();
        match err {
            CorpusError::SplitOverlap { id, .. } => assert_eq!(id, "dup"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn official_split_field() {
        let dir = tempfile::tempdir().unwrap();
        let d = descriptor(dir.path(), Unit::Post, &["a", "b"], 3);
        write(
            &d.data_path,
            &[
                r#"{"id":"1","text":"t","label":"a","split":"train"}"#,
                r#"{"id":"2","text":"t","label":"b","split":"train"}"#,
                r#"{"id":"3","text":"t","label":"b","split":"test"}"#,
            ],
        );
        let plan = official_split(&d, IngestOptions::default()).unwrap();
        assert_eq!(plan.folds[0].test_ids.iter().collect::<Vec<_>>(), vec!["3"]);
    }

    #[test]
    fn stratified_descriptor_rejected_by_official_split() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = descriptor(dir.path(), Unit::Post, &["a", "b"], 3);
        d.split_strategy = SplitStrategy::Stratified5Fold;
        assert!(matches!(
            official_split(&d, IngestOptions::default()),
            Err(CorpusError::WrongStrategy { .. })
        ));
    }
}
