use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::normalizer::Platform;

/// The registry shipped with the crate (TOML).
pub const BUNDLED_REGISTRY: &str = include_str!("../../data/registry.toml");

const STATS_FIXTURE: &str = include_str!("../../data/fixtures/dataset_stats.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Suicide,
    Stress,
    HealthMention,
    VaccineSentiment,
    Covid,
    Depression,
    OtherHealth,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 7] = [
        TaskFamily::Suicide,
        TaskFamily::Stress,
        TaskFamily::HealthMention,
        TaskFamily::VaccineSentiment,
        TaskFamily::Covid,
        TaskFamily::Depression,
        TaskFamily::OtherHealth,
    ];

    pub fn title(self) -> &'static str {
        match self {
            TaskFamily::Suicide => "Suicide Ideation",
            TaskFamily::Stress => "Stress Detection",
            TaskFamily::HealthMention => "Health Mention",
            TaskFamily::VaccineSentiment => "Vaccine Sentiment",
            TaskFamily::Covid => "COVID Related",
            TaskFamily::Depression => "Depression Detection",
            TaskFamily::OtherHealth => "Other Health Related",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Post,
    User,
    Sms,
    Claim,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Official,
    #[serde(rename = "stratified_5fold")]
    Stratified5Fold,
}

impl SplitStrategy {
    pub fn fold_count(self) -> usize {
        match self {
            SplitStrategy::Official => 1,
            SplitStrategy::Stratified5Fold => 5,
        }
    }
}

/// Alternative labeling of the same data (e.g. merged classes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorVariant {
    pub name: String,
    pub num_classes: usize,
    pub label_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub task_family: TaskFamily,
    pub platform: Platform,
    pub unit: Unit,
    pub num_samples: usize,
    pub num_classes: usize,
    pub split_strategy: SplitStrategy,
    pub label_names: Vec<String>,
    pub data_path: PathBuf,
    /// Underlying dataset when several rows relabel the same data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Separate test file for official splits shipped as two files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<DescriptorVariant>,
}

impl DatasetDescriptor {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == label)
    }

    /// The descriptor relabeled according to the named variant.
    pub fn with_variant(&self, name: &str) -> Option<DatasetDescriptor> {
        let variant = self.variants.iter().find(|v| v.name == name)?;
        let mut out = self.clone();
        out.num_classes = variant.num_classes;
        out.label_names = variant.label_names.clone();
        out.variants.clear();
        Some(out)
    }

    fn check(&self, row: usize) -> Result<(), CorpusError> {
        let fail = |reason: String| CorpusError::InvalidDescriptor {
            row,
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(fail("empty id".into()));
        }
        if self.num_samples == 0 {
            return Err(fail("num_samples must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(fail(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        check_labels(&self.label_names, self.num_classes).map_err(fail)?;
        for v in &self.variants {
            if v.num_classes < 2 {
                return Err(fail(format!("variant `{}` needs >= 2 classes", v.name)));
            }
            check_labels(&v.label_names, v.num_classes)
                .map_err(|r| fail(format!("variant `{}`: {r}", v.name)))?;
        }
        Ok(())
    }
}

fn check_labels(labels: &[String], num_classes: usize) -> Result<(), String> {
    if labels.len() != num_classes {
        return Err(format!(
            "label_names has {} entries but num_classes is {}",
            labels.len(),
            num_classes
        ));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(format!("duplicate label name `{l}`"));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawRegistry {
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<u32>,
    #[serde(default)]
    dataset: Vec<RawDescriptor>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDescriptor {
    id: String,
    task_family: String,
    platform: String,
    unit: String,
    num_samples: usize,
    num_classes: usize,
    split_strategy: String,
    label_names: Vec<String>,
    data_path: PathBuf,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    test_path: Option<PathBuf>,
    #[serde(default)]
    variants: Vec<DescriptorVariant>,
}

fn parse_enum<T: DeserializeOwned>(
    value: &str,
    field: &str,
    row: usize,
    id: &str,
) -> Result<T, CorpusError> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|_| {
        CorpusError::InvalidDescriptor {
            row,
            id: id.to_string(),
            reason: format!("unknown {field} `{value}`"),
        }
    })
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    descriptors: Vec<DatasetDescriptor>,
    index: HashMap<String, usize>,
}

impl Registry {
    /// Parses registry TOML, resolving relative data paths against `data_root`.
    pub fn parse(text: &str, data_root: &Path) -> Result<Registry, CorpusError> {
        let raw: RawRegistry =
            toml::from_str(text).map_err(|e| CorpusError::RegistryFormat(e.to_string()))?;
        let mut registry = Registry::default();
        for (i, r) in raw.dataset.into_iter().enumerate() {
            let row = i + 1;
            let resolve = |p: PathBuf| {
                if p.is_absolute() {
                    p
                } else {
                    data_root.join(p)
                }
            };
            let desc = DatasetDescriptor {
                task_family: parse_enum(&r.task_family, "task_family", row, &r.id)?,
                platform: parse_enum(&r.platform, "platform", row, &r.id)?,
                unit: parse_enum(&r.unit, "unit", row, &r.id)?,
                split_strategy: parse_enum(&r.split_strategy, "split_strategy", row, &r.id)?,
                num_samples: r.num_samples,
                num_classes: r.num_classes,
                label_names: r.label_names,
                data_path: resolve(r.data_path),
                source: r.source,
                test_path: r.test_path.map(resolve),
                variants: r.variants,
                id: r.id,
            };
            desc.check(row)?;
            if registry.index.contains_key(&desc.id) {
                return Err(CorpusError::DuplicateId { row, id: desc.id });
            }
            registry
                .index
                .insert(desc.id.clone(), registry.descriptors.len());
            registry.descriptors.push(desc);
        }
        Ok(registry)
    }

    /// Loads a registry file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Registry, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        Registry::parse(&text, root)
    }

    pub fn bundled(data_root: &Path) -> Registry {
        Registry::parse(BUNDLED_REGISTRY, data_root).expect("bundled registry is valid")
    }

    pub fn lookup(&self, id: &str) -> Result<&DatasetDescriptor, CorpusError> {
        self.index
            .get(id)
            .map(|&i| &self.descriptors[i])
            .ok_or_else(|| CorpusError::NotFound(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatasetDescriptor> {
        self.descriptors.iter()
    }

    /// Number of distinct underlying datasets (rows sharing a `source` count once).
    pub fn distinct_sources(&self) -> usize {
        self.descriptors
            .iter()
            .map(|d| d.source.as_deref().unwrap_or(&d.id))
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn families(&self) -> BTreeMap<TaskFamily, usize> {
        let mut out = BTreeMap::new();
        for d in &self.descriptors {
            *out.entry(d.task_family).or_insert(0) += 1;
        }
        out
    }

    /// Compares the registry row-for-row with the dataset statistics table
    /// fixture. Returns one message per discrepancy; empty means identical.
    pub fn stats_discrepancies(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut reader = csv::Reader::from_reader(STATS_FIXTURE.as_bytes());
        let mut expected_ids = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.expect("table fixture is valid CSV");
            let (task, id, platform, samples, unit, classes, strategy) = (
                &rec[0], &rec[1], &rec[2], &rec[3], &rec[4], &rec[5], &rec[6],
            );
            expected_ids.push(id.to_string());
            let Some(&pos) = self.index.get(id) else {
                problems.push(format!("missing dataset `{id}`"));
                continue;
            };
            let d = &self.descriptors[pos];
            if pos != i {
                problems.push(format!(
                    "`{id}` is at row {} instead of row {}",
                    pos + 1,
                    i + 1
                ));
            }
            let family = match task {
                "Suicide" => TaskFamily::Suicide,
                "Stress" => TaskFamily::Stress,
                "Health Mention" => TaskFamily::HealthMention,
                "Vaccine Sentiment" => TaskFamily::VaccineSentiment,
                "COVID Related" => TaskFamily::Covid,
                "Depression" => TaskFamily::Depression,
                _ => TaskFamily::OtherHealth,
            };
            if d.task_family != family {
                problems.push(format!(
                    "`{id}`: task family {:?}, table says {task}",
                    d.task_family
                ));
            }
            let plat = match platform {
                "Reddit" => Platform::Reddit,
                "Twitter" => Platform::Twitter,
                "SMS-like" => Platform::Sms,
                "News Websites" => Platform::News,
                "Amazon" => Platform::Amazon,
                _ => Platform::Other,
            };
            if d.platform != plat {
                problems.push(format!(
                    "`{id}`: platform {:?}, table says {platform}",
                    d.platform
                ));
            }
            if d.num_samples.to_string() != samples {
                problems.push(format!(
                    "`{id}`: {} samples, table says {samples}",
                    d.num_samples
                ));
            }
            let unit_ok = match unit {
                "Users" => d.unit == Unit::User,
                "SMS" => d.unit == Unit::Sms,
                _ => matches!(d.unit, Unit::Post | Unit::Claim | Unit::Review),
            };
            if !unit_ok {
                problems.push(format!("`{id}`: unit {:?}, table says {unit}", d.unit));
            }
            if d.num_classes.to_string() != classes {
                problems.push(format!(
                    "`{id}`: {} classes, table says {classes}",
                    d.num_classes
                ));
            }
            let strat = if strategy == "Official Split" {
                SplitStrategy::Official
            } else {
                SplitStrategy::Stratified5Fold
            };
            if d.split_strategy != strat {
                problems.push(format!(
                    "`{id}`: strategy {:?}, table says {strategy}",
                    d.split_strategy
                ));
            }
        }
        for d in &self.descriptors {
            if !expected_ids.contains(&d.id) {
                problems.push(format!("extra dataset `{}` not in the table", d.id));
            }
        }
        problems
    }
}
