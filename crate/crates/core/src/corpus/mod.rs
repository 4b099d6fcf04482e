//! Benchmark dataset registry, ingestion and train/test splits.

mod ingest;
mod registry;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use ingest::{ingest, official_split, Dataset, IngestOptions, SplitSide};
pub use registry::{
    DatasetDescriptor, DescriptorVariant, Registry, SplitStrategy, TaskFamily, Unit,
    BUNDLED_REGISTRY,
};
pub use split::{stratified_holdout, stratified_kfold, Fold, SplitPlan};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: usize,
    /// User identifier for user-level datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
}

impl LabeledExample {
    /// The unit a split keeps together: the group when present, else the example.
    pub fn unit_key(&self) -> &str {
        self.group_key.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("registry row {row} ({id}): {reason}")]
    InvalidDescriptor {
        row: usize,
        id: String,
        reason: String,
    },
    #[error("registry row {row}: duplicate dataset id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("cannot parse registry: {0}")]
    RegistryFormat(String),
    #[error("dataset `{0}` not found in registry")]
    NotFound(String),
    #[error("{path}:{line}: unknown label `{label}` (expected one of {expected:?})")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
        expected: Vec<String>,
    },
    #[error("{path}:{line}: {reason}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("dataset `{dataset}`: expected {expected} samples, found {found} (delta {delta:+})")]
    CountMismatch {
        dataset: String,
        expected: usize,
        found: usize,
        delta: i64,
    },
    #[error("dataset `{dataset}`: example `{id}` appears in both train and test")]
    SplitOverlap { dataset: String, id: String },
    #[error("dataset `{dataset}`: duplicate example id `{id}`")]
    DuplicateExample { dataset: String, id: String },
    #[error("dataset `{dataset}` uses split strategy {actual:?}, expected {expected:?}")]
    WrongStrategy {
        dataset: String,
        expected: SplitStrategy,
        actual: SplitStrategy,
    },
    #[error("dataset `{dataset}`: example `{id}` has no train/test designation")]
    MissingSplit { dataset: String, id: String },
    #[error("infeasible stratification: class {class} has {units} units but k = {k}")]
    InfeasibleStratification {
        class: usize,
        units: usize,
        k: usize,
    },
    #[error("group `{group}` mixes labels {first} and {second}")]
    MixedGroupLabels {
        group: String,
        first: usize,
        second: usize,
    },
    #[error("k must be at least 2 (got {0})")]
    InvalidK(usize),
    #[error("invalid holdout fraction {0}")]
    InvalidFraction(f64),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
