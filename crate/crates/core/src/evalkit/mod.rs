//! Metrics, fold aggregation, ΔMP and model comparison tables.

mod metrics;
pub mod published;
mod report;
mod table;

pub use metrics::{confusion, f1_scores, ConfusionMatrix, F1Scores};
pub use report::{
    aggregate, delta_mp, delta_mp_exact, read_reports, write_reports, EvalReport, FoldResult,
};
pub use table::{
    build_comparison_table, ComparisonTable, OutputFormat, RowKind, TableLayout, TableRow,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold has {gold} labels but pred has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {label} at index {index} is outside 0..{num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no folds to aggregate")]
    NoFolds,
    #[error("folds mix {expected} with {found}")]
    MixedFolds { expected: String, found: String },
    #[error("reference score {0} is not positive")]
    NonPositiveReference(f64),
    #[error("no report for baseline `{baseline}` on dataset `{dataset}`")]
    MissingBaseline { baseline: String, dataset: String },
    #[error("no reports to compare")]
    NoReports,
    #[error("two reports for model `{model}` on dataset `{dataset}`")]
    DuplicateReport { dataset: String, model: String },
    #[error("dataset `{0}` is not in the table layout")]
    UnknownDataset(String),
    #[error("bad report record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}
