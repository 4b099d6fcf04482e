//! CLS-feature classifiers and one-cycle fine-tuning.

mod classifier;
mod schedule;
mod train;

pub use classifier::{build_classifier, ClassifierHeadSpec, SequenceClassifier, HEAD_GROUP};
pub use schedule::OneCycleSchedule;
pub use train::{
    finetune, plan_training, EpochMetrics, FineTuneConfig, FineTuneOutcome, TrainingPlan,
};

use crate::evalkit::EvalError;

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("invalid fine-tuning config: {0}")]
    InvalidConfig(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {step} is outside the schedule's 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("schedule covers {schedule} steps but training takes {expected}")]
    ScheduleMismatch { schedule: usize, expected: usize },
    #[error("a classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("tokenizer has no CLS position convention")]
    NoClsPosition,
    #[error("incompatible model: {0}")]
    IncompatibleModel(String),
    #[error("training split is empty")]
    EmptyTrain,
    #[error("example `{id}` has label {label} but the classifier has {num_classes} classes")]
    LabelOutOfRange {
        id: String,
        label: usize,
        num_classes: usize,
    },
    #[error("test example `{0}` reached the optimizer")]
    DataLeak(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}
