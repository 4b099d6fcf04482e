//! Benchmarking toolkit for public-health text classification on social media.
//!
//! The crate covers the whole workflow at desk scale:
//!
//! * [`normalizer`]: deterministic tweet/post cleanup (retweet markers, URLs,
//!   mentions, emoji names, character limit).
//! * [`corpus`]: the built-in registry of 25 benchmark datasets, ingestion of
//!   user-supplied data files and split construction (official or stratified
//!   k-fold).
//! * [`tokenizer`]: uncased WordPiece.
//! * [`nn`]: a small reverse-mode autograd engine and a BERT-style encoder.
//! * [`pretrain`]: NSP pairing, MLM masking and continued pretraining.
//! * [`finetune`]: one-cycle schedule, CLS classifier head and the fine-tuning loop.
//! * [`evalkit`]: confusion matrices, F1, fold aggregation, ΔMP and comparison tables.
//! * [`experiment`]: config files, the append-only run store and the commands
//!   behind the `phsbench` binary.

pub mod corpus;
pub mod evalkit;
pub mod experiment;
pub mod finetune;
pub mod nn;
pub mod normalizer;
pub mod pretrain;
pub mod synth;
pub mod tokenizer;

pub use corpus::{DatasetDescriptor, LabeledExample, Registry, SplitPlan};
pub use evalkit::{ConfusionMatrix, EvalReport, FoldResult};
pub use finetune::{OneCycleSchedule, SequenceClassifier};
pub use normalizer::{normalize, NormalizationConfig, NormalizedPost, RawPost};
pub use pretrain::{MaskedBatch, PretrainConfig};
pub use tokenizer::{Tokenizer, WordPiece};
