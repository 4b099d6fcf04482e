//! Config files, the append-only run store and the commands behind the
//! `phsbench` binary.

pub mod cli;
mod commands;
mod config;
mod store;

pub use commands::{
    cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_report, import_reports, registry_listing,
    registry_validate, write_json_lines, CommandError, FoldLog, RegistryCheck, ReportOptions,
    PRETRAIN_CHECKPOINT,
};
pub use config::{
    derive_seed, ConfigError, EncoderSettings, ExperimentConfig, FinetuneSection,
    NormalizerSettings, PretrainSection, ReportSettings, DEFAULT_HOME,
};
pub use store::{
    CommandKind, FailureKind, RunFailure, RunMetrics, RunRecord, RunStatus, RunStore, StoreError,
    INCOMPLETE_MARKER,
};
