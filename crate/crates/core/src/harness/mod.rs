//! Pretrain-then-finetune experiments, restart sweeps and CSV reporting.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod experiment;
pub mod report;

pub use checkpoint::Checkpoint;
pub use config::{Cell, DataConfig, DataSource, ExperimentConfig, SweepConfig, Technique};
pub use data::{load_idx, synth_digits, Dataset, SynthParams};
pub use experiment::{
    finetune, prepare_data, pretrain, summarize, sweep, ExperimentData, PretrainOutcome, RunRecord,
    SummaryRow, SweepOutcome,
};
pub use report::{report, write_report};
