//! AdamW and the training phases: base-model training, positive fine-tuning,
//! layer-restricted gradient ascent and stabilization with early stopping.

mod adamw;
mod phase;
mod pipeline;
mod report;

pub use adamw::{adamw_step, clip_global_norm, AdamWConfig, Moments, OptimizerState};
pub use phase::{batch_gradients, Batching, EarlyStop, Objective, Phase, PhaseConfig, PhaseRun, Trainer};
pub use pipeline::{run_pipeline, Corpora, PipelineConfig, PipelineOutcome, Snapshot, SNAPSHOT_NAMES};
pub use report::{EpochRecord, PhaseSummary, RunReport, RunStatus};

#[cfg(test)]
mod tests;
