use serde::{Deserialize, Serialize};

use super::Phase;

/// One epoch of one phase. Loss columns are mean per-token cross-entropy in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Which model the record belongs to when several are trained side by side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub phase: Phase,
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ppl: Option<f64>,
    pub steps: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub epochs_run: usize,
    pub steps: usize,
    /// Stabilization only: stopped because validation loss stalled.
    pub stopped_early: bool,
    /// Stabilization only: epoch whose weights were kept (0 = entry weights).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_val_loss: Option<f64>,
    /// Negative phase only: forget-set NLL before and after.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget_nll_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget_nll_after: Option<f64>,
    /// Negative phase only: forget-set CE of every batch, in step order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_losses: Vec<f64>,
    pub wall_time_s: f64,
}

impl PhaseSummary {
    pub(crate) fn new(phase: Phase) -> Self {
        PhaseSummary {
            phase,
            epochs_run: 0,
            steps: 0,
            stopped_early: false,
            best_epoch: None,
            entry_val_loss: None,
            exit_val_loss: None,
            forget_nll_before: None,
            forget_nll_after: None,
            batch_losses: Vec::new(),
            wall_time_s: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Running,
}

/// Everything a run measured, in execution order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub phases: Vec<PhaseSummary>,
    pub status: RunStatus,
}

impl Default for RunReport {
    fn default() -> Self {
        RunReport {
            epochs: Vec::new(),
            phases: Vec::new(),
            status: RunStatus::Running,
        }
    }
}

impl RunReport {
    pub fn extend(&mut self, other: RunReport) {
        self.epochs.extend(other.epochs);
        self.phases.extend(other.phases);
    }

    pub fn epochs_of(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.phase == phase)
    }

    pub fn phase(&self, phase: Phase) -> Option<&PhaseSummary> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    /// Drops wall-clock fields so two runs can be compared exactly.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.wall_time_s = 0.0);
        r.phases.iter_mut().for_each(|p| p.wall_time_s = 0.0);
        r
    }
}
