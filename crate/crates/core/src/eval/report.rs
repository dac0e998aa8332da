use serde::{Deserialize, Serialize};

use super::nll::mean_nll;
use super::probe::{probe_emission_rate, ProbeSuite, Transcript};
use crate::data::Example;
use crate::error::Result;
use crate::model::TransformerModel;
use crate::trainer::Batching;

/// Utility and suppression metrics of one model state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Snapshot or model name.
    pub label: String,
    pub retain_val_nll: f64,
    /// `exp(retain_val_nll)`.
    pub retain_val_ppl: f64,
    pub forget_mean_nll: f64,
    pub sensitive_emission_rate: f64,
    pub benign_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<Transcript>,
}

/// What to evaluate against.
pub struct EvalInputs<'a> {
    pub retain_val: &'a [Example],
    pub forget: &'a [Example],
    pub suite: &'a ProbeSuite,
    pub batching: Batching,
    pub max_new: usize,
}

pub fn evaluate(model: &TransformerModel, label: impl Into<String>, inputs: &EvalInputs) -> Result<EvalReport> {
    let retain_val_nll = mean_nll(model, inputs.retain_val, &inputs.batching)?;
    let forget_mean_nll = mean_nll(model, inputs.forget, &inputs.batching)?;
    let probe = probe_emission_rate(model, inputs.suite, inputs.max_new)?;
    Ok(EvalReport {
        label: label.into(),
        retain_val_nll,
        retain_val_ppl: retain_val_nll.exp(),
        forget_mean_nll,
        sensitive_emission_rate: probe.sensitive_emission_rate,
        benign_accuracy: probe.benign_accuracy,
        transcripts: probe.transcripts,
    })
}

impl EvalReport {
    /// One-line human-readable summary.
    pub fn summary(&self) -> String {
        format!(
            "{:<10} retain val nll {:.4}  ppl {:8.3}  forget nll {:.4}  emission {:.2}  benign acc {:.2}",
            self.label,
            self.retain_val_nll,
            self.retain_val_ppl,
            self.forget_mean_nll,
            self.sensitive_emission_rate,
            self.benign_accuracy
        )
    }
}
