use serde::{Deserialize, Serialize};

use super::nll::mean_nll;
use super::probe::ProbeSuite;
use super::report::EvalReport;
use crate::error::Result;
use crate::model::{ModelConfig, TransformerModel};
use crate::trainer::{run_pipeline, Corpora, PhaseConfig, PipelineConfig, RunReport, Trainer};

/// One row of the capacity table: losses are mean per-token NLL in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub model: String,
    pub parameters: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub ppl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub rows: Vec<CapacityRow>,
    pub evals: Vec<EvalReport>,
    pub runs: Vec<RunReport>,
    /// Final weights, in row order.
    #[serde(skip)]
    pub models: Vec<TransformerModel>,
}

impl CapacityReport {
    /// Plain-text table with one row per model.
    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>10} {:>8} {:>8} {:>9}\n", "model", "params", "train", "val", "ppl");
        for r in &self.rows {
            out += &format!(
                "{:<8} {:>10} {:>8.4} {:>8.4} {:>9.3}\n",
                r.model, r.parameters, r.train_loss, r.val_loss, r.ppl
            );
        }
        out
    }

    pub fn row(&self, model: &str) -> Option<&CapacityRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Whether the first model's perplexity is at most the second's.
    pub fn larger_is_better(&self) -> bool {
        matches!(self.rows.as_slice(), [a, b] if a.ppl <= b.ppl)
    }
}

/// Trains both configurations from scratch on identical data and seeds
/// (base training on the mixed corpus when `base` is given, then the full
/// pipeline) and tabulates final retain losses.
pub fn compare_capacity(
    models: [(&str, ModelConfig); 2],
    base: Option<&PhaseConfig>,
    corpora: &Corpora,
    cfg: &PipelineConfig,
    suite: &ProbeSuite,
) -> Result<CapacityReport> {
    let mut report = CapacityReport {
        rows: Vec::new(),
        evals: Vec::new(),
        runs: Vec::new(),
        models: Vec::new(),
    };
    for (label, config) in models {
        let mut model = TransformerModel::init(config)?;
        let mut trainer = Trainer::new(cfg.batching).with_label(label);
        let mut run = RunReport::default();
        if let Some(base) = base {
            run.extend(trainer.run_pretrain(&mut model, &corpora.mixed(), base)?.report);
        }
        let outcome = run_pipeline(model, corpora, cfg, suite, &mut trainer, |_| Ok(()))?;
        run.extend(outcome.report.clone());
        run.status = outcome.report.status;
        let last = outcome.snapshots.last().expect("pipeline yields snapshots");
        let mut eval = last.eval.clone();
        eval.label = label.to_string();
        report.rows.push(CapacityRow {
            model: label.to_string(),
            parameters: last.model.parameter_count(),
            train_loss: mean_nll(&last.model, &corpora.retain_train, &cfg.batching)?,
            val_loss: eval.retain_val_nll,
            ppl: eval.retain_val_ppl,
        });
        report.evals.push(eval);
        report.runs.push(run);
        report.models.push(outcome.final_model().clone());
    }
    Ok(report)
}
