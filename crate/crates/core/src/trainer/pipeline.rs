use serde::{Deserialize, Serialize};

use super::adamw::OptimizerState;
use super::phase::{Batching, Phase, PhaseConfig, Trainer};
use super::report::{RunReport, RunStatus};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalInputs, EvalReport, ProbeSuite};
use crate::model::TransformerModel;

/// Snapshot names in pipeline order.
pub const SNAPSHOT_NAMES: [&str; 4] = ["init", "post_p1", "post_p2", "final"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpora {
    pub retain_train: Vec<Example>,
    pub retain_val: Vec<Example>,
    pub forget: Vec<Example>,
}

impl Corpora {
    /// Retain-train followed by the forget corpus: what the base model sees.
    pub fn mixed(&self) -> Vec<Example> {
        self.retain_train.iter().chain(&self.forget).cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub positive: PhaseConfig,
    pub negative: PhaseConfig,
    pub stabilize: PhaseConfig,
    pub batching: Batching,
    /// Greedy-decoding budget for probes.
    pub max_new: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (cfg, want) in [
            (&self.positive, Phase::Positive),
            (&self.negative, Phase::Negative),
            (&self.stabilize, Phase::Stabilize),
        ] {
            if cfg.phase != want {
                return Err(Error::Phase(format!(
                    "pipeline phases must run positive, negative, stabilize; found {} in the {} slot",
                    cfg.phase.as_str(),
                    want.as_str()
                )));
            }
            cfg.validate()?;
        }
        if self.max_new == 0 {
            return Err(Error::Config("max_new must be positive".into()));
        }
        Ok(())
    }
}

/// A model state captured between phases, with its evaluation.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub name: &'static str,
    pub model: TransformerModel,
    pub optimizer: Option<OptimizerState>,
    pub eval: EvalReport,
}

pub struct PipelineOutcome {
    pub report: RunReport,
    pub snapshots: Vec<Snapshot>,
}

impl PipelineOutcome {
    pub fn snapshot(&self, name: &str) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.name == name)
    }

    pub fn final_model(&self) -> &TransformerModel {
        &self.snapshots.last().expect("pipeline yields snapshots").model
    }
}

/// Runs positive fine-tuning, the negative phase and stabilization in order,
/// evaluating the model before, between and after them. `on_snapshot` is
/// called as each snapshot is taken.
pub fn run_pipeline(
    model: TransformerModel,
    corpora: &Corpora,
    cfg: &PipelineConfig,
    suite: &ProbeSuite,
    trainer: &mut Trainer,
    mut on_snapshot: impl FnMut(&Snapshot) -> Result<()>,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    suite.validate()?;
    trainer.batching = cfg.batching;
    let inputs = EvalInputs {
        retain_val: &corpora.retain_val,
        forget: &corpora.forget,
        suite,
        batching: cfg.batching,
        max_new: cfg.max_new,
    };
    let mut model = model;
    let mut report = RunReport::default();
    let mut snapshots = Vec::with_capacity(4);
    let mut take = |name: &'static str, model: &TransformerModel, optimizer: Option<OptimizerState>| -> Result<()> {
        let eval = evaluate(model, name, &inputs)?;
        log::info!("{}", eval.summary());
        let snap = Snapshot {
            name,
            model: model.clone(),
            optimizer,
            eval,
        };
        on_snapshot(&snap)?;
        snapshots.push(snap);
        Ok(())
    };

    take(SNAPSHOT_NAMES[0], &model, None)?;
    let run = trainer.run_positive_phase(&mut model, &corpora.retain_train, &cfg.positive)?;
    report.extend(run.report);
    take(SNAPSHOT_NAMES[1], &model, Some(run.optimizer))?;
    let run = trainer.run_negative_phase(&mut model, &corpora.forget, &cfg.negative)?;
    report.extend(run.report);
    take(SNAPSHOT_NAMES[2], &model, Some(run.optimizer))?;
    let run = trainer.run_stabilization(&mut model, &corpora.retain_train, &corpora.retain_val, &cfg.stabilize)?;
    report.extend(run.report);
    take(SNAPSHOT_NAMES[3], &model, Some(run.optimizer))?;
    report.status = RunStatus::Completed;
    Ok(PipelineOutcome { report, snapshots })
}
