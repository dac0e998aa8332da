use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, clip_global_norm, AdamWConfig, OptimizerState};
use super::report::{EpochRecord, PhaseSummary, RunReport, RunStatus};
use crate::data::{collate, Example};
use crate::error::{Error, Result};
use crate::eval;
use crate::grad::Tape;
use crate::model::{select_trainable, FreezePolicy, TransformerModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Base-model training on the mixed corpus, before any unlearning.
    Pretrain,
    /// Fine-tuning on the retain corpus.
    Positive,
    /// Gradient ascent on the forget corpus.
    Negative,
    /// Retain fine-tuning with early stopping.
    Stabilize,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Positive => "positive",
            Phase::Negative => "negative",
            Phase::Stabilize => "stabilize",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: 2,
            min_delta: 1e-3,
        }
    }
}

/// Hyperparameters of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub lr: f64,
    /// Scale of the negated loss; negative phase only.
    #[serde(default)]
    pub alpha: f64,
    /// Epoch count, or the epoch cap for stabilization.
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub freeze_policy: FreezePolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<EarlyStop>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Global gradient-norm cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f32>,
}

fn default_weight_decay() -> f64 {
    0.01
}

impl PhaseConfig {
    pub fn new(phase: Phase, lr: f64, epochs: usize, batch_size: usize) -> Self {
        PhaseConfig {
            phase,
            lr,
            alpha: 0.0,
            epochs,
            batch_size,
            freeze_policy: FreezePolicy::AllTrainable,
            early_stop: None,
            seed: 0,
            weight_decay: default_weight_decay(),
            grad_clip: None,
        }
    }

    pub fn negative(lr: f64, alpha: f64, epochs: usize, batch_size: usize) -> Self {
        PhaseConfig {
            alpha,
            freeze_policy: FreezePolicy::top_two(),
            ..Self::new(Phase::Negative, lr, epochs, batch_size)
        }
    }

    pub fn stabilize(lr: f64, max_epochs: usize, batch_size: usize, early_stop: EarlyStop) -> Self {
        PhaseConfig {
            early_stop: Some(early_stop),
            ..Self::new(Phase::Stabilize, lr, max_epochs, batch_size)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Phase(format!("{} phase: {msg}", self.phase.as_str())));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be a finite non-negative number, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("grad_clip must be positive, got {c}"));
            }
        }
        match self.phase {
            Phase::Negative => {
                // α = 0 and epochs = 0 are accepted as explicit no-op phases.
                if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
                    return fail(format!("alpha must be a finite non-negative number, got {}", self.alpha));
                }
            }
            Phase::Pretrain | Phase::Positive | Phase::Stabilize => {
                if self.freeze_policy != FreezePolicy::AllTrainable {
                    return fail("only the negative phase may freeze parameters".into());
                }
                if self.epochs == 0 {
                    return fail("epochs must be positive".into());
                }
            }
        }
        match (self.phase, &self.early_stop) {
            (Phase::Stabilize, None) => return fail("early_stop settings are required".into()),
            (Phase::Stabilize, Some(es)) => {
                if es.patience == 0 {
                    return fail("early_stop.patience must be at least 1".into());
                }
                if !(es.min_delta >= 0.0 && es.min_delta.is_finite()) {
                    return fail(format!("early_stop.min_delta must be non-negative, got {}", es.min_delta));
                }
            }
            (_, Some(_)) => return fail("early_stop only applies to stabilization".into()),
            (_, None) => {}
        }
        Ok(())
    }

    fn expect(&self, phase: Phase) -> Result<()> {
        self.validate()?;
        if self.phase != phase {
            return Err(Error::Phase(format!(
                "expected a {} phase config, got {}",
                phase.as_str(),
                self.phase.as_str()
            )));
        }
        Ok(())
    }

    fn optimizer(&self) -> OptimizerState {
        OptimizerState::new(AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::with_lr(self.lr)
        })
    }
}

/// How examples become token batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Batching {
    pub max_in: usize,
    pub max_out: usize,
    pub mask_prompt: bool,
}

impl Default for Batching {
    fn default() -> Self {
        Batching {
            max_in: 64,
            max_out: 32,
            mask_prompt: true,
        }
    }
}

impl Batching {
    pub fn check(&self, model: &TransformerModel) -> Result<()> {
        if self.max_in + self.max_out > model.config().context_len {
            return Err(Error::Data(format!(
                "max_in {} + max_out {} exceeds context length {}",
                self.max_in,
                self.max_out,
                model.config().context_len
            )));
        }
        Ok(())
    }
}

/// Direction of the optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Minimize cross-entropy.
    Descend,
    /// Minimize `−alpha · CE`.
    Ascend { alpha: f64 },
}

/// Gradients of the objective on one batch, for the named parameters.
pub fn batch_gradients(
    model: &TransformerModel,
    examples: &[Example],
    batching: &Batching,
    trainable: &BTreeSet<String>,
    objective: Objective,
) -> Result<(f64, BTreeMap<String, Vec<f32>>)> {
    let batch = collate(examples, batching.max_in, batching.max_out, batching.mask_prompt)?;
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &batch.input_ids, batch.batch, batch.seq, Some(trainable))?;
    let ce = tape.cross_entropy_masked(fwd.logits, &batch.labels)?;
    let loss = match objective {
        Objective::Descend => ce,
        Objective::Ascend { alpha } => tape.scale(ce, -(alpha as f32))?,
    };
    tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for ((name, _), &id) in model.parameters().iter().zip(&fwd.params) {
        if trainable.contains(name) {
            let g = tape
                .grad(id)
                .ok_or_else(|| Error::Contract(format!("no gradient reached {name}")))?;
            grads.insert(name.clone(), g.to_vec());
        }
    }
    Ok((f64::from(tape.scalar(ce)), grads))
}

struct EpochStats {
    mean_loss: f64,
    batch_losses: Vec<f64>,
    steps: usize,
}

/// What stays fixed across the epochs of one phase.
struct EpochPlan<'p> {
    cfg: &'p PhaseConfig,
    batching: &'p Batching,
    trainable: &'p BTreeSet<String>,
    objective: Objective,
}

fn run_epoch(
    model: &mut TransformerModel,
    examples: &[Example],
    plan: &EpochPlan,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<EpochStats> {
    let EpochPlan {
        cfg,
        batching,
        trainable,
        objective,
    } = *plan;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    let mut weighted = 0.0;
    let mut tokens = 0usize;
    let mut batch_losses = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let exs: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
        let batch = collate(&exs, batching.max_in, batching.max_out, batching.mask_prompt)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch.input_ids, batch.batch, batch.seq, Some(trainable))?;
        let ce = tape.cross_entropy_masked(fwd.logits, &batch.labels)?;
        let loss = match objective {
            Objective::Descend => ce,
            Objective::Ascend { alpha } => tape.scale(ce, -(alpha as f32))?,
        };
        tape.backward(loss)?;
        let ce_value = f64::from(tape.scalar(ce));
        let count = batch.label_count();
        weighted += ce_value * count as f64;
        tokens += count;
        batch_losses.push(ce_value);

        let names: Vec<&str> = model
            .parameters()
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| trainable.contains(*n))
            .collect();
        let index: HashMap<&str, usize> = model.names().enumerate().map(|(i, n)| (n, i)).collect();
        let mut grads: Vec<Vec<f32>> = names
            .iter()
            .map(|n| {
                tape.grad(fwd.params[index[n]])
                    .map(<[f32]>::to_vec)
                    .ok_or_else(|| Error::Contract(format!("no gradient reached {n}")))
            })
            .collect::<Result<_>>()?;
        if let Some(max) = cfg.grad_clip {
            clip_global_norm(&mut grads, max);
        }
        let owned: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        drop(tape);
        let map: HashMap<&str, &[f32]> = owned.iter().map(String::as_str).zip(grads.iter().map(Vec::as_slice)).collect();
        adamw_step(model, &map, trainable, state)?;
    }
    Ok(EpochStats {
        mean_loss: weighted / tokens.max(1) as f64,
        batch_losses,
        steps: order.len().div_ceil(cfg.batch_size),
    })
}

fn nonempty(examples: &[Example], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Data(format!("{what} corpus is empty")));
    }
    Ok(())
}

/// Result of one phase: its report fragment and the final optimizer state.
pub struct PhaseRun {
    pub report: RunReport,
    pub optimizer: OptimizerState,
}

type EpochHook<'a> = Box<dyn FnMut(&EpochRecord) -> Result<()> + 'a>;

/// Drives the training phases. `on_epoch` sees every epoch record as soon as
/// it is complete.
pub struct Trainer<'a> {
    pub batching: Batching,
    pub model_label: Option<String>,
    on_epoch: Option<EpochHook<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(batching: Batching) -> Self {
        Trainer {
            batching,
            model_label: None,
            on_epoch: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.model_label = Some(label.into());
        self
    }

    pub fn on_epoch(mut self, f: impl FnMut(&EpochRecord) -> Result<()> + 'a) -> Self {
        self.on_epoch = Some(Box::new(f));
        self
    }

    fn emit(&mut self, rec: &EpochRecord) -> Result<()> {
        log::info!(
            "{} epoch {}: train {:.4}{}",
            rec.phase.as_str(),
            rec.epoch,
            rec.train_loss,
            rec.val_loss.map(|v| format!(", val {v:.4}")).unwrap_or_default()
        );
        match &mut self.on_epoch {
            Some(f) => f(rec),
            None => Ok(()),
        }
    }

    fn record(&self, phase: Phase, epoch: usize, stats: &EpochStats, val: Option<f64>, start: Instant) -> EpochRecord {
        EpochRecord {
            model: self.model_label.clone(),
            phase,
            epoch,
            train_loss: stats.mean_loss,
            val_loss: val,
            val_ppl: val.map(f64::exp),
            steps: stats.steps,
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    }

    /// Plain descent with every parameter trainable, used by the base-model
    /// (`Pretrain`) and retain (`Positive`) phases.
    fn descend(&mut self, model: &mut TransformerModel, data: &[Example], cfg: &PhaseConfig, phase: Phase) -> Result<PhaseRun> {
        cfg.expect(phase)?;
        nonempty(data, phase.as_str())?;
        self.batching.check(model)?;
        let trainable = select_trainable(model, FreezePolicy::AllTrainable)?;
        let batching = self.batching;
        let plan = EpochPlan {
            cfg,
            batching: &batching,
            trainable: &trainable,
            objective: Objective::Descend,
        };
        let mut state = cfg.optimizer();
        let mut report = RunReport::default();
        let mut summary = PhaseSummary::new(phase);
        let phase_start = Instant::now();
        for epoch in 1..=cfg.epochs {
            let start = Instant::now();
            let stats = run_epoch(model, data, &plan, &mut state, epoch)?;
            let rec = self.record(phase, epoch, &stats, None, start);
            self.emit(&rec)?;
            report.epochs.push(rec);
            summary.epochs_run += 1;
            summary.steps += stats.steps;
        }
        summary.wall_time_s = phase_start.elapsed().as_secs_f64();
        report.phases.push(summary);
        report.status = RunStatus::Completed;
        Ok(PhaseRun {
            report,
            optimizer: state,
        })
    }

    /// Trains the base model on a mixed corpus before unlearning begins.
    pub fn run_pretrain(&mut self, model: &mut TransformerModel, corpus: &[Example], cfg: &PhaseConfig) -> Result<PhaseRun> {
        self.descend(model, corpus, cfg, Phase::Pretrain)
    }

    /// Cross-entropy fine-tuning on the retain corpus, all parameters trainable.
    pub fn run_positive_phase(&mut self, model: &mut TransformerModel, retain_train: &[Example], cfg: &PhaseConfig) -> Result<PhaseRun> {
        self.descend(model, retain_train, cfg, Phase::Positive)
    }

    /// Gradient ascent on the forget corpus: minimizes `−α·CE` over the
    /// parameters the freeze policy leaves trainable. Frozen parameters are
    /// never touched.
    pub fn run_negative_phase(&mut self, model: &mut TransformerModel, forget: &[Example], cfg: &PhaseConfig) -> Result<PhaseRun> {
        cfg.expect(Phase::Negative)?;
        nonempty(forget, "forget")?;
        self.batching.check(model)?;
        let trainable = select_trainable(model, cfg.freeze_policy)?;
        let batching = self.batching;
        let plan = EpochPlan {
            cfg,
            batching: &batching,
            trainable: &trainable,
            objective: Objective::Ascend { alpha: cfg.alpha },
        };
        let mut state = cfg.optimizer();
        let mut report = RunReport::default();
        let mut summary = PhaseSummary::new(Phase::Negative);
        let phase_start = Instant::now();
        summary.forget_nll_before = Some(eval::mean_nll(model, forget, &self.batching)?);
        if cfg.alpha > 0.0 {
            for epoch in 1..=cfg.epochs {
                let start = Instant::now();
                let stats = run_epoch(model, forget, &plan, &mut state, epoch)?;
                let rec = self.record(Phase::Negative, epoch, &stats, None, start);
                self.emit(&rec)?;
                report.epochs.push(rec);
                summary.epochs_run += 1;
                summary.steps += stats.steps;
                summary.batch_losses.extend(stats.batch_losses);
            }
        } else {
            log::info!("negative phase skipped: alpha is 0");
        }
        summary.forget_nll_after = Some(eval::mean_nll(model, forget, &self.batching)?);
        summary.wall_time_s = phase_start.elapsed().as_secs_f64();
        report.phases.push(summary);
        report.status = RunStatus::Completed;
        Ok(PhaseRun {
            report,
            optimizer: state,
        })
    }

    /// Retain fine-tuning with early stopping on validation loss. The weights
    /// with the best validation loss seen (including the entry weights) are
    /// restored on exit.
    pub fn run_stabilization(
        &mut self,
        model: &mut TransformerModel,
        retain_train: &[Example],
        retain_val: &[Example],
        cfg: &PhaseConfig,
    ) -> Result<PhaseRun> {
        cfg.expect(Phase::Stabilize)?;
        nonempty(retain_train, "retain train")?;
        nonempty(retain_val, "retain validation")?;
        self.batching.check(model)?;
        let es = cfg.early_stop.expect("validated");
        let trainable = select_trainable(model, FreezePolicy::AllTrainable)?;
        let batching = self.batching;
        let plan = EpochPlan {
            cfg,
            batching: &batching,
            trainable: &trainable,
            objective: Objective::Descend,
        };
        let mut state = cfg.optimizer();
        let mut report = RunReport::default();
        let mut summary = PhaseSummary::new(Phase::Stabilize);
        let phase_start = Instant::now();

        let entry = eval::mean_nll(model, retain_val, &self.batching)?;
        summary.entry_val_loss = Some(entry);
        let mut best = (entry, 0usize, model.clone());
        let mut stale = 0;
        for epoch in 1..=cfg.epochs {
            let start = Instant::now();
            let stats = run_epoch(model, retain_train, &plan, &mut state, epoch)?;
            let val = eval::mean_nll(model, retain_val, &self.batching)?;
            let rec = self.record(Phase::Stabilize, epoch, &stats, Some(val), start);
            self.emit(&rec)?;
            report.epochs.push(rec);
            summary.epochs_run += 1;
            summary.steps += stats.steps;
            if val < best.0 - es.min_delta {
                best = (val, epoch, model.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    summary.stopped_early = true;
                    break;
                }
            }
        }
        let (best_val, best_epoch, best_model) = best;
        *model = best_model;
        summary.best_epoch = Some(best_epoch);
        summary.exit_val_loss = Some(best_val);
        summary.wall_time_s = phase_start.elapsed().as_secs_f64();
        report.phases.push(summary);
        report.status = RunStatus::Completed;
        Ok(PhaseRun {
            report,
            optimizer: state,
        })
    }
}
