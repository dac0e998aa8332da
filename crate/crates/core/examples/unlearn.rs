//! Suppresses the forget corpus with scaled gradient ascent on the top two
//! blocks of the fine-tuned large model, then checks what stayed frozen.
//!
//! ```text
//! cargo run --release --example unlearn
//! ```

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::eval::{mean_nll, probe_emission_rate};
use sequnlearn::model::{select_trainable, TransformerModel};
use sequnlearn::trainer::{Phase, Trainer};

fn main() -> sequnlearn::Result<()> {
    let cfg = RunConfig::preset(Preset::Desk);
    let corpora = cfg.data.corpora()?;
    let suite = cfg.probe_suite()?;
    let batching = cfg.data.batching();
    let mut trainer = Trainer::new(batching);

    let mut model = TransformerModel::init(cfg.model.clone())?;
    trainer.run_pretrain(&mut model, &corpora.mixed(), &cfg.phases.pretrain)?;
    trainer.run_positive_phase(&mut model, &corpora.retain_train, &cfg.phases.positive)?;
    let before = model.clone();
    let emission = probe_emission_rate(&model, &suite, cfg.eval.max_new)?.sensitive_emission_rate;
    println!("fine-tuned: sensitive emission rate {emission:.2}");

    let run = trainer.run_negative_phase(&mut model, &corpora.forget, &cfg.phases.negative)?;
    let summary = run.report.phase(Phase::Negative).expect("negative summary");
    println!(
        "forget NLL {:.4} -> {:.4} over {} ascent steps (alpha {})",
        summary.forget_nll_before.unwrap_or(f64::NAN),
        summary.forget_nll_after.unwrap_or(f64::NAN),
        summary.steps,
        cfg.phases.negative.alpha
    );
    println!(
        "retain val NLL {:.4} -> {:.4}",
        mean_nll(&before, &corpora.retain_val, &batching)?,
        mean_nll(&model, &corpora.retain_val, &batching)?
    );
    let emission = probe_emission_rate(&model, &suite, cfg.eval.max_new)?.sensitive_emission_rate;
    println!("after ascent: sensitive emission rate {emission:.2}");

    let trainable = select_trainable(&model, cfg.phases.negative.freeze_policy)?;
    let (mut moved, mut frozen_moved) = (0, 0);
    for (name, t) in before.parameters() {
        if t.data() != model.param(name).expect("same layout").data() {
            moved += 1;
            frozen_moved += usize::from(!trainable.contains(name));
        }
    }
    println!(
        "{} of {} tensors trainable; {moved} changed, {frozen_moved} of them frozen",
        trainable.len(),
        before.parameters().len()
    );
    Ok(())
}
