//! Trains the small model from scratch on the mixed corpus, then fine-tunes it
//! on the retain split, printing each epoch as it finishes.
//!
//! ```text
//! cargo run --release --example train
//! ```

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::eval::perplexity;
use sequnlearn::model::TransformerModel;
use sequnlearn::trainer::Trainer;

fn main() -> sequnlearn::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.phases.pretrain.epochs = 6;
    let corpora = cfg.data.corpora()?;
    let batching = cfg.data.batching();
    let mut model = TransformerModel::init(cfg.small_model.clone())?;
    println!(
        "{} parameters, untrained retain ppl {:.2}",
        model.parameter_count(),
        perplexity(&model, &corpora.retain_val, &batching)?
    );

    let mut trainer = Trainer::new(batching).on_epoch(|r| {
        println!(
            "{:<9} epoch {} loss {:.4} ({} steps, {:.1}s)",
            r.phase.as_str(),
            r.epoch,
            r.train_loss,
            r.steps,
            r.wall_time_s
        );
        Ok(())
    });
    trainer.run_pretrain(&mut model, &corpora.mixed(), &cfg.phases.pretrain)?;
    trainer.run_positive_phase(&mut model, &corpora.retain_train, &cfg.phases.positive)?;
    println!("retain ppl after fine-tuning {:.3}", perplexity(&model, &corpora.retain_val, &batching)?);
    Ok(())
}
