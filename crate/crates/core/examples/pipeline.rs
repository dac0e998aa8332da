//! The full sequence on the large model: base training, retain fine-tuning,
//! forget-set ascent and early-stopped stabilization, with an evaluation at
//! every snapshot.
//!
//! ```text
//! cargo run --release --example pipeline
//! ```

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::model::TransformerModel;
use sequnlearn::trainer::{run_pipeline, Phase, Trainer};

fn main() -> sequnlearn::Result<()> {
    let cfg = RunConfig::preset(Preset::Desk);
    let corpora = cfg.data.corpora()?;
    let suite = cfg.probe_suite()?;
    let pipeline = cfg.pipeline();
    let mut trainer = Trainer::new(pipeline.batching).on_epoch(|r| {
        let val = r.val_loss.map(|v| format!(" val {v:.4}")).unwrap_or_default();
        println!("{:<9} epoch {:>2} train {:.4}{val}", r.phase.as_str(), r.epoch, r.train_loss);
        Ok(())
    });

    let mut model = TransformerModel::init(cfg.model.clone())?;
    trainer.run_pretrain(&mut model, &corpora.mixed(), &cfg.phases.pretrain)?;
    let outcome = run_pipeline(model, &corpora, &pipeline, &suite, &mut trainer, |snap| {
        println!("{}", snap.eval.summary());
        Ok(())
    })?;

    let stab = outcome.report.phase(Phase::Stabilize).expect("stabilize summary");
    println!(
        "stabilization: {} epochs, stopped early {}, kept epoch {:?}",
        stab.epochs_run, stab.stopped_early, stab.best_epoch
    );
    Ok(())
}
