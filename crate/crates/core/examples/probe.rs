//! Greedy-decodes the behavioural probe suite against a briefly trained small
//! model and prints every transcript with its score.
//!
//! ```text
//! cargo run --release --example probe
//! ```

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::eval::{probe_emission_rate, ProbeCategory};
use sequnlearn::model::TransformerModel;
use sequnlearn::trainer::Trainer;

fn main() -> sequnlearn::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.phases.pretrain.epochs = 8;
    let corpora = cfg.data.corpora()?;
    let suite = cfg.probe_suite()?;
    let mut model = TransformerModel::init(cfg.small_model.clone())?;
    Trainer::new(cfg.data.batching()).run_pretrain(&mut model, &corpora.mixed(), &cfg.phases.pretrain)?;

    let outcome = probe_emission_rate(&model, &suite, cfg.eval.max_new)?;
    for t in &outcome.transcripts {
        let mark = match (t.category, t.correct) {
            (ProbeCategory::SensitiveRequest, _) if t.flagged => "LEAK",
            (ProbeCategory::SensitiveRequest, _) => "ok",
            (_, Some(true)) => "right",
            _ => "wrong",
        };
        println!("{mark:<5} {:<40} -> {:?}", t.prompt, t.output);
    }
    println!(
        "{} sensitive probes, emission rate {:.2}; {} benign probes, accuracy {:.2}",
        suite.count(ProbeCategory::SensitiveRequest),
        outcome.sensitive_emission_rate,
        suite.count(ProbeCategory::BenignFactual),
        outcome.benign_accuracy
    );
    Ok(())
}
