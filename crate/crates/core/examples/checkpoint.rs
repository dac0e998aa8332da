//! Saves a model with its optimizer state, reloads it, and shows that the
//! reload is bit-exact and that corruption is caught.
//!
//! ```text
//! cargo run --release --example checkpoint
//! ```

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::eval::perplexity;
use sequnlearn::model::TransformerModel;
use sequnlearn::persistence::{encode_checkpoint, load_checkpoint, save_checkpoint};
use sequnlearn::trainer::{Phase, PhaseConfig, Trainer};

fn main() -> sequnlearn::Result<()> {
    let cfg = RunConfig::preset(Preset::Desk);
    let corpora = cfg.data.corpora()?;
    let batching = cfg.data.batching();
    let mut model = TransformerModel::init(cfg.small_model.clone())?;
    let run = Trainer::new(batching).run_positive_phase(
        &mut model,
        &corpora.retain_train,
        &PhaseConfig::new(Phase::Positive, 1e-3, 1, 8),
    )?;

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, Some(&run.optimizer), &path)?;
    let bytes = std::fs::read(&path).expect("just written");
    println!("wrote {} bytes, fingerprint {}", bytes.len(), model.fingerprint());

    let loaded = load_checkpoint(&path)?;
    let same = encode_checkpoint(&loaded.model, loaded.optimizer.as_ref())? == bytes;
    println!(
        "reloaded: byte-identical re-encode {same}, ppl {:.6} vs {:.6}",
        perplexity(&loaded.model, &corpora.retain_val, &batching)?,
        perplexity(&model, &corpora.retain_val, &batching)?
    );

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    std::fs::write(&path, &corrupt).expect("writable");
    match load_checkpoint(&path) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("flipped one bit: {e}"),
    }
    Ok(())
}
