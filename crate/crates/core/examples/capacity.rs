//! Runs the same training sequence on the large and small models and prints
//! the capacity table.
//!
//! ```text
//! cargo run --release --example capacity
//! ```

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::eval::compare_capacity;

fn main() -> sequnlearn::Result<()> {
    let cfg = RunConfig::preset(Preset::Desk);
    let corpora = cfg.data.corpora()?;
    let report = compare_capacity(
        [("large", cfg.model.clone()), ("small", cfg.small_model.clone())],
        Some(&cfg.phases.pretrain),
        &corpora,
        &cfg.pipeline(),
        &cfg.probe_suite()?,
    )?;
    print!("{}", report.table());
    for eval in &report.evals {
        println!("{}", eval.summary());
    }
    println!("larger model has lower perplexity: {}", report.larger_is_better());
    Ok(())
}
