//! Synthetic retain and forget corpora, the byte tokenizer and batch collation.
//!
//! ```text
//! cargo run --release --example data
//! ```

use sequnlearn::data::{
    collate, count_duplicates, detokenize, generate_forget, generate_retain, split_train_val, tokenize, CorpusSpec,
};
use sequnlearn::eval::detect_sensitive;

fn main() -> sequnlearn::Result<()> {
    let retain = generate_retain(&CorpusSpec::new(300, 1))?;
    let forget = generate_forget(&CorpusSpec::new(120, 2))?;
    let (train, val) = split_train_val(&retain, 0.1, 3)?;
    println!(
        "retain {} ({} train / {} val, {} duplicates), forget {}",
        retain.len(),
        train.len(),
        val.len(),
        count_duplicates(&retain),
        forget.len()
    );
    for ex in retain.iter().take(3).chain(forget.iter().take(3)) {
        let text = format!("{} {}", ex.prompt, ex.completion);
        println!("{:?} {:<60} sensitive={}", ex.kind, text, detect_sensitive(&text));
    }

    let ids = tokenize(&forget[0].prompt);
    println!("tokens {:?} -> {:?}", ids, detokenize(&ids));

    let batch = collate(&forget[..2], 48, 48, true)?;
    println!(
        "batch {}x{}, {} supervised labels in row 0: {:?}",
        batch.batch,
        batch.seq,
        batch.row_labels(0).iter().filter(|&&l| l >= 0).count(),
        &batch.row_labels(0)[..8]
    );
    Ok(())
}
