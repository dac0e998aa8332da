use crate::data::{collate, Example};
use crate::error::{Error, Result};
use crate::grad::{log_sum_exp, IGNORE_INDEX};
use crate::model::TransformerModel;
use crate::trainer::Batching;

/// Examples per forward pass during evaluation.
const EVAL_BATCH: usize = 16;

/// Summed negative log-likelihood and the number of tokens it covers.
pub fn nll_sum(model: &TransformerModel, corpus: &[Example], batching: &Batching) -> Result<(f64, usize)> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot evaluate an empty corpus".into()));
    }
    // A canonical order makes the result independent of how the corpus was shuffled.
    let mut sorted: Vec<&Example> = corpus.iter().collect();
    sorted.sort_by(|a, b| (&a.prompt, &a.completion).cmp(&(&b.prompt, &b.completion)));
    let vocab = model.config().vocab_size;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in sorted.chunks(EVAL_BATCH) {
        let exs: Vec<Example> = chunk.iter().map(|&e| e.clone()).collect();
        let batch = collate(&exs, batching.max_in, batching.max_out, batching.mask_prompt)?;
        let logits = model.logits(&batch.input_ids, batch.batch, batch.seq)?;
        let mut row = vec![0.0f64; vocab];
        for (pos, &label) in batch.labels.iter().enumerate() {
            if label == IGNORE_INDEX {
                continue;
            }
            let src = &logits.data()[pos * vocab..(pos + 1) * vocab];
            row.iter_mut().zip(src).for_each(|(d, &s)| *d = f64::from(s));
            total += log_sum_exp(&row) - row[label as usize];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok((total, count))
}

/// Token-weighted mean cross-entropy over the whole corpus, in nats.
pub fn mean_nll(model: &TransformerModel, corpus: &[Example], batching: &Batching) -> Result<f64> {
    let (total, count) = nll_sum(model, corpus, batching)?;
    Ok(total / count as f64)
}

/// `exp(mean_nll)`.
pub fn perplexity(model: &TransformerModel, corpus: &[Example], batching: &Batching) -> Result<f64> {
    mean_nll(model, corpus, batching).map(f64::exp)
}
