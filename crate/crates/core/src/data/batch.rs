use super::corpus::Example;
use super::tokenizer::{tokenize, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::grad::IGNORE_INDEX;

/// A right-padded token matrix with next-token labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq: usize,
    /// Row-major `batch × seq`.
    pub input_ids: Vec<usize>,
    /// Row-major `batch × seq`; [`IGNORE_INDEX`] where no loss applies.
    pub labels: Vec<i64>,
    /// Unpadded length of each row.
    pub lengths: Vec<usize>,
    /// Examples dropped because nothing was left after trimming/truncation.
    pub dropped: usize,
}

impl TokenBatch {
    pub fn row_ids(&self, r: usize) -> &[usize] {
        &self.input_ids[r * self.seq..(r + 1) * self.seq]
    }

    pub fn row_labels(&self, r: usize) -> &[i64] {
        &self.labels[r * self.seq..(r + 1) * self.seq]
    }

    /// Number of positions that contribute to the loss.
    pub fn label_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }
}

/// Token sequence of a prompt: `bos` followed by its bytes, at most `max_in` tokens.
pub fn prompt_tokens(prompt: &str, max_in: usize) -> Vec<usize> {
    let mut out = vec![BOS];
    out.extend(tokenize(prompt));
    out.truncate(max_in);
    out
}

/// Token sequence of a completion: its bytes then `eos`, at most `max_out` tokens.
pub fn completion_tokens(completion: &str, max_out: usize) -> Vec<usize> {
    let mut out = tokenize(completion);
    out.truncate(max_out.saturating_sub(1));
    out.push(EOS);
    out
}

/// Tokenizes, truncates and pads `examples` into one batch.
///
/// Each row is `bos prompt completion eos`; the label at position `j` is the
/// token at `j + 1`. Padding is always masked, the prompt only when
/// `mask_prompt` is set.
pub fn collate(examples: &[Example], max_in: usize, max_out: usize, mask_prompt: bool) -> Result<TokenBatch> {
    if max_in < 2 || max_out < 2 {
        return Err(Error::Data(format!(
            "max_in ({max_in}) and max_out ({max_out}) must leave room for text and specials"
        )));
    }
    let mut rows = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for ex in examples {
        if !ex.is_well_formed() {
            dropped += 1;
            continue;
        }
        let p = prompt_tokens(&ex.prompt, max_in);
        let c = completion_tokens(&ex.completion, max_out);
        if p.len() < 2 || c.len() < 2 {
            dropped += 1;
            continue;
        }
        rows.push((p, c));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "no usable examples among {} (all empty or malformed)",
            examples.len()
        )));
    }
    let seq = rows.iter().map(|(p, c)| p.len() + c.len()).max().expect("non-empty");
    let batch = rows.len();
    let mut input_ids = vec![PAD; batch * seq];
    let mut labels = vec![IGNORE_INDEX; batch * seq];
    let mut lengths = Vec::with_capacity(batch);
    for (r, (p, c)) in rows.iter().enumerate() {
        let n = p.len() + c.len();
        let ids = &mut input_ids[r * seq..r * seq + n];
        ids[..p.len()].copy_from_slice(p);
        ids[p.len()..].copy_from_slice(c);
        let first_label = if mask_prompt { p.len() - 1 } else { 0 };
        for j in first_label..n - 1 {
            labels[r * seq + j] = ids[j + 1] as i64;
        }
        lengths.push(n);
    }
    Ok(TokenBatch {
        batch,
        seq,
        input_ids,
        labels,
        lengths,
        dropped,
    })
}
