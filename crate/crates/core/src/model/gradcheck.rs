use super::{ModelConfig, TransformerModel};
use crate::data::tokenize;
use crate::error::{Error, Result};
use crate::grad::{finite_difference_check, GradCheckReport, IGNORE_INDEX};

/// Finite-difference check of every parameter of a freshly initialized model,
/// evaluated in f64 on a fixed two-row batch with a masked cross-entropy loss.
pub fn check_model_gradients(config: &ModelConfig, h: f64, tol: f64) -> Result<GradCheckReport> {
    let model = TransformerModel::init(config.clone())?.cast::<f64>();
    let seq = config.context_len;
    let text = tokenize("the capital of france is paris . the address of alice is 42 oak street .");
    if text.len() < 2 * seq + 1 {
        return Err(Error::Config(format!("context length {seq} is too long for the check batch")));
    }
    let ids: Vec<usize> = text[..2 * seq].to_vec();
    let mut labels: Vec<i64> = text[1..=2 * seq].iter().map(|&t| t as i64).collect();
    // Exercise the ignore mask as well.
    labels[0] = IGNORE_INDEX;
    labels[seq + 1] = IGNORE_INDEX;
    finite_difference_check(
        model.parameters(),
        |tape, leaves| {
            let logits = model.forward_with(tape, leaves, &ids, 2, seq)?;
            tape.cross_entropy_masked(logits, &labels)
        },
        h,
        tol,
    )
}
