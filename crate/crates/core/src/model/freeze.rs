use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::TransformerModel;
use crate::error::{Error, Result};
use crate::grad::Float;

/// Which parameters an optimizer may touch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    #[default]
    AllTrainable,
    /// The top `k` blocks, the final layer norm and the LM head.
    LastKBlocksPlusHead(usize),
}

impl FreezePolicy {
    pub fn top_two() -> Self {
        FreezePolicy::LastKBlocksPlusHead(2)
    }
}

/// Names of the parameters `policy` leaves trainable. Everything else is frozen.
pub fn select_trainable<T: Float>(model: &TransformerModel<T>, policy: FreezePolicy) -> Result<BTreeSet<String>> {
    let names = model.names();
    match policy {
        FreezePolicy::AllTrainable => Ok(names.map(str::to_string).collect()),
        FreezePolicy::LastKBlocksPlusHead(k) => {
            let layers = model.config().n_layers;
            if k > layers {
                return Err(Error::Policy(format!(
                    "cannot unfreeze the last {k} blocks of a {layers}-block model"
                )));
            }
            let first = layers - k;
            let mut out: BTreeSet<String> = names
                .filter(|name| {
                    block_index(name).is_some_and(|i| i >= first)
                        || name.starts_with("final_ln.")
                        || name.starts_with("lm_head.")
                })
                .map(str::to_string)
                .collect();
            if model.config().tie_embeddings {
                log::warn!(
                    "tied embeddings: selecting the LM head also unfreezes token_embedding, \
                     so the bottom of the network is no longer frozen"
                );
                out.insert("token_embedding".to_string());
            }
            Ok(out)
        }
    }
}

fn block_index(name: &str) -> Option<usize> {
    name.strip_prefix("block.")?.split('.').next()?.parse().ok()
}
