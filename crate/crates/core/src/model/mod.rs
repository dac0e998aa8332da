//! The decoder-only transformer, greedy decoding and freeze policies.

mod config;
mod decode;
mod freeze;
mod gradcheck;
mod transformer;

pub use config::ModelConfig;
pub use decode::argmax;
pub use freeze::{select_trainable, FreezePolicy};
pub use gradcheck::check_model_gradients;
pub use transformer::{Forward, TransformerModel, INIT_STD};
