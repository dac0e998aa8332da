//! Checkpoints, metrics logs and corpus files.

mod checkpoint;
mod jsonl;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use jsonl::{
    append_jsonl, append_metrics, read_corpus, read_jsonl, read_metrics, write_corpus, write_jsonl, MetricsRecord,
};
pub(crate) use checkpoint::write_atomic;
