//! Command-history corpora: event/user types, JSONL serialization, the
//! synthetic generator, and train/val/test splitting.

pub mod generate;
pub mod jsonl;
pub mod split;
pub mod types;

pub use generate::{generate_synthetic, GenConfig, Generated};
pub use jsonl::{
    read_corpus_jsonl, read_fingerprint, read_labels_jsonl, read_sessions_jsonl,
    write_corpus_jsonl, write_corpus_tagged, write_labels_jsonl, write_labels_tagged,
    write_sessions_jsonl, write_sessions_tagged,
};
pub use split::{split, subsample_labels, SplitRatios, SplitSpec, Splits};
pub use types::{CommandEvent, Corpus, LabeledTask, SessionTruth, UserSequence};
