//! Spam/ham text classification from scratch: a WordPiece tokenizer, a
//! transformer encoder with tape-based reverse-mode differentiation, an
//! Adam training loop with restartable checkpoints, corpus loaders for the
//! common public spam datasets, and the usual precision/recall/F1 report.
//!
//! Everything is deterministic: the same seed, data, and settings produce
//! bitwise-identical parameters, checkpoints, and scores.
//!
//! ## Examples
//!
//! The `examples/` directory is the guided tour, one program per
//! capability:
//!
//! - **`tokenize`** - Build a vocabulary, split text into subword pieces,
//!   encode to fixed-length IDs
//! - **`metrics_report`** - Score (gold, predicted) pairs and print the
//!   per-class table
//! - **`gradient_check`** - Verify analytic gradients against finite
//!   differences
//! - **`overfit_tiny`** - Memorize the bundled 64-message fixture, the
//!   classic sanity check for the whole training stack
//! - **`train_sms`** - The full pipeline: load, split, train, evaluate
//! - **`classify`** - Train briefly, then label new texts with confidences
//! - **`checkpoint_roundtrip`** - Save, reload, and resume training on an
//!   identical trajectory
//!
//! ```bash
//! cargo run --example tokenize
//! cargo run --example metrics_report
//! cargo run --example gradient_check
//! cargo run --release --example overfit_tiny
//! cargo run --release --example train_sms [-- /path/to/corpus.tsv]
//! cargo run --release --example classify
//! cargo run --release --example checkpoint_roundtrip
//! ```
//!
//! ## Library layout
//!
//! - [`tokenizer`]: vocabulary construction, greedy longest-match subword
//!   tokenization, fixed-length encoding
//! - [`corpus`]: loaders for tab-separated SMS and mail-directory corpora,
//!   JSON-lines persistence, the deterministic train/eval split
//! - [`tensor`]: the autodiff tape and its operations
//! - [`model`]: encoder configuration, initialization, forward pass,
//!   classification
//! - [`gradcheck`]: finite-difference verification of the backward pass
//! - [`trainer`]: Adam updates, the epoch loop, checkpoint save/load/resume
//! - [`metrics`]: confusion matrices, precision/recall/F1, report tables
//! - [`cli`]: the `spamdetect` binary's subcommands, also callable as
//!   functions
//!
//! The same pipeline is available from the command line:
//!
//! ```bash
//! spamdetect prepare --format sms --in corpus.tsv --out prepared.jsonl
//! spamdetect build-vocab --data prepared.jsonl --size 4000 --out vocab.txt
//! spamdetect train --preset desk --data prepared.jsonl --vocab vocab.txt --out ckpt
//! spamdetect eval --checkpoint ckpt --vocab vocab.txt --data ckpt/eval_split.jsonl
//! spamdetect classify --checkpoint ckpt --vocab vocab.txt --text "free prize, call now"
//! ```

pub mod cli;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{clean_text, split_train_eval, Label, LabeledMessage};
pub use error::{Error, Result};
pub use metrics::{report, ClassReport, ConfusionMatrix};
pub use model::{classify, init_params, Classification, ModelConfig, ModelParams};
pub use tensor::{Gradients, Tape, Tensor, TensorId};
pub use tokenizer::{build_vocab, encode, load_vocab, save_vocab, wordpiece_tokenize, Encoding, Vocab};
pub use trainer::{
    continue_training, evaluate, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig,
};
