//! The full pipeline on a tab-separated SMS corpus: load, split, build a
//! vocabulary, train at the desk preset, and score the held-out slice.
//!
//! Runs on the bundled fixture by default; pass a path to train on a real
//! corpus such as the SMS Spam Collection.
//!
//! ```bash
//! cargo run --release --example train_sms [-- /path/to/corpus.tsv]
//! ```

use std::path::PathBuf;

use spamdetect::build_vocab;
use spamdetect::corpus::{load_sms_collection, split_train_eval};
use spamdetect::metrics::report;
use spamdetect::model::ModelConfig;
use spamdetect::trainer::{evaluate, train, TrainConfig};

fn main() -> spamdetect::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sms_small.tsv")
    });
    let (messages, load) = load_sms_collection(&path)?;
    println!("{} total / {} spam / {} ham from {}", load.total, load.spam, load.ham, path.display());

    let split = split_train_eval(messages, 0.1, 0)?;
    println!("{} train / {} eval", split.train.len(), split.eval.len());

    let texts: Vec<&str> = split.train.iter().map(|m| m.text.as_str()).collect();
    let vocab = build_vocab(&texts, 4000)?;
    println!("{} vocabulary tokens\n", vocab.len());

    let model_cfg = ModelConfig::desk(vocab.len());
    let train_cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let checkpoint = train(
        &split.train,
        &vocab,
        &model_cfg,
        &train_cfg,
        Some(&split.eval),
        |log| match log.eval_f1_weighted {
            Some(f1) => {
                println!("epoch {:>2}  mean loss {:.4}  eval F1 {f1:.4}", log.epoch, log.mean_loss)
            }
            None => println!("epoch {:>2}  mean loss {:.4}", log.epoch, log.mean_loss),
        },
    )?;

    let pairs = evaluate(&checkpoint, &split.eval, &vocab)?;
    println!("\n{}", report(&pairs)?.to_table());
    Ok(())
}
