//! Shows that checkpoints restore bit-for-bit: train, save, load, compare
//! digests, then continue training the loaded and the in-memory copies and
//! compare again.
//!
//! ```bash
//! cargo run --release --example checkpoint_roundtrip
//! ```

use std::path::Path;

use spamdetect::build_vocab;
use spamdetect::corpus::load_sms_collection;
use spamdetect::model::ModelConfig;
use spamdetect::trainer::{continue_training, load_checkpoint, save_checkpoint, train, TrainConfig};

fn main() -> spamdetect::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sms_small.tsv");
    let (messages, _) = load_sms_collection(&path)?;
    let texts: Vec<&str> = messages.iter().map(|m| m.text.as_str()).collect();
    let vocab = build_vocab(&texts, 300)?;

    let model_cfg = ModelConfig::desk(vocab.len());
    let train_cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let trained = train(&messages, &vocab, &model_cfg, &train_cfg, None, |_| {})?;

    let dir = std::env::temp_dir().join(format!("spamdetect-example-{}", std::process::id()));
    save_checkpoint(&trained, &dir)?;
    let loaded = load_checkpoint(&dir)?;
    println!("saved digest  {}", trained.params.digest());
    println!("loaded digest {}", loaded.params.digest());
    assert_eq!(trained, loaded, "round-trip must be exact");

    // Both copies resume on the identical trajectory.
    let resumed_a = continue_training(trained, &messages, &vocab, 2, None, |log| {
        println!("epoch {}  mean loss {:.4}", log.epoch, log.mean_loss);
    })?;
    let resumed_b = continue_training(loaded, &messages, &vocab, 2, None, |_| {})?;
    assert_eq!(resumed_a.params.digest(), resumed_b.params.digest());
    println!("resumed digests agree after 2 more epochs");

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
