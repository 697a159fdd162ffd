//! Memorizes the bundled 64-message fixture with the desk preset, printing
//! the loss curve and the final training-set accuracy. A model that cannot
//! drive its training loss to zero on 64 messages has a bug somewhere.
//!
//! ```bash
//! cargo run --release --example overfit_tiny
//! ```

use std::path::Path;

use spamdetect::build_vocab;
use spamdetect::corpus::load_sms_collection;
use spamdetect::model::ModelConfig;
use spamdetect::trainer::{evaluate, train, TrainConfig};

fn main() -> spamdetect::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sms_small.tsv");
    let (messages, _) = load_sms_collection(&path)?;
    let texts: Vec<&str> = messages.iter().map(|m| m.text.as_str()).collect();
    let vocab = build_vocab(&texts, 400)?;

    let model_cfg = ModelConfig::desk(vocab.len());
    let train_cfg = TrainConfig {
        epochs: 40,
        learning_rate: 1e-3, // memorization rate for this tiny set
        ..TrainConfig::default()
    };
    let checkpoint = train(&messages, &vocab, &model_cfg, &train_cfg, None, |log| {
        if log.epoch % 5 == 0 || log.epoch == 1 {
            println!("epoch {:>3}  mean loss {:.4}", log.epoch, log.mean_loss);
        }
    })?;

    let pairs = evaluate(&checkpoint, &messages, &vocab)?;
    let correct = pairs.iter().filter(|(gold, pred)| gold == pred).count();
    println!("\ntraining-set accuracy: {correct}/{} messages", pairs.len());
    Ok(())
}
