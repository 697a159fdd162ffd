//! Trains briefly on the bundled fixture and classifies a few new texts,
//! printing the label and winning-class probability for each.
//!
//! ```bash
//! cargo run --release --example classify
//! ```

use std::path::Path;

use spamdetect::build_vocab;
use spamdetect::corpus::{clean_text, load_sms_collection};
use spamdetect::model::{classify, ModelConfig};
use spamdetect::trainer::{train, TrainConfig};

fn main() -> spamdetect::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sms_small.tsv");
    let (messages, _) = load_sms_collection(&path)?;
    let texts: Vec<&str> = messages.iter().map(|m| m.text.as_str()).collect();
    let vocab = build_vocab(&texts, 400)?;

    let model_cfg = ModelConfig::desk(vocab.len());
    let train_cfg = TrainConfig {
        epochs: 25,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    eprintln!("training on {} messages...", messages.len());
    let checkpoint = train(&messages, &vocab, &model_cfg, &train_cfg, None, |_| {})?;

    let samples = [
        "WINNER!! You have been selected for a free prize, call now to claim",
        "hey are we still on for lunch tomorrow?",
        "URGENT: your account has won a weekly cash draw, reply to collect",
        "running a bit late, see you at the station",
    ];
    for text in samples {
        let decision = classify(&checkpoint.params, &clean_text(text), &vocab)?;
        println!("{}\t{:.4}\t{text}", decision.label, decision.confidence());
    }
    Ok(())
}
