//! Verifies the analytic gradients of a small encoder against central
//! finite differences, sampling a few dozen coordinates per tensor.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use spamdetect::corpus::Label;
use spamdetect::gradcheck::{check_model_gradients, Sampling};
use spamdetect::model::{init_params, ModelConfig};
use spamdetect::{build_vocab, encode};

fn main() -> spamdetect::Result<()> {
    let texts = ["win a free prize draw now", "see you at lunch tomorrow"];
    let vocab = build_vocab(&texts, 50)?;
    let config = ModelConfig {
        num_layers: 2,
        hidden_size: 16,
        num_heads: 2,
        ffn_size: 32,
        max_len: 12,
        vocab_size: vocab.len(),
        num_classes: 2,
    };
    let batch = vec![
        (encode(texts[0], &vocab, config.max_len)?, Label::Spam),
        (encode(texts[1], &vocab, config.max_len)?, Label::Ham),
    ];

    let mut params = init_params(&config, 7)?;
    println!("checking a {}-parameter model", params.param_count());
    let summary = check_model_gradients(
        &mut params,
        &batch,
        Sampling::Stratified { per_tensor: 30, seed: 7 },
    )?;
    println!(
        "{} coordinates probed, {} outside tolerance, largest gap {:.2e}",
        summary.checked,
        summary.failures.len(),
        summary.max_abs_diff
    );
    for miss in summary.failures.iter().take(5) {
        println!("  {miss:?}");
    }
    assert!(summary.passed(), "analytic and numeric gradients disagree");
    println!("analytic gradients match finite differences");
    Ok(())
}
