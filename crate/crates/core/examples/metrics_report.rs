//! Scores a set of (gold, predicted) labels and prints the per-class and
//! averaged table the `eval` subcommand produces.
//!
//! ```bash
//! cargo run --example metrics_report
//! ```

use spamdetect::corpus::Label;
use spamdetect::metrics::{confusion, f1, pairs_from_matrix, report, ConfusionMatrix};

fn main() -> spamdetect::Result<()> {
    // A hypothetical evaluation: 846 spam and 822 ham messages, with 13
    // spam missed and 10 ham flagged.
    let matrix = ConfusionMatrix {
        positive: Label::Spam,
        true_pos: 833,
        false_neg: 13,
        false_pos: 10,
        true_neg: 812,
    };
    let pairs = pairs_from_matrix(&matrix);
    println!("{}", report(&pairs)?.to_table());

    // The same pairs viewed with ham as the positive class.
    let ham_view = confusion(&pairs, Label::Ham)?;
    println!("ham-positive F1: {:.4}", f1(&ham_view));
    Ok(())
}
