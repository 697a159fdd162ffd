//! Builds a vocabulary from a small corpus, then walks one message through
//! subword tokenization and fixed-length encoding.
//!
//! ```bash
//! cargo run --example tokenize
//! ```

use spamdetect::{build_vocab, encode, wordpiece_tokenize};

fn main() -> spamdetect::Result<()> {
    let corpus = [
        "win a free prize now",
        "free entry in a weekly draw",
        "call now to claim your winnings",
        "are we meeting for lunch",
        "running late see you soon",
    ];
    let vocab = build_vocab(&corpus, 160)?;
    println!("vocabulary of {} tokens built from {} texts", vocab.len(), corpus.len());

    let text = "Winner! Claim your FREE prize draws now";
    let pieces = wordpiece_tokenize(text, &vocab);
    println!("\n{text:?}");
    println!("pieces: {pieces:?}");

    let encoding = encode(text, &vocab, 16)?;
    println!("ids:    {:?}", encoding.ids);
    println!("mask:   {:?}", encoding.mask);
    println!("real length {} of {}", encoding.real_len, encoding.ids.len());

    // Dropping the wrapper and padding IDs recovers the cleaned text.
    let inner = &encoding.ids[1..encoding.real_len - 1];
    println!("decoded: {:?}", vocab.decode(inner));
    Ok(())
}
