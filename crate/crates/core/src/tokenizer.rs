//! WordPiece tokenization and fixed-length input encoding.
//!
//! Words are whitespace-split, ASCII-lowercased, then greedily decomposed
//! into the longest vocabulary pieces; continuations carry the "##" prefix
//! and a word with no decomposition becomes [UNK]. Encodings are
//! [CLS] tokens [SEP] padded with [PAD] to exactly max_len.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Immutable token table. IDs are dense zero-based positions in the file
/// order, so reloading the same file always yields the same mapping.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    /// Builds from an ordered token list, validating the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(prev) = index.insert(tok.clone(), i as u32) {
                return Err(Error::Vocab(format!(
                    "duplicate token {tok:?} at lines {} and {}",
                    prev + 1,
                    i + 1
                )));
            }
        }
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Vocab(format!("missing reserved token {name}")))
        };
        let (pad, unk, cls, sep) = (find(PAD)?, find(UNK)?, find(CLS)?, find(SEP)?);
        Ok(Vocab {
            tokens,
            index,
            pad,
            unk,
            cls,
            sep,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    /// Canonical file serialization: one token per line, LF endings.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            let _ = writeln!(out, "{tok}");
        }
        out
    }

    /// SHA-256 of the canonical serialization, hex encoded. Checkpoints store
    /// this to pin which vocabulary the weights were trained against.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_file_string().as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Maps ids back to text: continuation pieces are glued to the previous
    /// piece, everything else is space-separated. Inverse of
    /// `wordpiece_tokenize` on texts that produced no [UNK].
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let Some(tok) = self.token(id) else { continue };
            if let Some(rest) = tok.strip_prefix(CONTINUATION) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }
}

/// One message ready for the model: ids and mask both exactly max_len long,
/// `mask[i] = 1` iff `i < real_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub real_len: usize,
}

/// Reads a vocabulary file: UTF-8, one token per line, line number = ID.
pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tokens: Vec<String> = raw.lines().map(str::to_owned).collect();
    Vocab::from_tokens(tokens)
}

/// Writes the canonical vocabulary serialization.
pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    fs::write(path, vocab.to_file_string()).map_err(|e| Error::io(path, e))
}

/// Greedy longest-match-first WordPiece over whitespace-split, ASCII-lowered
/// words. Reserved tokens never match message text because "[" words would
/// need the literal bracket in the vocab.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocab) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_ascii_lowercase();
        tokenize_word(&word, vocab, &mut out);
    }
    out
}

fn tokenize_word(word: &str, vocab: &Vocab, out: &mut Vec<String>) {
    let mut pieces = Vec::new();
    let mut start = 0;
    // Char boundaries, so multi-byte text can never split mid-character.
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .skip(1)
        .chain(std::iter::once(word.len()))
        .collect();
    let mut lo = 0; // index into bounds of the first boundary past `start`
    while start < word.len() {
        let mut matched = None;
        for bi in (lo..bounds.len()).rev() {
            let end = bounds[bi];
            let candidate = if start == 0 {
                word[start..end].to_string()
            } else {
                format!("{CONTINUATION}{}", &word[start..end])
            };
            if vocab.token_id(&candidate).is_some() {
                matched = Some((candidate, end, bi + 1));
                break;
            }
        }
        match matched {
            Some((piece, end, next_lo)) => {
                pieces.push(piece);
                start = end;
                lo = next_lo;
            }
            None => {
                // Whole word becomes [UNK] when any position fails.
                out.push(UNK.to_string());
                return;
            }
        }
    }
    out.append(&mut pieces);
}

/// [CLS] + tokens truncated to max_len - 2 + [SEP], padded to max_len.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<Encoding> {
    if max_len < 3 {
        return Err(Error::Config(format!(
            "max_len must be at least 3 (CLS, content, SEP), got {max_len}"
        )));
    }
    let tokens = wordpiece_tokenize(text, vocab);
    let keep = tokens.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id());
    for tok in &tokens[..keep] {
        // Tokenizer output is either a vocab piece or [UNK], both present.
        ids.push(vocab.token_id(tok).unwrap_or_else(|| vocab.unk_id()));
    }
    ids.push(vocab.sep_id());
    let real_len = ids.len();
    ids.resize(max_len, vocab.pad_id());
    let mut mask = vec![0u8; max_len];
    mask[..real_len].fill(1);
    Ok(Encoding {
        ids,
        mask,
        real_len,
    })
}

/// Induces a vocabulary from cleaned texts: the four reserved tokens, then
/// whole words and "##" proper suffixes ranked by descending frequency with
/// lexicographic tie-breaks, cut off at target_size.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Config("build_vocab: empty corpus".into()));
    }
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        for word in text.as_ref().split_whitespace() {
            *word_counts.entry(word.to_ascii_lowercase()).or_default() += 1;
        }
    }

    let mut distinct_chars: std::collections::HashSet<char> = std::collections::HashSet::new();
    for word in word_counts.keys() {
        distinct_chars.extend(word.chars());
    }
    let floor = RESERVED.len() + distinct_chars.len();
    if target_size < floor {
        return Err(Error::Config(format!(
            "target_size {target_size} cannot cover the {} reserved tokens plus {} single characters",
            RESERVED.len(),
            distinct_chars.len()
        )));
    }

    // Candidates: every whole word, plus every proper suffix as a "##" piece.
    // A word contributes its own count to each of its suffixes.
    let mut candidates: HashMap<String, u64> = HashMap::new();
    for (word, &count) in &word_counts {
        *candidates.entry(word.clone()).or_default() += count;
        for (i, _) in word.char_indices().skip(1) {
            let piece = format!("{CONTINUATION}{}", &word[i..]);
            *candidates.entry(piece).or_default() += count;
        }
    }

    let mut ranked: Vec<(String, u64)> = candidates.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(target_size - RESERVED.len())
            .map(|(tok, _)| tok),
    );
    Vocab::from_tokens(tokens)
}
