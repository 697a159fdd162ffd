//! Corpus ingestion: cleaning, labeling, the JSONL intermediate format, and
//! the seeded train/eval split.

mod mail;

pub use mail::{load_mail_dirs, MailFormat};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gold label. Ham is 0, spam is 1, everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Ham,
    Spam,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Ham => 0,
            Label::Spam => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Ham),
            1 => Ok(Label::Spam),
            other => Err(Error::Input(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Ham => "ham",
            Label::Spam => "spam",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One cleaned, labeled message. `origin_id` is stable across loads
/// (file name or line number) and anchors the deterministic split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMessage {
    pub text: String,
    pub label: Label,
    pub source: String,
    pub origin_id: String,
}

/// Counts reported by every loader. `skipped` counts files or lines that
/// could not be decoded and were dropped with a warning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub total: usize,
    pub spam: usize,
    pub ham: usize,
    pub skipped: usize,
}

impl LoadReport {
    pub(crate) fn tally(messages: &[LabeledMessage], skipped: usize) -> Self {
        let spam = messages.iter().filter(|m| m.label == Label::Spam).count();
        LoadReport {
            total: messages.len(),
            spam,
            ham: messages.len() - spam,
            skipped,
        }
    }
}

/// Deterministic 90/10-style split keyed by (messages, seed).
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<LabeledMessage>,
    pub eval: Vec<LabeledMessage>,
    pub seed: u64,
    pub eval_fraction: f64,
}

fn url_scheme_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?|ftp)://\S+").unwrap())
}

fn url_www_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(^|\s)www\.\S+").unwrap())
}

/// Cleans one message body: control characters (except LF/TAB) dropped,
/// HTML tags dropped with script/style contents, URLs removed, whitespace
/// collapsed, result trimmed. Idempotent.
pub fn clean_text(raw: &str) -> String {
    let no_ctrl: String = raw
        .chars()
        .filter(|&c| !c.is_control() || c == '\n' || c == '\t')
        .collect();
    let no_tags = strip_html(&no_ctrl);
    let no_scheme = url_scheme_re().replace_all(&no_tags, " ");
    let no_urls = url_www_re().replace_all(&no_scheme, "$1");
    no_urls.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Small state machine over '<' .. '>' spans. A tag opens only when '<' is
/// followed by a letter, '/', '!' or '?', so lone '<' stays literal text.
/// Each dropped span becomes one space; script/style/comment contents are
/// dropped wholesale.
fn strip_html(text: &str) -> String {
    enum State {
        Text,
        Tag { buf: String },
        Raw { closer: &'static str },
    }
    let mut out = String::with_capacity(text.len());
    let mut state = State::Text;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match &mut state {
            State::Text => {
                let opens_tag = c == '<'
                    && matches!(chars.get(i + 1), Some(n) if n.is_ascii_alphabetic() || *n == '/' || *n == '!' || *n == '?');
                if opens_tag {
                    state = State::Tag { buf: String::new() };
                } else {
                    out.push(c);
                }
                i += 1;
            }
            State::Tag { buf } => {
                if c == '>' {
                    let lower = buf.to_ascii_lowercase();
                    let name = lower.trim_start_matches(['/', '!', '?']);
                    state = if lower.starts_with("!--") && !lower.ends_with("--") {
                        State::Raw { closer: "-->" }
                    } else if !lower.starts_with('/') && first_word(name) == "script" {
                        State::Raw { closer: "</script" }
                    } else if !lower.starts_with('/') && first_word(name) == "style" {
                        State::Raw { closer: "</style" }
                    } else {
                        State::Text
                    };
                    if matches!(state, State::Text) {
                        out.push(' ');
                    }
                    i += 1;
                } else {
                    buf.push(c);
                    i += 1;
                }
            }
            State::Raw { closer } => {
                let rest: String = chars[i..].iter().collect();
                let lower = rest.to_ascii_lowercase();
                if let Some(pos) = lower.find(*closer) {
                    let after = i + lower[..pos].chars().count() + closer.len();
                    if closer.ends_with('>') {
                        i = after;
                    } else {
                        // "</script" still needs its own '>' consumed.
                        let skip = chars[after..].iter().position(|&c| c == '>').map(|p| after + p + 1);
                        i = skip.unwrap_or(chars.len());
                    }
                } else {
                    i = chars.len();
                }
                out.push(' ');
                state = State::Text;
            }
        }
    }
    // An unterminated tag swallows the rest of the line, like browsers do.
    out
}

fn first_word(s: &str) -> &str {
    s.split(|c: char| c.is_whitespace() || c == '/' || c == '>')
        .next()
        .unwrap_or("")
}

/// Loads the tab-separated SMS format: `<label>\t<text>` per line.
/// Lines without a tab are skipped and counted; unknown labels abort.
pub fn load_sms_collection(path: &Path) -> Result<(Vec<LabeledMessage>, LoadReport)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut messages = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, text)) = line.split_once('\t') else {
            skipped += 1;
            continue;
        };
        let label = match label.trim() {
            "ham" => Label::Ham,
            "spam" => Label::Spam,
            other => {
                return Err(Error::Corpus(format!(
                    "unknown label {other:?} on line {line_no} of {}",
                    path.display()
                )))
            }
        };
        messages.push(LabeledMessage {
            text: clean_text(text),
            label,
            source: "sms".into(),
            origin_id: format!("sms:{line_no:06}"),
        });
    }
    let report = LoadReport::tally(&messages, skipped);
    Ok((messages, report))
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    label: u8,
    text: String,
    source: String,
}

/// Writes the canonical intermediate format: one JSON object per line with
/// fields id, label, text, source.
pub fn save_jsonl(messages: &[LabeledMessage], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for m in messages {
        let record = JsonRecord {
            id: m.origin_id.clone(),
            label: m.label.index() as u8,
            text: m.text.clone(),
            source: m.source.clone(),
        };
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| Error::Corpus(format!("serializing {}: {e}", m.origin_id)))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: &Path) -> Result<Vec<LabeledMessage>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut messages = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("bad record on line {} of {}: {e}", i + 1, path.display())))?;
        messages.push(LabeledMessage {
            text: record.text,
            label: Label::from_index(record.label as usize)?,
            source: record.source,
            origin_id: record.id,
        });
    }
    Ok(messages)
}

/// Evaluation size: ceil(fraction * N), with f64 noise snapped to the exact
/// mathematical value so e.g. 0.1 * 10 stays 1, not ceil(1.0000000000000002).
fn eval_count(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// Shuffles messages (canonicalized by origin_id) with a seeded PRNG and
/// takes the first ceil(fraction * N) for evaluation. Unstratified.
pub fn split_train_eval(
    messages: Vec<LabeledMessage>,
    eval_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    if messages.is_empty() {
        return Err(Error::Config("split: no messages".into()));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Config(format!(
            "eval_fraction must be in (0, 1), got {eval_fraction}"
        )));
    }
    let n = messages.len();
    let k = eval_count(n, eval_fraction);
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "eval_fraction {eval_fraction} leaves an empty split for {n} messages"
        )));
    }
    let mut ordered = messages;
    // Loaders may produce any order; the split must not depend on it.
    ordered.sort_by(|a, b| a.origin_id.cmp(&b.origin_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);
    let train = ordered.split_off(k);
    Ok(CorpusSplit {
        train,
        eval: ordered,
        seed,
        eval_fraction,
    })
}

/// Streams messages to a writer in the intermediate format; used by the CLI
/// so output goes through one code path whether to file or stdout.
pub fn write_jsonl<W: Write>(messages: &[LabeledMessage], mut w: W) -> Result<()> {
    for m in messages {
        let record = JsonRecord {
            id: m.origin_id.clone(),
            label: m.label.index() as u8,
            text: m.text.clone(),
            source: m.source.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Corpus(format!("serializing {}: {e}", m.origin_id)))?;
        writeln!(w, "{line}").map_err(|e| Error::Corpus(format!("write failed: {e}")))?;
    }
    Ok(())
}
