//! Directory loaders for the email corpora.
//!
//! `RawEmail` parses RFC-822-style files: headers are unfolded, the Subject
//! is kept, and the body is the first text/plain part (multipart walked
//! recursively, quoted-printable and base64 decoded). HTML-only mail falls
//! back to the tag-stripped text/html part. `PlainText` is the Ling-Spam
//! layout: a "Subject:" line, a blank line, then the body.
//!
//! Files that cannot be decoded as UTF-8 text are skipped and counted, never
//! guessed at.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;

use crate::error::{Error, Result};

use super::{clean_text, LabeledMessage, Label, LoadReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MailFormat {
    RawEmail,
    PlainText,
}

/// Loads every file under the two directories, labeling by directory.
/// Either directory being empty is a load error; an undecodable file is
/// skipped with a warning count.
pub fn load_mail_dirs(
    spam_dir: &Path,
    ham_dir: &Path,
    format: MailFormat,
) -> Result<(Vec<LabeledMessage>, LoadReport)> {
    let mut messages = Vec::new();
    let mut skipped = 0usize;
    for (dir, label, tag) in [(spam_dir, Label::Spam, "spam"), (ham_dir, Label::Ham, "ham")] {
        let files = list_files(dir)?;
        if files.is_empty() {
            return Err(Error::Corpus(format!("no files in {}", dir.display())));
        }
        for path in files {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            match extract_text(&path, format) {
                Some(text) => messages.push(LabeledMessage {
                    text,
                    label,
                    source: "email".into(),
                    origin_id: format!("{tag}/{name}"),
                }),
                None => skipped += 1,
            }
        }
    }
    let report = LoadReport::tally(&messages, skipped);
    Ok((messages, report))
}

/// Regular files directly under `dir`, sorted by name for stable origin ids.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn extract_text(path: &Path, format: MailFormat) -> Option<String> {
    let bytes = fs::read(path).ok()?;
    match format {
        MailFormat::PlainText => {
            let raw = String::from_utf8(bytes).ok()?;
            let mut lines = raw.lines();
            let first = lines.next().unwrap_or("");
            let subject = first.strip_prefix("Subject:").unwrap_or(first).trim();
            let body: Vec<&str> = lines.collect();
            Some(clean_text(&format!("{subject} {}", body.join(" "))))
        }
        MailFormat::RawEmail => {
            let parsed = parse_message(&bytes)?;
            Some(clean_text(&format!("{} {}", parsed.subject, parsed.body)))
        }
    }
}

struct ParsedMail {
    subject: String,
    body: String,
}

/// Header block + decoded preferred body part of one message.
fn parse_message(bytes: &[u8]) -> Option<ParsedMail> {
    let (headers, body) = split_headers(bytes);
    let headers = parse_headers(headers)?;
    let subject = headers.get("subject").cloned().unwrap_or_default();
    let body = decode_part(&headers, body, 0)?;
    Some(ParsedMail { subject, body })
}

/// Splits at the first blank line. A file with no blank line is all headers.
fn split_headers(bytes: &[u8]) -> (&[u8], &[u8]) {
    let mut i = 0;
    while i < bytes.len() {
        let line_end = bytes[i..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| i + p)
            .unwrap_or(bytes.len());
        let line = &bytes[i..line_end];
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.is_empty() {
            return (&bytes[..i], &bytes[(line_end + 1).min(bytes.len())..]);
        }
        i = line_end + 1;
        if i >= bytes.len() {
            break;
        }
    }
    (bytes, &[])
}

/// Lowercased name -> unfolded value. Headers must be valid UTF-8.
fn parse_headers(bytes: &[u8]) -> Option<HashMap<String, String>> {
    let text = std::str::from_utf8(bytes).ok()?;
    let mut headers: HashMap<String, String> = HashMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if line.starts_with(' ') || line.starts_with('\t') {
            // Folded continuation of the previous header.
            if let Some(name) = &current {
                if let Some(v) = headers.get_mut(name) {
                    v.push(' ');
                    v.push_str(line.trim());
                }
            }
            continue;
        }
        let Some((name, value)) = line.split_once(':') else {
            current = None;
            continue;
        };
        let name = name.trim().to_ascii_lowercase();
        // First occurrence wins; duplicated Subject lines exist in the wild.
        headers.entry(name.clone()).or_insert_with(|| value.trim().to_string());
        current = Some(name);
    }
    Some(headers)
}

fn header_main(value: &str) -> String {
    value
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase()
}

fn header_param(value: &str, name: &str) -> Option<String> {
    for piece in value.split(';').skip(1) {
        let (k, v) = piece.split_once('=')?;
        if k.trim().eq_ignore_ascii_case(name) {
            return Some(v.trim().trim_matches('"').to_string());
        }
    }
    None
}

const MAX_MIME_DEPTH: usize = 5;

/// Decodes one entity's body to text, descending into multiparts. Prefers
/// text/plain anywhere in the tree, falls back to text/html.
fn decode_part(headers: &HashMap<String, String>, body: &[u8], depth: usize) -> Option<String> {
    if depth > MAX_MIME_DEPTH {
        return None;
    }
    let content_type = headers.get("content-type").map(String::as_str).unwrap_or("text/plain");
    let main = header_main(content_type);

    if main.starts_with("multipart/") {
        let boundary = header_param(content_type, "boundary")?;
        let parts = split_multipart(body, &boundary);
        let mut html_fallback = None;
        for part in parts {
            let (head, part_body) = split_headers(part);
            let Some(part_headers) = parse_headers(head) else { continue };
            let part_type = header_main(
                part_headers.get("content-type").map(String::as_str).unwrap_or("text/plain"),
            );
            if part_type.starts_with("multipart/") {
                if let Some(text) = decode_part(&part_headers, part_body, depth + 1) {
                    return Some(text);
                }
            } else if part_type == "text/plain" {
                if let Some(text) = decode_leaf(&part_headers, part_body) {
                    return Some(text);
                }
            } else if part_type == "text/html" && html_fallback.is_none() {
                html_fallback = decode_leaf(&part_headers, part_body);
            }
        }
        return html_fallback;
    }

    // Unlabeled or odd types are treated as plain text; binary content fails
    // the UTF-8 check and skips the file.
    decode_leaf(headers, body)
}

/// Transfer decoding + strict UTF-8 for a non-multipart entity.
fn decode_leaf(headers: &HashMap<String, String>, body: &[u8]) -> Option<String> {
    let encoding = headers
        .get("content-transfer-encoding")
        .map(|v| header_main(v))
        .unwrap_or_default();
    let bytes = match encoding.as_str() {
        "base64" => {
            let compact: Vec<u8> = body.iter().copied().filter(|b| !b.is_ascii_whitespace()).collect();
            base64::engine::general_purpose::STANDARD.decode(&compact).ok()?
        }
        "quoted-printable" => decode_quoted_printable(body),
        _ => body.to_vec(),
    };
    String::from_utf8(bytes).ok()
}

/// RFC 2045 body decoding: =XX hex escapes and soft line breaks ("=\n").
fn decode_quoted_printable(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len());
    let mut i = 0;
    while i < body.len() {
        let b = body[i];
        if b != b'=' {
            out.push(b);
            i += 1;
            continue;
        }
        let rest = &body[i + 1..];
        if rest.starts_with(b"\r\n") {
            i += 3;
        } else if rest.first() == Some(&b'\n') {
            i += 2;
        } else if rest.len() >= 2 {
            match u8::from_str_radix(std::str::from_utf8(&rest[..2]).unwrap_or("zz"), 16) {
                Ok(v) => {
                    out.push(v);
                    i += 3;
                }
                Err(_) => {
                    out.push(b);
                    i += 1;
                }
            }
        } else {
            out.push(b);
            i += 1;
        }
    }
    out
}

/// Slices the regions between "--boundary" delimiter lines, stopping at the
/// closing "--boundary--".
fn split_multipart<'a>(body: &'a [u8], boundary: &str) -> Vec<&'a [u8]> {
    let delim = format!("--{boundary}");
    let mut parts = Vec::new();
    let mut current_start: Option<usize> = None;
    let mut i = 0;
    while i <= body.len() {
        let line_end = body[i..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| i + p)
            .unwrap_or(body.len());
        let line = &body[i..line_end];
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.starts_with(delim.as_bytes()) {
            if let Some(start) = current_start {
                parts.push(&body[start..i]);
            }
            let closing = line[delim.len()..].starts_with(b"--");
            if closing {
                return parts;
            }
            current_start = Some(line_end + 1);
        }
        if line_end >= body.len() {
            break;
        }
        i = line_end + 1;
    }
    if let Some(start) = current_start {
        if start <= body.len() {
            parts.push(&body[start..]);
        }
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, files: &[(&str, &[u8])]) {
        fs::create_dir_all(dir).unwrap();
        for (name, contents) in files {
            fs::write(dir.join(name), contents).unwrap();
        }
    }

    #[test]
    fn raw_email_subject_plus_body() {
        let tmp = tempfile::tempdir().unwrap();
        let spam = tmp.path().join("spam");
        let ham = tmp.path().join("ham");
        write_files(&spam, &[("0001.txt", b"Subject: deal\n\nbuy cheap meds\n")]);
        write_files(&ham, &[("0001.txt", b"Subject: hi\n\nbody text\n")]);
        let (messages, report) = load_mail_dirs(&spam, &ham, MailFormat::RawEmail).unwrap();
        assert_eq!(report, LoadReport { total: 2, spam: 1, ham: 1, skipped: 0 });
        let ham_msg = messages.iter().find(|m| m.label == Label::Ham).unwrap();
        assert_eq!(ham_msg.text, "hi body text");
        assert_eq!(ham_msg.origin_id, "ham/0001.txt");
    }

    #[test]
    fn plain_text_mode_joins_subject_and_lines() {
        let tmp = tempfile::tempdir().unwrap();
        let spam = tmp.path().join("spam");
        let ham = tmp.path().join("ham");
        write_files(&spam, &[("s1.txt", b"Subject: money\n\nfree money now\n")]);
        write_files(
            &ham,
            &[("h1.txt", b"Subject: job posting\n\nlinguistics position open\n")],
        );
        let (messages, _) = load_mail_dirs(&spam, &ham, MailFormat::PlainText).unwrap();
        let ham_msg = messages.iter().find(|m| m.label == Label::Ham).unwrap();
        assert_eq!(ham_msg.label, Label::Ham);
        assert_eq!(ham_msg.text, "job posting linguistics position open");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let spam = tmp.path().join("spam");
        let ham = tmp.path().join("ham");
        fs::create_dir_all(&spam).unwrap();
        write_files(&ham, &[("h1.txt", b"Subject: x\n\ny\n")]);
        let err = load_mail_dirs(&spam, &ham, MailFormat::RawEmail).unwrap_err();
        assert!(matches!(err, Error::Corpus(_)), "{err}");
    }

    #[test]
    fn undecodable_files_are_skipped_and_counted() {
        let tmp = tempfile::tempdir().unwrap();
        let spam = tmp.path().join("spam");
        let ham = tmp.path().join("ham");
        write_files(&spam, &[("bad.bin", &[0xff, 0xfe, 0x80, 0x81][..]), ("ok.txt", b"Subject: a\n\nb\n")]);
        write_files(&ham, &[("h.txt", b"Subject: c\n\nd\n")]);
        let (messages, report) = load_mail_dirs(&spam, &ham, MailFormat::RawEmail).unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.total, 2);
        assert_eq!(messages.len(), 2);
    }

    #[test]
    fn quoted_printable_bodies_decode() {
        let raw = b"Subject: qp test\nContent-Transfer-Encoding: quoted-printable\n\ncaf=C3=A9 time=\nless\n";
        let parsed = parse_message(raw).unwrap();
        assert_eq!(parsed.body.trim(), "caf\u{e9} timeless");
    }

    #[test]
    fn base64_bodies_decode() {
        let encoded = base64::engine::general_purpose::STANDARD.encode("hidden offer inside");
        let raw = format!("Subject: b64\nContent-Transfer-Encoding: base64\n\n{encoded}\n");
        let parsed = parse_message(raw.as_bytes()).unwrap();
        assert_eq!(parsed.body.trim(), "hidden offer inside");
    }

    #[test]
    fn multipart_takes_first_text_plain() {
        let raw = b"Subject: multi\nContent-Type: multipart/alternative; boundary=\"XY\"\n\n\
preamble ignored\n\
--XY\nContent-Type: text/html\n\n<b>rich</b>\n\
--XY\nContent-Type: text/plain\n\nplain wins\n\
--XY--\ntrailer ignored\n";
        let parsed = parse_message(raw).unwrap();
        assert_eq!(parsed.body.trim(), "plain wins");
    }

    #[test]
    fn html_only_mail_falls_back_to_stripped_html() {
        let raw = b"Subject: html\nContent-Type: multipart/alternative; boundary=ZZ\n\n\
--ZZ\nContent-Type: text/html\n\n<p>only html here</p>\n\
--ZZ--\n";
        let parsed = parse_message(raw).unwrap();
        assert!(parsed.body.contains("only html here"), "{}", parsed.body);

        let tmp = tempfile::tempdir().unwrap();
        let spam = tmp.path().join("spam");
        let ham = tmp.path().join("ham");
        write_files(&spam, &[("h.eml", &raw[..])]);
        write_files(&ham, &[("x.eml", b"Subject: a\n\nb\n")]);
        let (messages, _) = load_mail_dirs(&spam, &ham, MailFormat::RawEmail).unwrap();
        let spam_msg = messages.iter().find(|m| m.label == Label::Spam).unwrap();
        assert_eq!(spam_msg.text, "html only html here");
    }

    #[test]
    fn nested_multipart_is_walked() {
        let raw = b"Subject: nested\nContent-Type: multipart/mixed; boundary=OUTER\n\n\
--OUTER\nContent-Type: multipart/alternative; boundary=INNER\n\n\
--INNER\nContent-Type: text/plain\n\ndeep text\n\
--INNER--\n\
--OUTER--\n";
        let parsed = parse_message(raw).unwrap();
        assert_eq!(parsed.body.trim(), "deep text");
    }

    #[test]
    fn folded_headers_unfold() {
        let raw = b"Subject: first part\n continues here\n\nbody\n";
        let parsed = parse_message(raw).unwrap();
        assert_eq!(parsed.subject, "first part continues here");
    }
}
