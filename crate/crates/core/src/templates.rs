//! Extraction of stage-1 query templates from raw LLM output.
//!
//! The LLM is asked for a bracketed list of quoted strings inside a
//! triple-backtick fence. The text is scanned with a small lexer and never
//! evaluated.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normalize_key, template_id_for, QueryTemplate, PLACEHOLDER};

static PLACEHOLDER_FORMS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\{\s*(?:class(?:[\s_-]*name)?)?\s*\}|<\s*class[\s_-]*name\s*>").unwrap()
});

const FENCE: &str = "```";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("input is empty")]
    EmptyInput,
    #[error("no bracketed list of quoted strings found")]
    NoListFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    PlaceholderCount,
    Duplicate,
    Empty,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::PlaceholderCount => "placeholder-count",
            RejectReason::Duplicate => "duplicate",
            RejectReason::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub raw: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub templates: Vec<QueryTemplate>,
    pub rejected: Vec<Rejected>,
    /// Byte range of the matched list (brackets included) in the input.
    pub source_region: Range<usize>,
}

impl ParseReport {
    pub fn n_literals(&self) -> usize {
        self.templates.len() + self.rejected.len()
    }
}

/// Rewrites every accepted placeholder spelling to `{}`.
pub fn normalize_placeholders(text: &str) -> String {
    PLACEHOLDER_FORMS.replace_all(text, PLACEHOLDER).into_owned()
}

/// True when `text` holds a placeholder spelled other than `{}`.
pub fn has_alternate_placeholder(text: &str) -> bool {
    PLACEHOLDER_FORMS
        .find_iter(text)
        .any(|m| m.as_str() != PLACEHOLDER)
}

pub fn extract_templates(raw: &str) -> Result<ParseReport, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let region = fenced_region(raw).unwrap_or(0..raw.len());
    let (span, literals) = find_list(raw, region).ok_or(ParseError::NoListFound)?;

    let mut seen = HashSet::new();
    let mut templates = Vec::new();
    let mut rejected = Vec::new();
    for literal in literals {
        let text = normalize_placeholders(literal.trim());
        let reason = if text.matches(PLACEHOLDER).count() != 1 {
            Some(RejectReason::PlaceholderCount)
        } else if text.replace(PLACEHOLDER, "").trim().is_empty() {
            Some(RejectReason::Empty)
        } else if !seen.insert(normalize_key(&text)) {
            Some(RejectReason::Duplicate)
        } else {
            None
        };
        match reason {
            Some(reason) => rejected.push(Rejected {
                raw: literal,
                reason,
            }),
            None => templates.push(QueryTemplate {
                template_id: template_id_for(&text),
                text,
            }),
        }
    }
    Ok(ParseReport {
        templates,
        rejected,
        source_region: span,
    })
}

/// Canonical fenced list, one double-quoted literal per line.
pub fn serialize_templates(templates: &[QueryTemplate]) -> String {
    if templates.is_empty() {
        return format!("{FENCE}\n[]\n{FENCE}");
    }
    let body = templates
        .iter()
        .map(|t| format!("    \"{}\"", escape(&t.text)))
        .collect::<Vec<_>>()
        .join(",\n");
    format!("{FENCE}\n[\n{body}\n]\n{FENCE}")
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '`' => out.push_str("\\x60"),
            c => out.push(c),
        }
    }
    out
}

/// Contents of the first fenced block, skipping the info string line.
fn fenced_region(raw: &str) -> Option<Range<usize>> {
    let open = raw.find(FENCE)?;
    let after = open + FENCE.len();
    let start = match raw[after..].find('\n') {
        Some(nl) => after + nl + 1,
        None => raw.len(),
    };
    let end = raw[start..]
        .find(FENCE)
        .map_or(raw.len(), |close| start + close);
    Some(start..end)
}

/// First `[ "..", '..', ... ]` inside `region`, with its byte span.
fn find_list(raw: &str, region: Range<usize>) -> Option<(Range<usize>, Vec<String>)> {
    let bytes = raw.as_bytes();
    let mut pos = region.start;
    while pos < region.end {
        let open = pos + raw[pos..region.end].find('[')?;
        if let Some((close, literals)) = lex_list(bytes, open, region.end) {
            return Some((open..close + 1, literals));
        }
        pos = open + 1;
    }
    None
}

#[derive(Clone, Copy)]
enum Expect {
    ItemOrClose,
    CommaOrClose,
}

/// Lexes a list starting at `bytes[open] == b'['`. Returns the index of the
/// closing bracket and the decoded literals.
fn lex_list(bytes: &[u8], open: usize, end: usize) -> Option<(usize, Vec<String>)> {
    let mut i = open + 1;
    let mut literals = Vec::new();
    let mut state = Expect::ItemOrClose;
    while i < end {
        let b = bytes[i];
        match (state, b) {
            (_, b' ' | b'\t' | b'\r' | b'\n') => i += 1,
            (_, b'#') => {
                // Python-style line comment inside the list.
                while i < end && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            (_, b']') => return Some((i, literals)),
            (Expect::ItemOrClose, b'"' | b'\'') => {
                let (literal, next) = lex_string(bytes, i, end)?;
                literals.push(literal);
                i = next;
                state = Expect::CommaOrClose;
            }
            (Expect::CommaOrClose, b',') => {
                i += 1;
                state = Expect::ItemOrClose;
            }
            _ => return None,
        }
    }
    None
}

/// Lexes one quoted literal starting at the opening quote. Returns the
/// decoded text and the index just past the closing quote.
fn lex_string(bytes: &[u8], start: usize, end: usize) -> Option<(String, usize)> {
    let quote = bytes[start];
    let mut out: Vec<u8> = Vec::new();
    let mut i = start + 1;
    while i < end {
        let b = bytes[i];
        if b == quote {
            return String::from_utf8(out).ok().map(|s| (s, i + 1));
        }
        if b == b'\n' {
            return None;
        }
        if b == b'\\' {
            let next = *bytes.get(i + 1).filter(|_| i + 1 < end)?;
            match next {
                b'\\' | b'"' | b'\'' => out.push(next),
                b'n' => out.push(b'\n'),
                b't' => out.push(b'\t'),
                b'r' => out.push(b'\r'),
                b'x' if i + 3 < end => {
                    let value = std::str::from_utf8(&bytes[i + 2..i + 4])
                        .ok()
                        .and_then(|hex| u8::from_str_radix(hex, 16).ok());
                    match value {
                        Some(v) if v.is_ascii() => {
                            out.push(v);
                            i += 4;
                            continue;
                        }
                        _ => out.extend_from_slice(b"\\x"),
                    }
                }
                other => {
                    out.push(b'\\');
                    out.push(other);
                }
            }
            i += 2;
            continue;
        }
        out.push(b);
        i += 1;
    }
    None
}
