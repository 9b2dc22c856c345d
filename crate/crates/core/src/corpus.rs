//! Parallel corpus data model, the desk-scale whitespace tokenizer and the
//! line-delimited JSON interchange format.
//!
//! One record per line:
//!
//! ```text
//! {"id":"p0","source":{"lang":"en","text":"a b"},"target":{"lang":"es","text":"c d"}}
//! ```
//!
//! Either side may carry `tokens` instead of `text`. A token is a bare string
//! (a content token) or an object `{"surface": "...", "kind": "content" |
//! "separator" | "padding"}`. Pre-tokenized sides are taken as given: no
//! separators are added. Optional fields are `label` (a class index or a
//! `[start, end]` answer span) and `identity` (allows source and target to
//! share a language).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEPARATOR_SURFACE: &str = "[SEP]";
pub const PADDING_SURFACE: &str = "[PAD]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Content,
    Separator,
    Padding,
}

impl TokenKind {
    pub fn is_content(self) -> bool {
        self == TokenKind::Content
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub index: usize,
    pub kind: TokenKind,
}

/// A tokenized sentence in one language. Token indices are always `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    language: String,
    tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from `(surface, kind)` parts, assigning indices.
    pub fn new<S, I>(language: &str, parts: I) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, TokenKind)>,
    {
        validate_language(language)?;
        let tokens: Vec<Token> = parts
            .into_iter()
            .enumerate()
            .map(|(index, (surface, kind))| Token {
                surface: surface.into(),
                index,
                kind,
            })
            .collect();
        if let Some(t) = tokens
            .iter()
            .find(|t| t.kind != TokenKind::Padding && t.surface.is_empty())
        {
            return Err(Error::InvalidArgument(format!(
                "token {} has an empty surface",
                t.index
            )));
        }
        if !tokens.iter().any(|t| t.kind.is_content()) {
            return Err(Error::InvalidArgument(
                "sentence has no content tokens".into(),
            ));
        }
        Ok(Sentence {
            language: language.to_owned(),
            tokens,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        self.tokens.iter().map(|t| t.kind).collect()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.iter().filter(|t| t.kind.is_content()).count()
    }
}

/// Task label attached to a pair: a class index or an answer span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Span([usize; 2]),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub id: String,
    pub source: Sentence,
    pub target: Sentence,
    pub label: Option<Label>,
    /// Source and target are the same text; used for self-consistency runs.
    pub identity: bool,
}

impl ParallelPair {
    pub fn new(
        id: impl Into<String>,
        source: Sentence,
        target: Sentence,
        label: Option<Label>,
        identity: bool,
    ) -> Result<Self> {
        if source.language() == target.language() && !identity {
            return Err(Error::InvalidArgument(format!(
                "source and target are both '{}' but the pair is not flagged as identity",
                source.language()
            )));
        }
        Ok(ParallelPair {
            id: id.into(),
            source,
            target,
            label,
            identity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerPolicy {
    #[default]
    Whitespace,
    WhitespaceLowercase,
}

impl TokenizerPolicy {
    pub fn lowercases(self) -> bool {
        self == TokenizerPolicy::WhitespaceLowercase
    }
}

impl fmt::Display for TokenizerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerPolicy::Whitespace => f.write_str("whitespace"),
            TokenizerPolicy::WhitespaceLowercase => f.write_str("whitespace_lowercase"),
        }
    }
}

/// Splits on Unicode whitespace and wraps the result in two separators.
pub fn tokenize(text: &str, language: &str, policy: TokenizerPolicy) -> Result<Sentence> {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| {
            if policy.lowercases() {
                w.to_lowercase()
            } else {
                w.to_owned()
            }
        })
        .collect();
    if words.is_empty() {
        return Err(Error::InvalidArgument(
            "text has no content tokens".into(),
        ));
    }
    let parts = std::iter::once((SEPARATOR_SURFACE.to_owned(), TokenKind::Separator))
        .chain(words.into_iter().map(|w| (w, TokenKind::Content)))
        .chain(std::iter::once((
            SEPARATOR_SURFACE.to_owned(),
            TokenKind::Separator,
        )));
    Sentence::new(language, parts)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawToken {
    Surface(String),
    Full { surface: String, kind: TokenKind },
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSide {
    lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<RawToken>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    source: RawSide,
    target: RawSide,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    identity: bool,
}

impl RawSide {
    fn into_sentence(self, policy: TokenizerPolicy) -> Result<Sentence> {
        match (self.text, self.tokens) {
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "side has both 'text' and 'tokens'".into(),
            )),
            (None, None) => Err(Error::InvalidArgument(
                "side needs 'text' or 'tokens'".into(),
            )),
            (Some(text), None) => tokenize(&text, &self.lang, policy),
            (None, Some(tokens)) => Sentence::new(
                &self.lang,
                tokens.into_iter().map(|t| match t {
                    RawToken::Surface(s) => (s, TokenKind::Content),
                    RawToken::Full { surface, kind } => (surface, kind),
                }),
            ),
        }
    }

    fn from_sentence(sentence: &Sentence) -> Self {
        RawSide {
            lang: sentence.language().to_owned(),
            text: None,
            tokens: Some(
                sentence
                    .tokens()
                    .iter()
                    .map(|t| RawToken::Full {
                        surface: t.surface.clone(),
                        kind: t.kind,
                    })
                    .collect(),
            ),
        }
    }
}

fn parse_record(line: &str, policy: TokenizerPolicy) -> Result<ParallelPair> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if raw.id.is_empty() {
        return Err(Error::InvalidArgument("empty id".into()));
    }
    let source = raw
        .source
        .into_sentence(policy)
        .map_err(|e| Error::InvalidArgument(format!("source: {}", strip(e))))?;
    let target = raw
        .target
        .into_sentence(policy)
        .map_err(|e| Error::InvalidArgument(format!("target: {}", strip(e))))?;
    ParallelPair::new(raw.id, source, target, raw.label, raw.identity)
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

/// Streams pairs from a JSONL reader. Blank lines are skipped.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    policy: TokenizerPolicy,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, policy: TokenizerPolicy) -> Self {
        CorpusReader {
            lines: reader.lines(),
            line_no: 0,
            policy,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<ParallelPair>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::schema(self.line_no, e.to_string()))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(
                parse_record(&line, self.policy).map_err(|e| Error::schema(self.line_no, strip(e))),
            );
        }
    }
}

pub fn load_corpus(path: &Path, policy: TokenizerPolicy) -> Result<Vec<ParallelPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    CorpusReader::new(BufReader::new(file), policy).collect()
}

/// Writes pairs in the interchange format, always in pre-tokenized form.
pub fn write_corpus<W: Write>(mut writer: W, pairs: &[ParallelPair]) -> std::io::Result<()> {
    for pair in pairs {
        let raw = RawRecord {
            id: pair.id.clone(),
            source: RawSide::from_sentence(&pair.source),
            target: RawSide::from_sentence(&pair.target),
            label: pair.label,
            identity: pair.identity,
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[rustfmt::skip]
const ISO_639_1: &[&str] = &[
    "aa", "ab", "ae", "af", "ak", "am", "an", "ar", "as", "av", "ay", "az",
    "ba", "be", "bg", "bi", "bm", "bn", "bo", "br", "bs", "ca", "ce", "ch",
    "co", "cr", "cs", "cu", "cv", "cy", "da", "de", "dv", "dz", "ee", "el",
    "en", "eo", "es", "et", "eu", "fa", "ff", "fi", "fj", "fo", "fr", "fy",
    "ga", "gd", "gl", "gn", "gu", "gv", "ha", "he", "hi", "ho", "hr", "ht",
    "hu", "hy", "hz", "ia", "id", "ie", "ig", "ii", "ik", "io", "is", "it",
    "iu", "ja", "jv", "ka", "kg", "ki", "kj", "kk", "kl", "km", "kn", "ko",
    "kr", "ks", "ku", "kv", "kw", "ky", "la", "lb", "lg", "li", "ln", "lo",
    "lt", "lu", "lv", "mg", "mh", "mi", "mk", "ml", "mn", "mr", "ms", "mt",
    "my", "na", "nb", "nd", "ne", "ng", "nl", "nn", "no", "nr", "nv", "ny",
    "oc", "oj", "om", "or", "os", "pa", "pi", "pl", "ps", "pt", "qu", "rm",
    "rn", "ro", "ru", "rw", "sa", "sc", "sd", "se", "sg", "si", "sk", "sl",
    "sm", "sn", "so", "sq", "sr", "ss", "st", "su", "sv", "sw", "ta", "te",
    "tg", "th", "ti", "tk", "tl", "tn", "to", "tr", "ts", "tt", "tw", "ty",
    "ug", "uk", "ur", "uz", "ve", "vi", "vo", "wa", "wo", "xh", "yi", "yo",
    "za", "zh", "zu",
];

pub fn validate_language(code: &str) -> Result<()> {
    if ISO_639_1.binary_search(&code).is_ok() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "unknown language code '{code}'"
        )))
    }
}

impl std::str::FromStr for TokenizerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizerPolicy::Whitespace),
            "whitespace_lowercase" => Ok(TokenizerPolicy::WhitespaceLowercase),
            other => Err(Error::InvalidArgument(format!("unknown tokenizer '{other}'"))),
        }
    }
}
