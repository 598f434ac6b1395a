//! Tokenisation of posts into words and emojis, labelled/unlabelled corpus
//! readers, and vocabulary construction.
//!
//! Emojis are whole extended grapheme clusters, so ZWJ sequences, flags and
//! keycaps come out as one token. Skin-tone modifiers and presentation
//! selectors are dropped from the token's identity, which folds
//! `👍🏽` and `👍` onto the same key.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use unicode_properties::emoji::{is_emoji_presentation_selector, is_zwj, EmojiStatus, UnicodeEmoji};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Canonical emoji key: the emoji's code points with skin-tone modifiers and
/// variation selectors removed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmojiId(String);

impl EmojiId {
    /// Canonicalises a literal emoji string.
    pub fn new(literal: &str) -> Self {
        EmojiId(literal.chars().filter(|&c| !is_folded(c)).collect())
    }

    /// Parses either a literal emoji or code-point notation such as
    /// `"U+1F355"` or `"U+1F468 U+200D U+1F4BB"`.
    pub fn parse(spec: &str) -> Option<Self> {
        let spec = spec.trim();
        if spec.is_empty() {
            return None;
        }
        if !spec.starts_with("U+") && !spec.starts_with("u+") {
            return Some(Self::new(spec));
        }
        let mut s = String::new();
        for part in spec.split(|c: char| c.is_whitespace() || c == '_' || c == ',') {
            if part.is_empty() {
                continue;
            }
            let hex = part.strip_prefix("U+").or_else(|| part.strip_prefix("u+"))?;
            s.push(char::from_u32(u32::from_str_radix(hex, 16).ok()?)?);
        }
        let id = Self::new(&s);
        (!id.0.is_empty()).then_some(id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// `U+XXXX` notation, space separated.
    pub fn codepoints(&self) -> String {
        self.0
            .chars()
            .map(|c| format!("U+{:04X}", c as u32))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for EmojiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_skin_tone(c: char) -> bool {
    ('\u{1F3FB}'..='\u{1F3FF}').contains(&c)
}

fn is_folded(c: char) -> bool {
    is_skin_tone(c) || is_emoji_presentation_selector(c) || c == '\u{FE0E}'
}

fn has_default_emoji_presentation(c: char) -> bool {
    matches!(
        c.emoji_status(),
        EmojiStatus::EmojiPresentation
            | EmojiStatus::EmojiPresentationAndModifierBase
            | EmojiStatus::EmojiPresentationAndEmojiComponent
    )
}

/// Decides whether a grapheme cluster is an emoji.
fn is_emoji_cluster(cluster: &str) -> bool {
    let mut chars = cluster.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    if has_default_emoji_presentation(first) {
        return true;
    }
    if !first.is_emoji_char() {
        return false;
    }
    // text-default emoji characters: count them when explicitly requested
    // (VS16, keycap, modifier, ZWJ sequence) or when they are pictographs
    // outside the ASCII/Latin-1/letterlike range (e.g. ❤, ☺).
    let rest: Vec<char> = chars.collect();
    let explicit = rest
        .iter()
        .any(|&c| is_emoji_presentation_selector(c) || is_zwj(c) || is_skin_tone(c) || c == '\u{20E3}');
    explicit || (first as u32 >= 0x2300 && !rest.contains(&'\u{FE0E}'))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    Emoji,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Lower-cased word, or the canonical emoji string.
    pub surface: String,
    /// 0-based index in the full token stream.
    pub position: usize,
}

impl Token {
    pub fn emoji_id(&self) -> Option<EmojiId> {
        (self.kind == TokenKind::Emoji).then(|| EmojiId(self.surface.clone()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.kind == TokenKind::Word)
    }

    pub fn emojis(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.kind == TokenKind::Emoji)
    }

    /// Space-joined surfaces, in order.
    pub fn render(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Splits text into lower-cased words and emoji tokens, numbering every token
/// by its position in the combined stream. Apostrophes are removed inside
/// words; every other non-alphanumeric character separates words.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<Token>| {
        if !word.is_empty() {
            let position = tokens.len();
            tokens.push(Token {
                kind: TokenKind::Word,
                surface: std::mem::take(word),
                position,
            });
        }
    };
    for cluster in text.graphemes(true) {
        if is_emoji_cluster(cluster) {
            flush(&mut word, &mut tokens);
            let position = tokens.len();
            tokens.push(Token {
                kind: TokenKind::Emoji,
                surface: EmojiId::new(cluster).0,
                position,
            });
            continue;
        }
        let first = cluster.chars().next().unwrap_or(' ');
        if first.is_alphanumeric() {
            word.extend(cluster.chars().flat_map(char::to_lowercase));
        } else if first == '\'' || first == '\u{2019}' {
            continue;
        } else {
            flush(&mut word, &mut tokens);
        }
    }
    flush(&mut word, &mut tokens);
    TokenSequence { tokens }
}

/// Separates word and emoji tokens, each keeping its original position.
pub fn split_modalities(seq: &TokenSequence) -> (Vec<Token>, Vec<Token>) {
    seq.tokens.iter().cloned().partition(|t| t.kind == TokenKind::Word)
}

/// Merges the two halves of [`split_modalities`] back into one sequence.
pub fn merge_modalities(words: &[Token], emojis: &[Token]) -> TokenSequence {
    let mut tokens: Vec<Token> = words.iter().chain(emojis).cloned().collect();
    tokens.sort_by_key(|t| t.position);
    TokenSequence { tokens }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPost {
    pub text: String,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct LabeledDataset {
    pub posts: Vec<RawPost>,
    /// Lines that failed to parse, 1-based.
    pub errors: Vec<LineError>,
}

impl LabeledDataset {
    pub fn max_label(&self) -> Option<usize> {
        self.posts.iter().filter_map(|p| p.label).max()
    }
}

#[derive(Deserialize)]
struct LabeledLine {
    text: String,
    label: usize,
}

/// Reads a JSON-lines file of `{"text": ..., "label": ...}` objects. Bad
/// lines are collected; the call fails only if no line parses.
pub fn load_labeled_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = LabeledDataset::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LabeledLine>(&line) {
            Ok(l) => out.posts.push(RawPost {
                text: l.text,
                label: Some(l.label),
            }),
            Err(e) => out.errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    if out.posts.is_empty() && !out.errors.is_empty() {
        let first = &out.errors[0];
        return Err(Error::AllLinesFailed {
            path: path.to_path_buf(),
            count: out.errors.len(),
            first: format!("line {}: {}", first.line, first.message),
        });
    }
    for e in &out.errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    Ok(out)
}

/// Writes labeled posts as JSON lines; posts without a label are skipped.
pub fn write_labeled_dataset(path: &Path, posts: &[RawPost]) -> Result<()> {
    let mut out = String::new();
    for p in posts {
        if let Some(label) = p.label {
            out.push_str(&serde_json::json!({ "text": p.text, "label": label }).to_string());
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes one post per line. Newlines inside a post become spaces.
pub fn write_unlabeled_corpus(path: &Path, posts: &[RawPost]) -> Result<()> {
    let mut out = String::new();
    for p in posts {
        out.push_str(&p.text.replace(['\n', '\r'], " "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Plain-text corpus, one post per line; blank lines are skipped.
pub fn load_unlabeled_corpus(path: &Path) -> Result<Vec<RawPost>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| RawPost {
            text: l.to_string(),
            label: None,
        })
        .collect())
}

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    words: Vec<String>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    /// Index of `word`, or [`UNK_INDEX`].
    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, idx: usize) -> Option<&str> {
        self.words.get(idx).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Shard-local word counts; merging is associative and commutative.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordCounts(BTreeMap<String, usize>);

impl WordCounts {
    pub fn add_sequence(&mut self, seq: &TokenSequence) {
        for t in seq.words() {
            *self.0.entry(t.surface.clone()).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &WordCounts) {
        for (w, c) in &other.0 {
            *self.0.entry(w.clone()).or_default() += c;
        }
    }

    pub fn get(&self, word: &str) -> usize {
        self.0.get(word).copied().unwrap_or(0)
    }

    /// Keeps words with count ≥ `min_count`, ordered by descending count then
    /// lexicographically; indices 0 and 1 are padding and unknown.
    pub fn into_vocab(self, min_count: usize) -> Vocab {
        let min_count = min_count.max(1);
        let mut kept: Vec<(String, usize)> = self.0.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w));
        let index = words.iter().enumerate().skip(2).map(|(i, w)| (w.clone(), i)).collect();
        Vocab { index, words }
    }
}

pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a TokenSequence>, min_count: usize) -> Vocab {
    let mut counts = WordCounts::default();
    for seq in corpus {
        counts.add_sequence(seq);
    }
    counts.into_vocab(min_count)
}
