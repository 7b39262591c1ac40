//! Token counters used for prompt budgeting.
//!
//! The default counts whitespace-delimited words. The alternative is an
//! uncased WordPiece tokenizer driven by a `vocab.txt` file (one token per
//! line): text is cleaned, lowercased, accent-stripped, split on whitespace
//! and punctuation, then each word is split greedily into the longest
//! vocabulary pieces with `##` continuations.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Default)]
pub enum TokenCounter {
    #[default]
    Whitespace,
    WordPiece(WordPiece),
}

impl TokenCounter {
    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenCounter::Whitespace => text.split_whitespace().count(),
            TokenCounter::WordPiece(wp) => wp.tokenize(text).len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TokenCounter::Whitespace => "whitespace",
            TokenCounter::WordPiece(_) => "wordpiece",
        }
    }
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> usize {
    counter.count(text)
}

#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: HashSet<String>,
    unk: String,
}

impl WordPiece {
    pub fn from_vocab<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            vocab: tokens.into_iter().map(Into::into).collect(),
            unk: "[UNK]".into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()).collect();
        if vocab.is_empty() {
            return Err(Error::Config(format!("empty vocabulary {}", path.display())));
        }
        Ok(Self::from_vocab(vocab))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in basic_split(text) {
            self.word_pieces(&word, &mut out);
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<String>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.unk.clone());
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub.insert_str(0, "##");
                }
                if self.vocab.contains(&sub) {
                    found = Some(sub);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(p) => pieces.push(p),
                None => {
                    out.push(self.unk.clone());
                    return;
                }
            }
            start = end;
        }
        out.extend(pieces);
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32, 0x2000..=0x206F | 0x3000..=0x303F | 0xFF01..=0xFF0F | 0xFF1A..=0xFF20)
        || matches!(c, '¡' | '§' | '«' | '¶' | '·' | '»' | '¿')
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// Clean, lowercase, strip accents, and split into words and punctuation.
fn basic_split(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || (c.is_control() && !c.is_whitespace()) {
            continue;
        }
        if is_cjk(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else if c.is_whitespace() {
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    let mut out = Vec::new();
    for raw in spaced.split_whitespace() {
        let lowered: String = raw.to_lowercase().nfd().filter(|&c| !is_combining_mark(c)).collect();
        let mut cur = String::new();
        for c in lowered.chars() {
            if is_punctuation(c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}
