//! Tokenizers for constructed column text.
//!
//! Three granularities share one [`Vocabulary`] type:
//!
//! - `char`: one token per character (whitespace normalised to `' '`);
//! - `word`: whitespace-separated words;
//! - `wordpiece`: words split on whitespace and punctuation, then into
//!   greedy longest-match subwords with `##` continuation prefixes.
//!
//! Ids 0, 1 and 2 are always `[PAD]`, `[UNK]` and `[SEP]`. The value separator
//! of single-sequence text always encodes to the single `[SEP]` id.

mod wordpiece;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{SEPARATOR, SEP_MARKER};
use crate::features::{char_class, CharClass};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const RESERVED: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, SEP_TOKEN];
pub const CONTINUATION: &str = "##";

/// Words longer than this (in chars) become a single `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary budget {budget} is below the {required} tokens required")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("vocabulary file line {line}: {message}")]
    VocabFormat { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    Char,
    Word,
    #[default]
    Wordpiece,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: TokenizerKind,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from a token list. Reserved tokens are moved to ids 0..3 and
    /// the remaining tokens keep their relative order; duplicates are dropped.
    pub fn from_tokens<S: AsRef<str>>(kind: TokenizerKind, tokens: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Vocabulary {
            kind,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            vocab.push(r);
        }
        for t in tokens {
            vocab.push(t.as_ref());
        }
        vocab
    }

    fn push(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// One token per line; the line number is the id.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()
    }

    /// Read a one-token-per-line vocabulary file. Files written by
    /// [`Vocabulary::write_to`] round-trip exactly; external files (for
    /// example pretrained BERT vocabularies) get their reserved tokens moved
    /// to ids 0..3.
    pub fn read_from<R: BufRead>(kind: TokenizerKind, r: R) -> Result<Self, TokenizeError> {
        let mut tokens = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let token = line.strip_suffix('\r').unwrap_or(&line);
            if token.is_empty() {
                return Err(TokenizeError::VocabFormat {
                    line: i + 1,
                    message: "empty token".into(),
                });
            }
            tokens.push(token.to_owned());
        }
        Ok(Self::from_tokens(kind, tokens))
    }
}

/// Integer ids for one text input, padded to `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub max_len: usize,
}

impl TokenSequence {
    /// Number of non-padding tokens.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_len()]
    }
}

fn normalize_char(c: char) -> char {
    if c.is_whitespace() {
        ' '
    } else {
        c
    }
}

/// Whitespace words, with punctuation and symbols split into their own words.
pub(crate) fn pre_tokenize(segment: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in segment.split_whitespace() {
        let mut start = 0;
        for (i, c) in word.char_indices() {
            if char_class(c) == CharClass::Special {
                if start < i {
                    out.push(&word[start..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < word.len() {
            out.push(&word[start..]);
        }
    }
    out
}

fn segments(text: &str) -> impl Iterator<Item = &str> {
    text.split(SEPARATOR)
}

fn sorted_by_frequency<K: Ord + Clone>(counts: HashMap<K, usize>) -> Vec<K> {
    let mut items: Vec<(K, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.into_iter().map(|(k, _)| k).collect()
}

/// Learn a vocabulary of at most `size_budget` tokens (reserved included).
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    kind: TokenizerKind,
    size_budget: usize,
) -> Result<Vocabulary, TokenizeError> {
    let texts: Vec<&str> = corpus.into_iter().collect();
    if texts.is_empty() {
        return Err(TokenizeError::EmptyCorpus);
    }
    if size_budget < RESERVED.len() {
        return Err(TokenizeError::BudgetTooSmall {
            budget: size_budget,
            required: RESERVED.len(),
        });
    }
    let room = size_budget - RESERVED.len();
    match kind {
        TokenizerKind::Char => {
            let mut counts: HashMap<char, usize> = HashMap::new();
            for c in texts.iter().flat_map(|t| segments(t)).flat_map(str::chars) {
                *counts.entry(normalize_char(c)).or_default() += 1;
            }
            let chars = sorted_by_frequency(counts);
            Ok(Vocabulary::from_tokens(
                kind,
                chars.into_iter().take(room).map(String::from),
            ))
        }
        TokenizerKind::Word => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for w in texts
                .iter()
                .flat_map(|t| segments(t))
                .flat_map(str::split_whitespace)
                .filter(|w| *w != SEP_MARKER)
            {
                *counts.entry(w).or_default() += 1;
            }
            Ok(Vocabulary::from_tokens(
                kind,
                sorted_by_frequency(counts).into_iter().take(room),
            ))
        }
        TokenizerKind::Wordpiece => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for w in texts
                .iter()
                .flat_map(|t| segments(t))
                .flat_map(pre_tokenize)
                .filter(|w| *w != SEP_MARKER)
            {
                *counts.entry(w).or_default() += 1;
            }
            let tokens = wordpiece::train(&counts, size_budget)?;
            Ok(Vocabulary::from_tokens(kind, tokens))
        }
    }
}

fn encode_wordpiece_word(vocab: &Vocabulary, word: &str, out: &mut Vec<u32>) {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    if chars.len() > MAX_WORD_CHARS {
        out.push(UNK_ID);
        return;
    }
    let mut piece = String::new();
    let mut start = 0;
    while start < chars.len() {
        let byte_start = chars[start].0;
        let mut matched = None;
        for end in (start + 1..=chars.len()).rev() {
            let byte_end = chars.get(end).map_or(word.len(), |c| c.0);
            piece.clear();
            if start > 0 {
                piece.push_str(CONTINUATION);
            }
            piece.push_str(&word[byte_start..byte_end]);
            if let Some(id) = vocab.id(&piece) {
                matched = Some((id, end));
                break;
            }
        }
        match matched {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => {
                out.push(UNK_ID);
                start += 1;
            }
        }
    }
}

/// Token ids of `text` before truncation and padding.
pub fn tokenize(vocab: &Vocabulary, text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    for (i, seg) in segments(text).enumerate() {
        if i > 0 {
            ids.push(SEP_ID);
        }
        match vocab.kind {
            TokenizerKind::Char => ids.extend(
                seg.chars()
                    .map(|c| vocab.id(normalize_char(c).encode_utf8(&mut [0; 4])).unwrap_or(UNK_ID)),
            ),
            TokenizerKind::Word => ids.extend(seg.split_whitespace().map(|w| {
                if w == SEP_MARKER {
                    SEP_ID
                } else {
                    vocab.id(w).unwrap_or(UNK_ID)
                }
            })),
            TokenizerKind::Wordpiece => {
                for w in seg.split_whitespace() {
                    if w == SEP_MARKER {
                        ids.push(SEP_ID);
                        continue;
                    }
                    for piece in pre_tokenize(w) {
                        encode_wordpiece_word(vocab, piece, &mut ids);
                    }
                }
            }
        }
    }
    ids
}

/// Encode, truncate to `max_len` and pad with `[PAD]`.
pub fn encode(vocab: &Vocabulary, text: &str, max_len: usize) -> TokenSequence {
    let mut ids = tokenize(vocab, text);
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut attention_mask = vec![1u8; real];
    attention_mask.resize(max_len, 0);
    TokenSequence {
        ids,
        attention_mask,
        max_len,
    }
}

/// Inverse of [`encode`] for char and word vocabularies; WordPiece pieces are
/// glued back on their `##` prefixes.
pub fn decode(vocab: &Vocabulary, seq: &TokenSequence) -> String {
    let mut out = String::new();
    let mut first_in_segment = true;
    for &id in seq.real_ids() {
        if id == SEP_ID {
            out.push_str(SEPARATOR);
            first_in_segment = true;
            continue;
        }
        let tok = vocab.token(id).unwrap_or(UNK_TOKEN);
        match vocab.kind {
            TokenizerKind::Char => out.push_str(tok),
            TokenizerKind::Word | TokenizerKind::Wordpiece => {
                if let Some(rest) = tok.strip_prefix(CONTINUATION).filter(|_| vocab.kind == TokenizerKind::Wordpiece) {
                    out.push_str(rest);
                } else {
                    if !first_in_segment {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        first_in_segment = false;
    }
    out
}
