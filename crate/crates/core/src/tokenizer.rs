//! Uncased WordPiece tokenization.
//!
//! Text is lowercased, accent-stripped (NFD minus combining marks) and split
//! on whitespace and punctuation before greedy longest-match-first WordPiece.
//! The special-token literals (`[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`, `[MASK]`)
//! are never split, so decoded text re-encodes to the same ids.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
const MAX_CHARS_PER_WORD: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocabulary is missing special token {0}")]
    MissingSpecial(&'static str),
    #[error("duplicate vocabulary entry `{token}` on line {line}")]
    Duplicate { token: String, line: usize },
    #[error("cannot access vocabulary file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl SpecialIds {
    pub fn contains(&self, id: u32) -> bool {
        id == self.pad || id == self.unk || id == self.cls || id == self.sep || id == self.mask
    }
}

/// What the pretraining and fine-tuning code needs from a tokenizer.
pub trait Tokenizer: Send + Sync {
    /// Token ids for `text`, without special tokens.
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
    fn vocab_size(&self) -> usize;
    fn special_ids(&self) -> SpecialIds;
    /// Index of the whole-sequence token in model inputs, if the tokenizer
    /// follows a CLS convention.
    fn cls_position(&self) -> Option<usize> {
        Some(0)
    }
}

/// `[CLS] a [SEP]`, truncated to `max_len` tokens.
pub fn encode_single(tok: &dyn Tokenizer, text: &str, max_len: usize) -> Vec<u32> {
    let sp = tok.special_ids();
    let mut ids = tok.encode(text);
    ids.truncate(max_len.saturating_sub(2));
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(sp.cls);
    out.extend(ids);
    out.push(sp.sep);
    out
}

/// `[CLS] a [SEP] b [SEP]` with segment ids, truncating the longer side first.
pub fn encode_pair(tok: &dyn Tokenizer, a: &str, b: &str, max_len: usize) -> (Vec<u32>, Vec<u32>) {
    let sp = tok.special_ids();
    let mut a = tok.encode(a);
    let mut b = tok.encode(b);
    let budget = max_len.saturating_sub(3);
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    let mut ids = Vec::with_capacity(a.len() + b.len() + 3);
    let mut types = Vec::with_capacity(ids.capacity());
    ids.push(sp.cls);
    ids.extend(&a);
    ids.push(sp.sep);
    types.resize(ids.len(), 0);
    ids.extend(&b);
    ids.push(sp.sep);
    types.resize(ids.len(), 1);
    (ids, types)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPiece {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    special: SpecialIds,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercase, strip accents, split on whitespace and punctuation.
/// Special-token literals pass through intact.
pub fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let next_special = SPECIALS
            .iter()
            .filter_map(|s| rest.find(s).map(|pos| (pos, *s)))
            .min();
        let (chunk, special) = match next_special {
            Some((pos, s)) => (&rest[..pos], Some(s)),
            None => (rest, None),
        };
        split_plain(chunk, &mut words);
        match special {
            Some(s) => {
                words.push(s.to_string());
                rest = &rest[chunk.len() + s.len()..];
            }
            None => break,
        }
    }
    words
}

fn split_plain(text: &str, words: &mut Vec<String>) {
    let mut current = String::new();
    for c in text
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
    {
        if c.is_whitespace() || c.is_control() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punct(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
}

impl WordPiece {
    /// Builds from an ordered token list; the id of a token is its position.
    pub fn from_tokens(tokens: Vec<String>) -> Result<WordPiece, TokenizerError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::Duplicate {
                    token: t.clone(),
                    line: i + 1,
                });
            }
        }
        let get = |s: &'static str| {
            index
                .get(s)
                .copied()
                .ok_or(TokenizerError::MissingSpecial(s))
        };
        let special = SpecialIds {
            pad: get(PAD)?,
            unk: get(UNK)?,
            cls: get(CLS)?,
            sep: get(SEP)?,
            mask: get(MASK)?,
        };
        Ok(WordPiece {
            tokens,
            index,
            special,
        })
    }

    /// Reads a `vocab.txt` style file, one token per line.
    pub fn from_file(path: &Path) -> Result<WordPiece, TokenizerError> {
        let text = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        WordPiece::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let io = |source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(io)?;
        }
        f.flush().map_err(io)
    }

    /// Toy-scale vocabulary: the special tokens, every character seen (as a
    /// word start and as a `##` continuation), then whole words by descending
    /// frequency until `max_size` entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> WordPiece {
        let mut word_counts: HashMap<String, usize> = HashMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        for text in texts {
            for w in basic_split(text) {
                if SPECIALS.contains(&w.as_str()) {
                    continue;
                }
                for c in w.chars() {
                    chars.insert(c, ());
                }
                *word_counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for c in chars.keys() {
            tokens.push(c.to_string());
        }
        for c in chars.keys() {
            tokens.push(format!("##{c}"));
        }
        let mut words: Vec<(String, usize)> = word_counts
            .into_iter()
            .filter(|(w, _)| w.chars().count() > 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in words {
            if tokens.len() >= max_size {
                break;
            }
            tokens.push(w);
        }
        WordPiece::from_tokens(tokens).expect("built vocabulary is consistent")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn wordpiece(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(&id) = self.index.get(word) {
            if SPECIALS.contains(&word) {
                out.push(id);
                return;
            }
        }
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(self.special.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.special.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

impl Tokenizer for WordPiece {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in basic_split(text) {
            self.wordpiece(&word, &mut out);
        }
        out
    }

    fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.special.pad || id == self.special.cls || id == self.special.sep {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            match tok.strip_prefix("##") {
                Some(cont) if !out.is_empty() => out.push_str(cont),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn special_ids(&self) -> SpecialIds {
        self.special
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> WordPiece {
        let tokens = [
            PAD, UNK, CLS, SEP, MASK, "flu", "shot", "un", "##aff", "##able", "@", "user", ",",
            "a", "##b",
        ];
        WordPiece::from_tokens(tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn greedy_longest_match() {
        let wp = toy();
        let ids = wp.encode("Unaffable FLU");
        let toks: Vec<_> = ids.iter().map(|&i| wp.token(i).unwrap()).collect();
        assert_eq!(toks, vec!["un", "##aff", "##able", "flu"]);
        assert_eq!(wp.decode(&ids), "unaffable flu");
    }

    #[test]
    fn unknown_word_is_unk() {
        let wp = toy();
        assert_eq!(wp.encode("zebra"), vec![wp.special_ids().unk]);
    }

    #[test]
    fn placeholder_splits_and_lowercases() {
        let wp = toy();
        let toks: Vec<_> = wp
            .encode("@USER, flu")
            .iter()
            .map(|&i| wp.token(i).unwrap())
            .collect();
        assert_eq!(toks, vec!["@", "user", ",", "flu"]);
    }

    #[test]
    fn accents_stripped() {
        assert_eq!(basic_split("Café  naïve"), vec!["cafe", "naive"]);
    }

    #[test]
    fn special_literals_survive() {
        let wp = toy();
        let sp = wp.special_ids();
        assert_eq!(wp.encode("flu [MASK] [UNK]"), vec![5, sp.mask, sp.unk]);
    }

    #[test]
    fn missing_special_rejected() {
        let err = WordPiece::from_tokens(vec![PAD.into(), UNK.into()]).unwrap_err();
        assert!(matches!(err, TokenizerError::MissingSpecial(CLS)));
    }

    #[test]
    fn pair_and_single_encoding() {
        let wp = toy();
        let sp = wp.special_ids();
        let single = encode_single(&wp, "flu shot flu", 4);
        assert_eq!(single, vec![sp.cls, 5, 6, sp.sep]);
        let (ids, types) = encode_pair(&wp, "flu shot flu", "shot", 6);
        assert_eq!(ids, vec![sp.cls, 5, 6, sp.sep, 6, sp.sep]);
        assert_eq!(types, vec![0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn built_vocab_covers_corpus() {
        let texts = ["I got my flu shot today", "flu season again, flu!"];
        let wp = WordPiece::build(texts.iter().copied(), 64);
        for t in texts {
            assert!(!wp.encode(t).contains(&wp.special_ids().unk));
        }
        assert_eq!(wp.id("flu").is_some(), true);
        assert!(wp.vocab_size() <= 64);
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let wp = WordPiece::build(["hello world"].iter().copied(), 50);
        wp.save(&path).unwrap();
        assert_eq!(WordPiece::from_file(&path).unwrap(), wp);
    }
}
