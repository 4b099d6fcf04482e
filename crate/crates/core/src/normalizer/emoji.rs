//! Emoji to name-phrase table.
//!
//! The table is a UTF-8 text file with one entry per line:
//! space-separated hexadecimal codepoints, a TAB, then the lowercase name
//! phrase. Lines starting with `#` are comments; the first comment line is
//! kept as the table version string.

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};

use super::NormalizeError;

const BUNDLED_TABLE: &str = include_str!("../../data/emoji_names.tsv");

#[derive(Debug, Clone)]
pub struct EmojiTable {
    version: String,
    keys: Vec<String>,
    names: Vec<String>,
    matcher: AhoCorasick,
}

impl EmojiTable {
    /// The table shipped with the crate, parsed once per process.
    pub fn bundled() -> Arc<EmojiTable> {
        static TABLE: OnceLock<Arc<EmojiTable>> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                Arc::new(EmojiTable::parse(BUNDLED_TABLE).expect("bundled emoji table is valid"))
            })
            .clone()
    }

    pub fn load(path: &Path) -> Result<EmojiTable, NormalizeError> {
        let text = std::fs::read_to_string(path).map_err(|source| NormalizeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        EmojiTable::parse(&text)
    }

    pub fn parse(text: &str) -> Result<EmojiTable, NormalizeError> {
        let mut version = String::new();
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if version.is_empty() {
                    version = comment.trim().to_string();
                }
                continue;
            }
            let (codes, name) =
                line.split_once('\t')
                    .ok_or_else(|| NormalizeError::EmojiTable {
                        line: line_no,
                        reason: "expected `codepoints<TAB>name`".into(),
                    })?;
            let mut key = String::new();
            for hex in codes.split_whitespace() {
                let cp = u32::from_str_radix(hex, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| NormalizeError::EmojiTable {
                        line: line_no,
                        reason: format!("invalid codepoint `{hex}`"),
                    })?;
                key.push(cp);
            }
            if key.is_empty() {
                return Err(NormalizeError::EmojiTable {
                    line: line_no,
                    reason: "empty codepoint sequence".into(),
                });
            }
            if key.chars().any(char::is_whitespace) {
                return Err(NormalizeError::EmojiTable {
                    line: line_no,
                    reason: "codepoint sequence contains whitespace".into(),
                });
            }
            entries.push((key, name.trim().to_string(), line_no));
        }
        Self::from_entries(version, entries)
    }

    fn from_entries(
        version: String,
        entries: Vec<(String, String, usize)>,
    ) -> Result<EmojiTable, NormalizeError> {
        let mut seen = HashSet::new();
        let mut keys = Vec::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        for (key, name, line) in entries {
            if !seen.insert(key.clone()) {
                return Err(NormalizeError::EmojiTable {
                    line,
                    reason: "duplicate codepoint sequence".into(),
                });
            }
            keys.push(key);
            names.push(name);
        }
        let matcher = AhoCorasickBuilder::new()
            .match_kind(MatchKind::LeftmostLongest)
            .build(&keys)
            .map_err(|err| NormalizeError::EmojiTable {
                line: 0,
                reason: err.to_string(),
            })?;
        let table = EmojiTable {
            version,
            keys,
            names,
            matcher,
        };
        // name phrases must be fixed points of the replacement
        for (idx, name) in table.names.iter().enumerate() {
            if table.matcher.is_match(name) {
                return Err(NormalizeError::EmojiTable {
                    line: 0,
                    reason: format!("name phrase for entry {idx} (`{name}`) contains an emoji"),
                });
            }
        }
        Ok(table)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn name_of(&self, emoji: &str) -> Option<&str> {
        self.keys
            .iter()
            .position(|k| k == emoji)
            .map(|idx| self.names[idx].as_str())
    }

    pub fn contains_emoji(&self, text: &str) -> bool {
        self.matcher.is_match(text)
    }

    /// True when `text` begins with a table key.
    pub(crate) fn starts_with_emoji(&self, text: &str) -> bool {
        self.matcher.find(text).is_some_and(|m| m.start() == 0)
    }

    /// Replaces every key (leftmost-longest) with ` name `. Returns `None`
    /// when nothing matched.
    pub(crate) fn replace_all(&self, text: &str) -> Option<String> {
        let mut out = String::with_capacity(text.len() + 16);
        let mut last = 0;
        for m in self.matcher.find_iter(text) {
            out.push_str(&text[last..m.start()]);
            out.push(' ');
            out.push_str(&self.names[m.pattern().as_usize()]);
            out.push(' ');
            last = m.end();
        }
        if last == 0 {
            return None;
        }
        out.push_str(&text[last..]);
        Some(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.keys
            .iter()
            .zip(&self.names)
            .map(|(k, n)| (k.as_str(), n.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_has_medical_mask() {
        let table = EmojiTable::bundled();
        assert!(table.len() > 5000);
        assert_eq!(table.name_of("😷"), Some("face with medical mask"));
        assert!(table.version().starts_with("emoji-names v1"));
    }

    #[test]
    fn longest_sequence_wins() {
        let table = EmojiTable::bundled();
        let family = "👨\u{200D}👩\u{200D}👧";
        let replaced = table.replace_all(family).unwrap();
        assert_eq!(replaced.trim(), table.name_of(family).unwrap());
    }

    #[test]
    fn rejects_name_containing_emoji() {
        let err = EmojiTable::parse("1F637\tmask 😷\n").unwrap_err();
        assert!(matches!(err, NormalizeError::EmojiTable { .. }));
    }

    #[test]
    fn rejects_bad_hex() {
        let err = EmojiTable::parse("ZZZZ\tnope\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn rejects_duplicates() {
        assert!(EmojiTable::parse("1F637\ta\n1F637\tb\n").is_err());
    }
}
