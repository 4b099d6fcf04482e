//! Social-media text normalization.
//!
//! [`normalize`] applies a fixed sequence of rewrites:
//!
//! 1. strip leading retweet markers (`RT ` and `RT @handle:`),
//! 2. replace URLs with the URL placeholder,
//! 3. replace `@handle` mentions with the user placeholder,
//! 4. replace emoji with ` name phrase `,
//! 5. collapse whitespace and trim,
//! 6. truncate to the character limit, backing off to a word boundary.
//!
//! Case is preserved; lowercasing belongs to the tokenizer. The output of
//! [`normalize`] is a fixed point: normalizing it again returns the same text.

mod emoji;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use emoji::EmojiTable;

#[derive(Debug, thiserror::Error)]
pub enum NormalizeError {
    #[error("invalid normalization config: {0}")]
    InvalidConfig(String),
    #[error("emoji table line {line}: {reason}")]
    EmojiTable { line: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error while streaming posts: {0}")]
    Stream(#[from] std::io::Error),
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Twitter,
    Reddit,
    Sms,
    News,
    Amazon,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub platform: Platform,
}

impl RawPost {
    pub fn new(id: impl Into<String>, text: impl Into<String>, platform: Platform) -> Self {
        RawPost {
            id: id.into(),
            text: text.into(),
            platform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    RetweetStripped,
    UrlReplaced,
    UserReplaced,
    EmojiReplaced,
    Truncated,
    WhitespaceCollapsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedPost {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub platform: Platform,
    pub transforms_applied: BTreeSet<Transform>,
}

#[derive(Debug, Clone)]
pub struct NormalizationConfig {
    pub url_placeholder: String,
    pub user_placeholder: String,
    pub char_limit: usize,
    pub emoji_table: Arc<EmojiTable>,
    pub strip_retweet: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            url_placeholder: "HTTP-URL".into(),
            user_placeholder: "@USER".into(),
            char_limit: 200,
            emoji_table: EmojiTable::bundled(),
            strip_retweet: true,
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<(), NormalizeError> {
        if self.char_limit == 0 {
            return Err(NormalizeError::InvalidConfig(
                "char_limit must be >= 1".into(),
            ));
        }
        if url_pattern().is_match(&self.url_placeholder)
            || tco_pattern().is_match(&self.url_placeholder)
        {
            return Err(NormalizeError::InvalidConfig(format!(
                "url_placeholder `{}` matches the URL pattern",
                self.url_placeholder
            )));
        }
        if self.emoji_table.contains_emoji(&self.url_placeholder)
            || self.emoji_table.contains_emoji(&self.user_placeholder)
        {
            return Err(NormalizeError::InvalidConfig(
                "placeholders must not contain emoji".into(),
            ));
        }
        let probe = RawPost::new("", self.user_placeholder.clone(), Platform::Other);
        let once = normalize_unchecked(&probe, self);
        if once.text != self.user_placeholder {
            return Err(NormalizeError::InvalidConfig(format!(
                "user_placeholder `{}` is not a fixed point (normalizes to `{}`)",
                self.user_placeholder, once.text
            )));
        }
        Ok(())
    }
}

/// Serializable form of [`NormalizationConfig`] used in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizerSettings {
    pub url_placeholder: String,
    pub user_placeholder: String,
    pub char_limit: usize,
    pub strip_retweet: bool,
    /// Alternative emoji table; the bundled one is used when absent.
    pub emoji_table: Option<PathBuf>,
}

impl Default for NormalizerSettings {
    fn default() -> Self {
        let cfg = NormalizationConfig::default();
        NormalizerSettings {
            url_placeholder: cfg.url_placeholder,
            user_placeholder: cfg.user_placeholder,
            char_limit: cfg.char_limit,
            strip_retweet: cfg.strip_retweet,
            emoji_table: None,
        }
    }
}

impl NormalizerSettings {
    pub fn build(&self) -> Result<NormalizationConfig, NormalizeError> {
        let emoji_table = match &self.emoji_table {
            Some(path) => Arc::new(EmojiTable::load(path)?),
            None => EmojiTable::bundled(),
        };
        let cfg = NormalizationConfig {
            url_placeholder: self.url_placeholder.clone(),
            user_placeholder: self.user_placeholder.clone(),
            char_limit: self.char_limit,
            emoji_table,
            strip_retweet: self.strip_retweet,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)https?://\S+").unwrap())
}

// Bare shortener links. The leading group keeps the boundary character,
// which must not be a letter, digit or underscore.
fn tco_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(^|[^\p{L}\p{N}_])t\.co/\S*").unwrap())
}

fn mention_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // No lookbehind in `regex`: the leading character is matched and group 1
    // is the mention itself, so `nurse@example.com` is not a mention. The
    // lead class is ASCII so an emoji (variation selectors are `\w`) counts as
    // a separator both before and after the emoji step.
    RE.get_or_init(|| Regex::new(r"(?:^|[^A-Za-z0-9_@])(@\w+)").unwrap())
}

fn mentions(text: &str) -> impl Iterator<Item = regex::Match<'_>> {
    mention_pattern()
        .captures_iter(text)
        .filter_map(|c| c.get(1))
}

fn retweet_handle_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*RT\s+@\w+:").unwrap())
}

fn whitespace_run() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s+").unwrap())
}

/// True when `text` contains something the URL step would rewrite.
pub fn contains_url(text: &str) -> bool {
    url_pattern().is_match(text) || tco_pattern().is_match(text)
}

/// True when `text` contains a mention other than `placeholder`.
pub fn contains_raw_mention(text: &str, placeholder: &str) -> bool {
    mentions(text).any(|m| m.as_str() != placeholder)
}

pub fn normalize(post: &RawPost, config: &NormalizationConfig) -> NormalizedPost {
    normalize_unchecked(post, config)
}

fn normalize_unchecked(post: &RawPost, config: &NormalizationConfig) -> NormalizedPost {
    let mut applied = BTreeSet::new();
    let mut text = post.text.clone();

    if config.strip_retweet {
        if let Some(stripped) = strip_retweet(&text, &config.emoji_table) {
            text = stripped;
            applied.insert(Transform::RetweetStripped);
        }
    }

    let url_placeholder = config.url_placeholder.as_str();
    let mut replaced = url_pattern()
        .replace_all(&text, url_placeholder)
        .into_owned();
    replaced = tco_pattern()
        .replace_all(&replaced, |caps: &regex::Captures<'_>| {
            format!("{}{}", &caps[1], url_placeholder)
        })
        .into_owned();
    if replaced != text {
        text = replaced;
        applied.insert(Transform::UrlReplaced);
    }

    let mut user_hits = false;
    let replaced = mention_pattern().replace_all(&text, |caps: &regex::Captures<'_>| {
        let (whole, m) = (&caps[0], &caps[1]);
        let lead = &whole[..whole.len() - m.len()];
        if m == config.user_placeholder {
            whole.to_string()
        } else {
            user_hits = true;
            format!("{lead}{}", config.user_placeholder)
        }
    });
    if user_hits {
        text = replaced.into_owned();
        applied.insert(Transform::UserReplaced);
    }

    if let Some(replaced) = config.emoji_table.replace_all(&text) {
        text = replaced;
        applied.insert(Transform::EmojiReplaced);
    }

    let collapsed = whitespace_run().replace_all(&text, " ");
    let collapsed = collapsed.trim();
    if collapsed != text {
        text = collapsed.to_string();
        applied.insert(Transform::WhitespaceCollapsed);
    }

    if let Some(cut) = truncate(&text, config) {
        text = cut;
        applied.insert(Transform::Truncated);
    }

    NormalizedPost {
        id: post.id.clone(),
        text,
        platform: post.platform,
        transforms_applied: applied,
    }
}

/// Removes leading `RT @handle:` / `RT ` markers, repeatedly.
fn strip_retweet(text: &str, emoji: &EmojiTable) -> Option<String> {
    let mut rest = text;
    let mut changed = false;
    loop {
        if let Some(m) = retweet_handle_prefix().find(rest) {
            rest = &rest[m.end()..];
            changed = true;
            continue;
        }
        let trimmed = rest.trim_start();
        if let Some(after) = trimmed.strip_prefix("RT") {
            // "RT" must be a standalone token; an emoji directly after it
            // becomes whitespace-separated later, so it counts as a boundary.
            let standalone = after.is_empty()
                || after.starts_with(char::is_whitespace)
                || emoji.starts_with_emoji(after);
            if standalone {
                rest = after.trim_start();
                changed = true;
                continue;
            }
        }
        break;
    }
    changed.then(|| rest.to_string())
}

fn truncate(text: &str, config: &NormalizationConfig) -> Option<String> {
    let limit = config.char_limit;
    let (cut_byte, next) = match text.char_indices().nth(limit) {
        Some((byte, ch)) => (byte, ch),
        None => return None,
    };
    let prefix = &text[..cut_byte];
    if next.is_whitespace() {
        return Some(prefix.trim_end().to_string());
    }
    if let Some(space) = prefix.rfind(char::is_whitespace) {
        let backed = prefix[..space].trim_end();
        if !backed.is_empty() {
            return Some(backed.to_string());
        }
    }
    // Hard cut inside a single word. A placeholder sliced in half would be
    // re-detected as a mention on the next pass, so drop it.
    let mut cut = prefix.to_string();
    if let Some(m) = mentions(prefix).last() {
        if m.end() == prefix.len() && m.as_str() != config.user_placeholder {
            cut.truncate(m.start());
        }
    }
    Some(cut.trim_end().to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub posts: usize,
    /// Records that could not be decoded and were skipped.
    pub skipped: usize,
    pub retweet_stripped: usize,
    pub url_replaced: usize,
    pub user_replaced: usize,
    pub emoji_replaced: usize,
    pub truncated: usize,
    pub whitespace_collapsed: usize,
    /// Mean output length in characters (0 for an empty corpus).
    pub mean_output_chars: f64,
}

impl CorpusStats {
    pub fn count(&self, transform: Transform) -> usize {
        match transform {
            Transform::RetweetStripped => self.retweet_stripped,
            Transform::UrlReplaced => self.url_replaced,
            Transform::UserReplaced => self.user_replaced,
            Transform::EmojiReplaced => self.emoji_replaced,
            Transform::Truncated => self.truncated,
            Transform::WhitespaceCollapsed => self.whitespace_collapsed,
        }
    }

    fn record(&mut self, post: &NormalizedPost, total_chars: &mut usize) {
        self.posts += 1;
        *total_chars += post.text.chars().count();
        for t in &post.transforms_applied {
            *match t {
                Transform::RetweetStripped => &mut self.retweet_stripped,
                Transform::UrlReplaced => &mut self.url_replaced,
                Transform::UserReplaced => &mut self.user_replaced,
                Transform::EmojiReplaced => &mut self.emoji_replaced,
                Transform::Truncated => &mut self.truncated,
                Transform::WhitespaceCollapsed => &mut self.whitespace_collapsed,
            } += 1;
        }
    }

    fn finish(&mut self, total_chars: usize) {
        self.mean_output_chars = if self.posts == 0 {
            0.0
        } else {
            total_chars as f64 / self.posts as f64
        };
    }
}

/// Order-preserving [`normalize`] over a sequence of decoded posts.
///
/// `Err` items are counted as skipped and never abort the stream.
pub fn normalize_corpus<I, E>(
    posts: I,
    config: &NormalizationConfig,
) -> (Vec<NormalizedPost>, CorpusStats)
where
    I: IntoIterator<Item = Result<RawPost, E>>,
{
    let mut stats = CorpusStats::default();
    let mut total_chars = 0;
    let mut out = Vec::new();
    for item in posts {
        match item {
            Ok(post) => {
                let normalized = normalize(&post, config);
                stats.record(&normalized, &mut total_chars);
                out.push(normalized);
            }
            Err(_) => stats.skipped += 1,
        }
    }
    stats.finish(total_chars);
    (out, stats)
}

/// Reads line-delimited JSON posts. Each item carries the 1-based line number
/// on failure.
pub fn read_posts<R: BufRead>(reader: R) -> impl Iterator<Item = Result<RawPost, (usize, String)>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let line_no = idx + 1;
        match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => {
                Some(serde_json::from_str::<RawPost>(&l).map_err(|e| (line_no, e.to_string())))
            }
            Err(e) => Some(Err((line_no, e.to_string()))),
        }
    })
}

/// Streams JSONL posts from `reader` to `writer` with `transforms_applied`
/// added to each record.
pub fn normalize_stream<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    config: &NormalizationConfig,
) -> Result<CorpusStats, NormalizeError> {
    let mut stats = CorpusStats::default();
    let mut total_chars = 0;
    for item in read_posts(reader) {
        match item {
            Ok(post) => {
                let normalized = normalize(&post, config);
                stats.record(&normalized, &mut total_chars);
                serde_json::to_writer(&mut writer, &normalized).map_err(std::io::Error::from)?;
                writer.write_all(b"\n")?;
            }
            Err((line, reason)) => {
                log::warn!("skipping undecodable post on line {line}: {reason}");
                stats.skipped += 1;
            }
        }
    }
    stats.finish(total_chars);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> NormalizedPost {
        normalize(
            &RawPost::new("p", text, Platform::Twitter),
            &NormalizationConfig::default(),
        )
    }

    #[test]
    fn flu_shot_example() {
        let out = run("RT @bob I got my flu shot 😷 https://t.co/x");
        assert_eq!(
            out.text,
            "@USER I got my flu shot face with medical mask HTTP-URL"
        );
        let expected: BTreeSet<_> = [
            Transform::RetweetStripped,
            Transform::UrlReplaced,
            Transform::UserReplaced,
            Transform::EmojiReplaced,
            Transform::WhitespaceCollapsed,
        ]
        .into_iter()
        .collect();
        assert_eq!(out.transforms_applied, expected);
    }

    #[test]
    fn plain_text_is_untouched() {
        let out = run("plain sentence with nothing special");
        assert_eq!(out.text, "plain sentence with nothing special");
        assert!(out.transforms_applied.is_empty());
    }

    #[test]
    fn long_single_word_is_hard_cut() {
        let out = run(&"a".repeat(250));
        assert_eq!(out.text, "a".repeat(200));
        assert!(out.transforms_applied.contains(&Transform::Truncated));
    }

    #[test]
    fn truncation_backs_off_to_word_boundary() {
        let text = format!("{} tail", "word ".repeat(40).trim_end());
        // 40 words of 4 chars + 39 spaces = 199 chars, then " tail"
        let out = run(&text);
        assert_eq!(out.text.chars().count(), 199);
        assert!(!out.text.ends_with(' '));
        assert!(out.text.ends_with("word"));
    }

    #[test]
    fn cut_landing_on_space_keeps_whole_words() {
        let text = format!("{} {}", "b".repeat(200), "c".repeat(10));
        assert_eq!(run(&text).text, "b".repeat(200));
    }

    #[test]
    fn empty_text() {
        let out = run("");
        assert_eq!(out.text, "");
        assert!(out.transforms_applied.is_empty());
    }

    #[test]
    fn retweet_with_handle_colon_is_removed() {
        assert_eq!(run("RT @cdc: get vaccinated").text, "get vaccinated");
        assert_eq!(run("RT RT @a: RT hi").text, "hi");
    }

    #[test]
    fn interior_rt_is_kept() {
        assert_eq!(run("we did RT PCR").text, "we did RT PCR");
        assert_eq!(run("RT-PCR positive").text, "RT-PCR positive");
    }

    #[test]
    fn rt_followed_by_emoji_is_stripped() {
        assert_eq!(run("RT😷 sick").text, "face with medical mask sick");
    }

    #[test]
    fn shortener_needs_boundary() {
        assert_eq!(run("see t.co/abc").text, "see HTTP-URL");
        assert_eq!(run("robot.co/abc").text, "robot.co/abc");
        assert_eq!(run("(t.co/abc)").text, "(HTTP-URL");
    }

    #[test]
    fn placeholder_mention_not_flagged() {
        let out = run("@USER hello");
        assert!(out.transforms_applied.is_empty());
    }

    #[test]
    fn sliced_placeholder_is_dropped() {
        let word = format!("{}@USER", "é".repeat(197));
        let out = run(&word);
        assert_eq!(out.text, "é".repeat(197));
        assert_eq!(run(&out.text).text, out.text);
    }

    #[test]
    fn mention_needs_a_separator() {
        assert_eq!(
            run("mail nurse@example.com or @nurse").text,
            "mail nurse@example.com or @USER"
        );
        assert_eq!(run("🤒@bob").text, "face with thermometer @USER");
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = NormalizationConfig::default();
        cfg.char_limit = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = NormalizationConfig::default();
        cfg.url_placeholder = "http://x".into();
        assert!(cfg.validate().is_err());

        let mut cfg = NormalizationConfig::default();
        cfg.user_placeholder = "@user name".into();
        assert!(cfg.validate().is_err());

        assert!(NormalizationConfig::default().validate().is_ok());
    }

    #[test]
    fn corpus_stats() {
        let posts = vec![
            Ok::<_, ()>(RawPost::new("1", "no links", Platform::Twitter)),
            Ok(RawPost::new("2", "see https://x.org", Platform::Twitter)),
            Err(()),
            Ok(RawPost::new("3", "nothing", Platform::Reddit)),
        ];
        let (out, stats) = normalize_corpus(posts, &NormalizationConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(stats.posts, 3);
        assert_eq!(stats.skipped, 1);
        assert_eq!(stats.url_replaced, 1);
        assert_eq!(stats.count(Transform::UrlReplaced), 1);
    }

    #[test]
    fn empty_corpus_stats() {
        let (out, stats) = normalize_corpus(
            Vec::<Result<RawPost, ()>>::new(),
            &NormalizationConfig::default(),
        );
        assert!(out.is_empty());
        assert_eq!(stats, CorpusStats::default());
    }

    #[test]
    fn stream_skips_bad_lines() {
        let input = "{\"id\":\"1\",\"text\":\"hi @x\",\"platform\":\"twitter\"}\nnot json\n\n{\"id\":\"2\",\"text\":\"ok\"}\n";
        let mut out = Vec::new();
        let stats =
            normalize_stream(input.as_bytes(), &mut out, &NormalizationConfig::default()).unwrap();
        assert_eq!(stats.posts, 2);
        assert_eq!(stats.skipped, 1);
        let text = String::from_utf8(out).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"transforms_applied\":[\"user_replaced\"]"));
    }
}
