//! Cleans a handful of raw posts and prints what changed.

use std::fmt::Write;

use anyhow::Result;
use phsbench::normalizer::{normalize, normalize_corpus, NormalizationConfig, Platform, RawPost};

pub fn run_example() -> Result<String> {
    let config = NormalizationConfig::default();
    let posts = vec![
        RawPost::new(
            "1",
            "RT @cdcgov: Flu season is here 🤒 get your shot https://t.co/abc123",
            Platform::Twitter,
        ),
        RawPost::new(
            "2",
            "@drsmith   thanks!!   feeling    much better 🙏",
            Platform::Twitter,
        ),
        RawPost::new(
            "3",
            "Week 3 of the trial, no side effects so far",
            Platform::Reddit,
        ),
    ];
    let mut out = String::new();
    for p in &posts {
        let n = normalize(p, &config);
        writeln!(
            out,
            "{}\n  -> {}\n     {:?}",
            p.text, n.text, n.transforms_applied
        )?;
    }
    let (_, stats) = normalize_corpus(posts.into_iter().map(Ok::<_, ()>), &config);
    writeln!(
        out,
        "urls {} users {} emoji {}",
        stats.url_replaced, stats.user_replaced, stats.emoji_replaced
    )?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
