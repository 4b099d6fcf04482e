//! Seeded synthetic corpora for toy runs, examples and tests.

use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledExample;
use crate::normalizer::{Platform, RawPost};

const SUBJECTS: &[&str] = &[
    "i",
    "my mom",
    "my dad",
    "my friend",
    "my sister",
    "everyone at work",
    "the nurse",
    "my doctor",
    "our team",
    "my roommate",
];
const SYMPTOMS: &[&str] = &[
    "a fever",
    "a cough",
    "a headache",
    "the chills",
    "a sore throat",
    "body aches",
    "no appetite",
    "a runny nose",
];
const TIMES: &[&str] = &[
    "today",
    "yesterday",
    "this morning",
    "last night",
    "all week",
    "since monday",
    "for two days",
];
const VACCINES: &[&str] = &["flu", "covid", "booster", "measles", "tetanus"];
const FEELINGS: &[&str] = &[
    "tired",
    "anxious",
    "stressed",
    "fine",
    "better",
    "worse",
    "exhausted",
    "hopeful",
];
const PLACES: &[&str] = &[
    "the clinic",
    "the pharmacy",
    "the hospital",
    "urgent care",
    "the health center",
];
const HANDLES: &[&str] = &["@cdcgov", "@who", "@drsmith", "@healthnews", "@localclinic"];
const EMOJI: &[&str] = &["😷", "🤒", "💉", "😴", "🙏", "😢"];

fn sentence(rng: &mut impl Rng) -> String {
    let s = *SUBJECTS.choose(rng).expect("non-empty");
    let verb_have = if s == "i" || s == "everyone at work" || s == "our team" {
        "have"
    } else {
        "has"
    };
    let verb_feel = if s == "i" { "feel" } else { "feels" };
    match rng.random_range(0..7) {
        6 => {
            let pool = CLASS_WORDS.choose(rng).unwrap();
            format!(
                "so much {} and {} {}.",
                pool.choose(rng).unwrap(),
                pool.choose(rng).unwrap(),
                TIMES.choose(rng).unwrap()
            )
        }
        0 => format!(
            "{s} got the {} shot at {} {}.",
            VACCINES.choose(rng).unwrap(),
            PLACES.choose(rng).unwrap(),
            TIMES.choose(rng).unwrap()
        ),
        1 => format!(
            "{s} {verb_have} had {} {}.",
            SYMPTOMS.choose(rng).unwrap(),
            TIMES.choose(rng).unwrap()
        ),
        2 => format!(
            "{s} {verb_feel} {} after the {} vaccine.",
            FEELINGS.choose(rng).unwrap(),
            VACCINES.choose(rng).unwrap()
        ),
        3 => format!(
            "stay home if you have {} and call {}.",
            SYMPTOMS.choose(rng).unwrap(),
            PLACES.choose(rng).unwrap()
        ),
        4 => format!(
            "{s} {verb_feel} so {} {}!",
            FEELINGS.choose(rng).unwrap(),
            TIMES.choose(rng).unwrap()
        ),
        _ => format!(
            "is {} worse with {}?",
            SYMPTOMS.choose(rng).unwrap(),
            FEELINGS
                .choose(rng)
                .map(|f| format!("feeling {f}"))
                .unwrap()
        ),
    }
}

/// Health-themed posts with the usual social-media noise: retweet markers,
/// handles, links and emoji. Some posts have two or three sentences.
pub fn synthetic_posts(n: usize, seed: u64) -> Vec<RawPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let sentences = match rng.random_range(0..10) {
                0..=5 => 1,
                6..=8 => 2,
                _ => 3,
            };
            let mut text: Vec<String> = (0..sentences).map(|_| sentence(&mut rng)).collect();
            if rng.random_bool(0.2) {
                text.insert(0, format!("RT {}:", HANDLES.choose(&mut rng).unwrap()));
            } else if rng.random_bool(0.15) {
                text.insert(0, HANDLES.choose(&mut rng).unwrap().to_string());
            }
            if rng.random_bool(0.3) {
                text.push(EMOJI.choose(&mut rng).unwrap().to_string());
            }
            if rng.random_bool(0.25) {
                text.push(format!("https://t.co/{:x}", rng.random::<u32>()));
            }
            RawPost {
                id: format!("post-{i:05}"),
                text: text.join(" "),
                platform: Platform::Twitter,
            }
        })
        .collect()
}

const CLASS_WORDS: &[&[&str]] = &[
    &["fever", "cough", "chills", "headache", "nausea", "sneezing"],
    &["vaccine", "booster", "dose", "appointment", "jab", "clinic"],
    &[
        "anxious",
        "lonely",
        "stressed",
        "overwhelmed",
        "sleepless",
        "worried",
    ],
    &["diet", "workout", "running", "protein", "steps", "yoga"],
];
const FILLER: &[&str] = &[
    "today", "again", "really", "so", "and", "the", "my", "this", "week", "honestly", "just",
    "feeling", "about",
];

/// A labeled set whose classes use disjoint keyword pools mixed with shared
/// filler words, so a bag-of-words model separates them perfectly. Classes
/// are balanced (round-robin labels).
pub fn separable_dataset(n: usize, num_classes: usize, seed: u64) -> Vec<LabeledExample> {
    assert!(num_classes >= 2, "need at least two classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generated: Vec<Vec<String>> = (CLASS_WORDS.len()..num_classes)
        .map(|c| (0..6).map(|j| format!("topic{c}w{j}")).collect())
        .collect();
    (0..n)
        .map(|i| {
            let label = i % num_classes;
            let pool: Vec<&str> = if label < CLASS_WORDS.len() {
                CLASS_WORDS[label].to_vec()
            } else {
                generated[label - CLASS_WORDS.len()]
                    .iter()
                    .map(String::as_str)
                    .collect()
            };
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..rng.random_range(2..=3) {
                words.push(pool.choose(&mut rng).unwrap());
            }
            for _ in 0..rng.random_range(2..=4) {
                words.push(FILLER.choose(&mut rng).unwrap());
            }
            // Keywords first keeps them inside any truncation window.
            let (kw, fill) = words.split_at(words.len() - 2);
            let mut fill = fill.to_vec();
            fill.reverse();
            let text = kw
                .iter()
                .chain(fill.iter())
                .copied()
                .collect::<Vec<_>>()
                .join(" ");
            LabeledExample {
                id: format!("ex-{i:05}"),
                text,
                label,
                group_key: None,
            }
        })
        .collect()
}

/// Writes examples as dataset JSONL (`id`, `text`, `label` as index string).
pub fn write_labeled_jsonl(examples: &[LabeledExample], path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in examples {
        let mut rec =
            serde_json::json!({ "id": e.id, "text": e.text, "label": e.label.to_string() });
        if let Some(g) = &e.group_key {
            rec["group_key"] = serde_json::Value::String(g.clone());
        }
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Writes raw posts as JSONL, the normalizer's input format.
pub fn write_posts_jsonl(posts: &[RawPost], path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in posts {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posts_are_deterministic() {
        assert_eq!(synthetic_posts(50, 3), synthetic_posts(50, 3));
        assert_ne!(synthetic_posts(50, 3), synthetic_posts(50, 4));
        let posts = synthetic_posts(500, 1);
        assert!(posts.iter().any(|p| p.text.starts_with("RT @")));
        assert!(posts.iter().any(|p| p.text.contains("https://t.co/")));
    }

    #[test]
    fn separable_is_balanced_and_disjoint() {
        let exs = separable_dataset(300, 3, 0);
        for c in 0..3 {
            assert_eq!(exs.iter().filter(|e| e.label == c).count(), 100);
        }
        for e in &exs {
            for (c, pool) in CLASS_WORDS.iter().enumerate().take(3) {
                let hit = e.text.split(' ').any(|w| pool.contains(&w));
                assert_eq!(hit, c == e.label, "{}", e.text);
            }
        }
        let many = separable_dataset(60, 6, 0);
        assert!(many.iter().any(|e| e.text.contains("topic5w")));
    }
}
