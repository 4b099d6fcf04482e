use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PretrainConfig, PretrainError};
use crate::normalizer::NormalizedPost;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NspPair {
    pub segment_a: String,
    pub segment_b: String,
    pub is_next: bool,
}

/// Splits on terminal punctuation (`.`, `!`, `?`, runs included) followed by
/// whitespace or the end of the text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            while let Some(&n) = chars.peek() {
                if matches!(n, '.' | '!' | '?') {
                    current.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            if chars.peek().map(|n| n.is_whitespace()).unwrap_or(true) {
                let s = current.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// One pair per segment that has a true successor: the next sentence of the
/// same document, or the next document's first segment when the document is
/// a single sentence. Pair `i` draws from its own RNG stream, so the output
/// only depends on the corpus, the positive rate and the seed.
pub fn build_nsp_pairs(
    documents: &[NormalizedPost],
    config: &PretrainConfig,
) -> Result<Vec<NspPair>, PretrainError> {
    if documents.len() < 2 {
        return Err(PretrainError::CannotPair(format!(
            "need at least 2 documents, got {}",
            documents.len()
        )));
    }
    let docs: Vec<Vec<String>> = documents.iter().map(|d| split_sentences(&d.text)).collect();
    let mut segments: Vec<&str> = Vec::new();
    let mut starts = Vec::with_capacity(docs.len());
    for d in &docs {
        starts.push(segments.len());
        segments.extend(d.iter().map(String::as_str));
    }
    if segments.len() < 2 {
        return Err(PretrainError::CannotPair(format!(
            "need at least 2 segments, got {}",
            segments.len()
        )));
    }

    let mut anchors: Vec<(usize, usize)> = Vec::new();
    for (d, sents) in docs.iter().enumerate() {
        let start = starts[d];
        match sents.len() {
            0 => {}
            1 => {
                if let Some(next) = docs[d + 1..].iter().position(|s| !s.is_empty()) {
                    anchors.push((start, starts[d + 1 + next]));
                }
            }
            n => anchors.extend((0..n - 1).map(|i| (start + i, start + i + 1))),
        }
    }
    if anchors.is_empty() {
        return Err(PretrainError::CannotPair(
            "no segment has a successor".into(),
        ));
    }

    let total = segments.len();
    Ok(anchors
        .iter()
        .enumerate()
        .map(|(i, &(a, succ))| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let is_next = rng.random_bool(config.nsp_positive_rate);
            let b = if is_next {
                succ
            } else {
                let r = rng.random_range(0..total - 1);
                if r >= succ {
                    r + 1
                } else {
                    r
                }
            };
            NspPair {
                segment_a: segments[a].to_string(),
                segment_b: segments[b].to_string(),
                is_next,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: &str, text: &str) -> NormalizedPost {
        NormalizedPost {
            id: id.into(),
            text: text.into(),
            platform: Default::default(),
            transforms_applied: Default::default(),
        }
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("Got my shot. Feeling fine!! Anyone else?"),
            vec!["Got my shot.", "Feeling fine!!", "Anyone else?"]
        );
        assert_eq!(split_sentences("v2.0 is out"), vec!["v2.0 is out"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn two_single_sentence_posts() {
        let cfg = PretrainConfig {
            nsp_positive_rate: 1.0,
            ..Default::default()
        };
        let pairs =
            build_nsp_pairs(&[post("a", "first post"), post("b", "second post")], &cfg).unwrap();
        assert_eq!(
            pairs,
            vec![NspPair {
                segment_a: "first post".into(),
                segment_b: "second post".into(),
                is_next: true
            }]
        );
    }

    #[test]
    fn single_document_cannot_pair() {
        let err =
            build_nsp_pairs(&[post("a", "One. Two.")], &PretrainConfig::default()).unwrap_err();
        assert!(matches!(err, PretrainError::CannotPair(_)));
    }

    #[test]
    fn negatives_are_never_the_successor() {
        let docs: Vec<_> = (0..30)
            .map(|i| post(&i.to_string(), &format!("s{i}a. s{i}b.")))
            .collect();
        let cfg = PretrainConfig {
            nsp_positive_rate: 0.0,
            ..Default::default()
        };
        for p in build_nsp_pairs(&docs, &cfg).unwrap() {
            let n: usize = p.segment_a[1..p.segment_a.len() - 2].parse().unwrap();
            assert_ne!(p.segment_b, format!("s{n}b."));
            assert!(!p.is_next);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let docs: Vec<_> = (0..50)
            .map(|i| post(&i.to_string(), &format!("post {i}")))
            .collect();
        let cfg = PretrainConfig::default();
        assert_eq!(
            build_nsp_pairs(&docs, &cfg).unwrap(),
            build_nsp_pairs(&docs, &cfg).unwrap()
        );
        let other = PretrainConfig { seed: 1, ..cfg };
        assert_ne!(
            build_nsp_pairs(&docs, &other).unwrap(),
            build_nsp_pairs(&docs, &PretrainConfig::default()).unwrap()
        );
    }
}
