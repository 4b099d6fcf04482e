use std::io::BufReader;
use std::path::PathBuf;

use phsbench::normalizer::{normalize, normalize_stream, NormalizationConfig, Platform, RawPost};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Set `BLESS=1` to rewrite the expected file after a deliberate change.
#[test]
fn fixture_corpus_is_byte_exact() {
    let input = std::fs::File::open(fixture("normalizer_input.jsonl")).unwrap();
    let mut produced = Vec::new();
    let stats = normalize_stream(
        BufReader::new(input),
        &mut produced,
        &NormalizationConfig::default(),
    )
    .unwrap();
    assert!(stats.posts >= 50);
    assert_eq!(stats.skipped, 0);
    let expected_path = fixture("normalizer_expected.jsonl");
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&expected_path, &produced).unwrap();
    }
    let expected = std::fs::read(&expected_path).unwrap();
    assert!(
        produced == expected,
        "normalized corpus differs from the frozen output"
    );
}

#[test]
fn normalized_fixture_is_a_fixed_point() {
    let config = NormalizationConfig::default();
    for line in std::fs::read_to_string(fixture("normalizer_expected.jsonl"))
        .unwrap()
        .lines()
    {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let text = v["text"].as_str().unwrap();
        let again = normalize(&RawPost::new("x", text, Platform::Twitter), &config);
        assert_eq!(again.text, text);
    }
}

fn fuzz_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z0-9]{1,8}",
        Just(" ".to_string()),
        Just("  \t".to_string()),
        Just("\n".to_string()),
        Just("RT ".to_string()),
        Just("RT @".to_string()),
        Just("@".to_string()),
        "@[a-z_]{1,10}:?",
        "https?://[a-z]{1,6}\\.[a-z]{2,3}/[a-z0-9]{0,5}",
        "www\\.[a-z]{2,5}\\.com",
        Just("t.co/".to_string()),
        Just("HTTP-URL".to_string()),
        Just("@USER".to_string()),
        prop::sample::select(vec![
            "🤒", "😂", "👍🏽", "❤️", "🇺🇸", "🙏", "\u{200b}", "\u{fe0f}", "é", "中"
        ])
        .prop_map(str::to_string),
        "[!?.,:;#$&*()]{1,3}",
    ];
    prop::collection::vec(piece, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn normalize_is_idempotent(text in fuzz_text(), limit in prop::sample::select(vec![8usize, 30, 200])) {
        let config = NormalizationConfig { char_limit: limit, ..NormalizationConfig::default() };
        let once = normalize(&RawPost::new("f", text, Platform::Twitter), &config);
        let twice = normalize(&RawPost::new("f", once.text.clone(), Platform::Twitter), &config);
        prop_assert_eq!(&twice.text, &once.text);
        prop_assert!(once.text.chars().count() <= limit);
    }
}
