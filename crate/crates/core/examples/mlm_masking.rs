//! Applies the masked-language-model corruption and tallies what happened.

use std::fmt::Write;

use anyhow::Result;
use phsbench::normalizer::{normalize, NormalizationConfig};
use phsbench::pretrain::{apply_mlm_mask, Perturbation, PretrainConfig};
use phsbench::synth::synthetic_posts;
use phsbench::tokenizer::{encode_single, Tokenizer, WordPiece};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<String> {
    let norm = NormalizationConfig::default();
    let texts: Vec<String> = synthetic_posts(400, 2)
        .iter()
        .map(|p| normalize(p, &norm).text)
        .collect();
    let tok = WordPiece::build(texts.iter().map(String::as_str), 500);
    let config = PretrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let (mut maskable, mut selected) = (0usize, 0usize);
    let mut kinds = [0usize; 3];
    let mut shown = String::new();
    for (i, t) in texts.iter().enumerate() {
        let ids = encode_single(&tok, t, 64);
        let row = apply_mlm_mask(&ids, &tok, &config, &mut rng)?;
        maskable += ids.len() - 2;
        selected += row.perturbations.len();
        for (_, p) in &row.perturbations {
            kinds[match p {
                Perturbation::Mask => 0,
                Perturbation::Random => 1,
                Perturbation::Keep => 2,
            }] += 1;
        }
        if i == 0 {
            writeln!(
                shown,
                "{}\n{}",
                tok.decode(&ids),
                tok.decode(&row.input_ids)
            )?;
        }
    }
    let pct = |n: usize, d: usize| 100.0 * n as f64 / d as f64;
    let mut out = shown;
    writeln!(
        out,
        "selected {:.2}% of {maskable} tokens",
        pct(selected, maskable)
    )?;
    writeln!(
        out,
        "mask {:.1}% random {:.1}% keep {:.1}%",
        pct(kinds[0], selected),
        pct(kinds[1], selected),
        pct(kinds[2], selected)
    )?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
