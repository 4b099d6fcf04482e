//! A few dozen MLM + NSP steps on a tiny encoder.

use std::fmt::Write;

use anyhow::Result;
use phsbench::nn::{Encoder, EncoderConfig};
use phsbench::normalizer::{normalize, NormalizationConfig};
use phsbench::pretrain::{run_pretraining, PretrainConfig};
use phsbench::synth::synthetic_posts;
use phsbench::tokenizer::{Tokenizer, WordPiece};

pub fn run_example() -> Result<String> {
    let norm = NormalizationConfig::default();
    let corpus: Vec<_> = synthetic_posts(300, 3)
        .iter()
        .map(|p| normalize(p, &norm))
        .collect();
    let tok = WordPiece::build(corpus.iter().map(|p| p.text.as_str()), 400);
    let encoder = Encoder::random(EncoderConfig::small(tok.vocab_size(), 32, 1, 64), 0);
    let config = PretrainConfig {
        allow_random_init: true,
        learning_rate: 1e-3,
        max_seq_len: 48,
        batch_size: 8,
        ..Default::default()
    };
    let outcome = run_pretraining(&corpus, encoder, &tok, &config, 40)?;
    let mut out = String::new();
    for r in outcome.trajectory.iter().step_by(10) {
        writeln!(
            out,
            "step {:>3}  mlm {:.3}  nsp {:.3}",
            r.step, r.mlm_loss, r.nsp_loss
        )?;
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
