use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::PretrainHeads;
use super::masking::{apply_mlm_mask, MaskedBatch, MaskedRow, NspLabel, IGNORE_INDEX};
use super::nsp::{build_nsp_pairs, split_sentences};
use super::{PretrainConfig, PretrainError};
use crate::nn::{Adam, Encoder, Graph};
use crate::normalizer::NormalizedPost;
use crate::tokenizer::{encode_pair, encode_single, Tokenizer};

const BETA1: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub mlm_loss: f64,
    pub nsp_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub heads: PretrainHeads,
    pub trajectory: Vec<LossRecord>,
}

struct Example {
    ids: Vec<u32>,
    types: Vec<u32>,
    nsp: Option<NspLabel>,
}

fn examples(
    corpus: &[NormalizedPost],
    tokenizer: &dyn Tokenizer,
    config: &PretrainConfig,
) -> Result<Vec<Example>, PretrainError> {
    let sp = tokenizer.special_ids();
    let has_regular = |ids: &[u32]| ids.iter().any(|&i| !sp.contains(i));
    let out: Vec<Example> = if config.use_nsp {
        let pairs = build_nsp_pairs(corpus, config)?;
        pairs
            .par_iter()
            .map(|p| {
                let (ids, types) =
                    encode_pair(tokenizer, &p.segment_a, &p.segment_b, config.max_seq_len);
                let label = if p.is_next {
                    NspLabel::IsNext
                } else {
                    NspLabel::NotNext
                };
                Example {
                    ids,
                    types,
                    nsp: Some(label),
                }
            })
            .filter(|e| has_regular(&e.ids))
            .collect()
    } else {
        let segments: Vec<String> = corpus
            .iter()
            .flat_map(|d| split_sentences(&d.text))
            .collect();
        segments
            .par_iter()
            .map(|s| {
                let ids = encode_single(tokenizer, s, config.max_seq_len);
                let types = vec![0; ids.len()];
                Example {
                    ids,
                    types,
                    nsp: None,
                }
            })
            .filter(|e| has_regular(&e.ids))
            .collect()
    };
    if out.is_empty() {
        return Err(PretrainError::NothingMaskable);
    }
    Ok(out)
}

/// Continued pretraining with freshly initialised MLM/NSP heads.
pub fn run_pretraining(
    corpus: &[NormalizedPost],
    encoder: Encoder,
    tokenizer: &dyn Tokenizer,
    config: &PretrainConfig,
    steps: usize,
) -> Result<PretrainOutcome, PretrainError> {
    let heads = PretrainHeads::random(
        encoder.config.hidden,
        encoder.config.vocab_size,
        config.seed ^ 0x4845_4144,
    );
    run_pretraining_with_heads(corpus, encoder, heads, tokenizer, config, steps)
}

/// Minimises MLM + NSP cross-entropy with Adam at a fixed learning rate.
/// Example `i` of the run (counting across steps) is masked with RNG stream
/// `i` of `config.seed`.
pub fn run_pretraining_with_heads(
    corpus: &[NormalizedPost],
    mut encoder: Encoder,
    mut heads: PretrainHeads,
    tokenizer: &dyn Tokenizer,
    config: &PretrainConfig,
    steps: usize,
) -> Result<PretrainOutcome, PretrainError> {
    config.validate()?;
    if tokenizer.vocab_size() != encoder.config.vocab_size {
        return Err(PretrainError::VocabMismatch {
            tokenizer: tokenizer.vocab_size(),
            encoder: encoder.config.vocab_size,
        });
    }
    if encoder.is_random_init() && !config.allow_random_init {
        return Err(PretrainError::RandomInitRefused);
    }
    if config.max_seq_len > encoder.config.max_positions {
        return Err(PretrainError::InvalidConfig(format!(
            "max_seq_len {} exceeds the encoder's {} positions",
            config.max_seq_len, encoder.config.max_positions
        )));
    }
    if steps == 0 {
        return Ok(PretrainOutcome {
            encoder,
            heads,
            trajectory: Vec::new(),
        });
    }

    let data = examples(corpus, tokenizer, config)?;
    let pad = tokenizer.special_ids().pad;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(u64::MAX);
    let mut order: Vec<usize> = Vec::new();
    let mut adam = Adam::default();
    let mut trajectory = Vec::with_capacity(steps);

    for step in 0..steps {
        let base = step * config.batch_size;
        while order.len() < base + config.batch_size {
            let mut epoch: Vec<usize> = (0..data.len()).collect();
            epoch.shuffle(&mut order_rng);
            order.extend(epoch);
        }
        let picked = &order[base..base + config.batch_size];
        let rows: Vec<(MaskedRow, Vec<u32>)> = picked
            .par_iter()
            .enumerate()
            .map(|(i, &ex)| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((base + i) as u64);
                let e = &data[ex];
                let row = apply_mlm_mask(&e.ids, tokenizer, config, &mut rng)
                    .expect("examples have maskable tokens");
                (row, e.types.clone())
            })
            .collect();
        let nsp_labels: Vec<NspLabel> = picked.iter().filter_map(|&ex| data[ex].nsp).collect();
        let batch = MaskedBatch::collate(&rows, nsp_labels, pad);

        let enc_batch = batch.to_encoder_batch();
        let mut g = Graph::new();
        let hidden = encoder.forward(&mut g, &enc_batch);
        let mut mlm_rows = Vec::new();
        let mut mlm_targets = Vec::new();
        for (r, &label) in batch.mlm_labels.iter().enumerate() {
            if label != IGNORE_INDEX {
                mlm_rows.push(r);
                mlm_targets.push(Some(label as usize));
            }
        }
        let logits = heads.mlm_logits(&mut g, hidden, &mlm_rows);
        let mlm = g.cross_entropy(logits, &mlm_targets);
        let (total, nsp_loss) = if config.use_nsp {
            let cls_rows: Vec<usize> = (0..enc_batch.layout.batch)
                .map(|b| enc_batch.row(b, 0))
                .collect();
            let targets: Vec<Option<usize>> =
                batch.nsp_labels.iter().map(|l| Some(l.class())).collect();
            let logits = heads.nsp_logits(&mut g, hidden, &cls_rows);
            let nsp = g.cross_entropy(logits, &targets);
            (g.add(mlm, nsp), g.scalar(nsp))
        } else {
            (mlm, 0.0)
        };
        let record = LossRecord {
            step,
            mlm_loss: g.scalar(mlm),
            nsp_loss,
            total: g.scalar(total),
        };
        if !record.total.is_finite() {
            return Err(PretrainError::NonFiniteLoss { step });
        }
        let grads = g.backward(total);
        if grads.values().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(PretrainError::NonFiniteLoss { step });
        }
        adam.step(
            &mut [&mut encoder.params, &mut heads.mlm, &mut heads.nsp],
            &grads,
            config.learning_rate,
            BETA1,
        );
        log::debug!("pretrain step {step}: total {:.4}", record.total);
        trajectory.push(record);
    }
    Ok(PretrainOutcome {
        encoder,
        heads,
        trajectory,
    })
}

/// CSV with header `step,mlm_loss,nsp_loss,total`.
pub fn write_trajectory_csv(trajectory: &[LossRecord], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if trajectory.is_empty() {
        w.write_record(["step", "mlm_loss", "nsp_loss", "total"])?;
    }
    for r in trajectory {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{EncoderConfig, WeightOrigin};
    use crate::tokenizer::WordPiece;

    fn post(i: usize, text: &str) -> NormalizedPost {
        NormalizedPost {
            id: i.to_string(),
            text: text.into(),
            platform: Default::default(),
            transforms_applied: Default::default(),
        }
    }

    fn setup() -> (Vec<NormalizedPost>, WordPiece, Encoder) {
        let corpus: Vec<_> = (0..12)
            .map(|i| post(i, &format!("flu shot day {i}. feeling ok")))
            .collect();
        let wp = WordPiece::build(corpus.iter().map(|p| p.text.as_str()), 60);
        let enc = Encoder::random(EncoderConfig::small(wp.vocab_size(), 16, 1, 32), 0);
        (corpus, wp, enc)
    }

    fn toy_config() -> PretrainConfig {
        PretrainConfig {
            allow_random_init: true,
            max_seq_len: 32,
            batch_size: 4,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let (corpus, wp, enc) = setup();
        let out = run_pretraining(&corpus, enc.clone(), &wp, &toy_config(), 0).unwrap();
        assert_eq!(out.encoder.params, enc.params);
        assert!(out.trajectory.is_empty());
    }

    #[test]
    fn random_init_needs_flag() {
        let (corpus, wp, enc) = setup();
        let cfg = PretrainConfig {
            allow_random_init: false,
            ..toy_config()
        };
        assert!(matches!(
            run_pretraining(&corpus, enc.clone(), &wp, &cfg, 1),
            Err(PretrainError::RandomInitRefused)
        ));
        let loaded = enc.with_origin(WeightOrigin::Checkpoint("base.ckpt".into()));
        assert!(run_pretraining(&corpus, loaded, &wp, &cfg, 1).is_ok());
    }

    #[test]
    fn vocab_mismatch_names_both_sizes() {
        let (corpus, wp, _) = setup();
        let enc = Encoder::random(EncoderConfig::small(wp.vocab_size() + 3, 16, 1, 32), 0);
        let err = run_pretraining(&corpus, enc, &wp, &toy_config(), 1).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains(&wp.vocab_size().to_string())
                && msg.contains(&(wp.vocab_size() + 3).to_string())
        );
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let (corpus, wp, enc) = setup();
        let a = run_pretraining(&corpus, enc.clone(), &wp, &toy_config(), 30).unwrap();
        let b = run_pretraining(&corpus, enc, &wp, &toy_config(), 30).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        let first: f64 = a.trajectory[..5].iter().map(|r| r.total).sum();
        let last: f64 = a.trajectory[25..].iter().map(|r| r.total).sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn trajectory_csv_header() {
        let mut out = Vec::new();
        write_trajectory_csv(
            &[LossRecord {
                step: 0,
                mlm_loss: 1.0,
                nsp_loss: 0.5,
                total: 1.5,
            }],
            &mut out,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "step,mlm_loss,nsp_loss,total\n0,1.0,0.5,1.5\n"
        );
    }
}
