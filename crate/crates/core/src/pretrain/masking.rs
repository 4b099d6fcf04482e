use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PretrainConfig, PretrainError};
use crate::nn::{EncoderBatch, SeqLayout};
use crate::tokenizer::{SpecialIds, Tokenizer};

/// Label value at positions that carry no MLM target.
pub const IGNORE_INDEX: i64 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspLabel {
    IsNext,
    NotNext,
}

impl NspLabel {
    pub fn class(self) -> usize {
        match self {
            NspLabel::IsNext => 0,
            NspLabel::NotNext => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedRow {
    pub input_ids: Vec<u32>,
    pub mlm_labels: Vec<i64>,
    /// Selected positions in ascending order with what was done to each.
    pub perturbations: Vec<(usize, Perturbation)>,
}

fn random_regular_id(rng: &mut impl Rng, vocab_size: usize, specials: &[u32]) -> Option<u32> {
    let regular = vocab_size
        - specials
            .iter()
            .filter(|&&s| (s as usize) < vocab_size)
            .count();
    if regular == 0 {
        return None;
    }
    let mut id = rng.random_range(0..regular) as u32;
    // `specials` is sorted: shift past every special at or below the candidate.
    for &s in specials {
        if s <= id {
            id += 1;
        }
    }
    Some(id)
}

/// Selects `max(1, round(mask_rate · n))` of the `n` non-special positions
/// uniformly, then masks, randomises or keeps each one.
pub fn apply_mlm_mask(
    token_ids: &[u32],
    tokenizer: &dyn Tokenizer,
    config: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<MaskedRow, PretrainError> {
    let sp: SpecialIds = tokenizer.special_ids();
    let maskable: Vec<usize> = (0..token_ids.len())
        .filter(|&i| !sp.contains(token_ids[i]))
        .collect();
    if maskable.is_empty() {
        return Err(PretrainError::NothingMaskable);
    }
    let n = maskable.len();
    let k = ((config.mask_rate * n as f64).round() as usize).clamp(1, n);
    let mut chosen: Vec<usize> = index::sample(rng, n, k)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    chosen.sort_unstable();

    let mut specials = vec![sp.pad, sp.unk, sp.cls, sp.sep, sp.mask];
    specials.sort_unstable();
    specials.dedup();

    let mut input_ids = token_ids.to_vec();
    let mut mlm_labels = vec![IGNORE_INDEX; token_ids.len()];
    let mut perturbations = Vec::with_capacity(k);
    for pos in chosen {
        mlm_labels[pos] = token_ids[pos] as i64;
        let u: f64 = rng.random();
        let kind = if u < config.mask_token_frac {
            input_ids[pos] = sp.mask;
            Perturbation::Mask
        } else if u < config.mask_token_frac + config.random_token_frac {
            if let Some(id) = random_regular_id(rng, tokenizer.vocab_size(), &specials) {
                input_ids[pos] = id;
            }
            Perturbation::Random
        } else {
            Perturbation::Keep
        };
        perturbations.push((pos, kind));
    }
    Ok(MaskedRow {
        input_ids,
        mlm_labels,
        perturbations,
    })
}

/// A padded MLM/NSP batch (`batch × seq`).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub input_ids: Array2<u32>,
    pub token_type_ids: Array2<u32>,
    pub mlm_labels: Array2<i64>,
    pub nsp_labels: Vec<NspLabel>,
    pub attention_mask: Array2<u8>,
}

impl MaskedBatch {
    /// Pads `(row, token_type_ids)` pairs to the longest row.
    pub fn collate(
        rows: &[(MaskedRow, Vec<u32>)],
        nsp_labels: Vec<NspLabel>,
        pad_id: u32,
    ) -> MaskedBatch {
        let b = rows.len();
        let t = rows
            .iter()
            .map(|(r, _)| r.input_ids.len())
            .max()
            .unwrap_or(0);
        let mut input_ids = Array2::from_elem((b, t), pad_id);
        let mut token_type_ids = Array2::zeros((b, t));
        let mut mlm_labels = Array2::from_elem((b, t), IGNORE_INDEX);
        let mut attention_mask = Array2::zeros((b, t));
        for (i, (row, types)) in rows.iter().enumerate() {
            for j in 0..row.input_ids.len() {
                input_ids[[i, j]] = row.input_ids[j];
                token_type_ids[[i, j]] = types[j];
                mlm_labels[[i, j]] = row.mlm_labels[j];
                attention_mask[[i, j]] = 1;
            }
        }
        MaskedBatch {
            input_ids,
            token_type_ids,
            mlm_labels,
            nsp_labels,
            attention_mask,
        }
    }

    pub fn to_encoder_batch(&self) -> EncoderBatch {
        let (batch, seq_len) = self.input_ids.dim();
        EncoderBatch {
            input_ids: self.input_ids.iter().copied().collect(),
            type_ids: self.token_type_ids.iter().copied().collect(),
            layout: SeqLayout {
                batch,
                seq_len,
                key_mask: self.attention_mask.iter().map(|&m| m == 1).collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{WordPiece, CLS, MASK, PAD, SEP, UNK};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> WordPiece {
        let mut t: Vec<String> = [PAD, UNK, CLS, SEP, MASK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        t.extend((0..20).map(|i| format!("w{i}")));
        WordPiece::from_tokens(t).unwrap()
    }

    #[test]
    fn hundred_tokens_fifteen_labels() {
        let wp = vocab();
        let sp = wp.special_ids();
        let mut ids = vec![sp.cls];
        ids.extend((0..100).map(|i| 5 + (i % 20) as u32));
        ids.push(sp.sep);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let row = apply_mlm_mask(&ids, &wp, &PretrainConfig::default(), &mut rng).unwrap();
        assert_eq!(
            row.mlm_labels
                .iter()
                .filter(|&&l| l != IGNORE_INDEX)
                .count(),
            15
        );
        assert_eq!(row.mlm_labels[0], IGNORE_INDEX);
        assert_eq!(row.mlm_labels[101], IGNORE_INDEX);
    }

    #[test]
    fn all_special_is_an_error() {
        let wp = vocab();
        let sp = wp.special_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = apply_mlm_mask(&[sp.cls, sp.sep], &wp, &PretrainConfig::default(), &mut rng)
            .unwrap_err();
        assert!(matches!(err, PretrainError::NothingMaskable));
    }

    #[test]
    fn at_least_one_selected() {
        let wp = vocab();
        let sp = wp.special_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let row = apply_mlm_mask(
            &[sp.cls, 7, sp.sep],
            &wp,
            &PretrainConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(row.perturbations.len(), 1);
        assert_eq!(row.mlm_labels[1], 7);
    }

    #[test]
    fn random_ids_skip_specials() {
        let specials = [0, 1, 2, 3, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let id = random_regular_id(&mut rng, 25, &specials).unwrap();
            assert!((5..25).contains(&id));
        }
        assert_eq!(random_regular_id(&mut rng, 5, &specials), None);
        let scattered = [0, 3, 7];
        for _ in 0..1000 {
            let id = random_regular_id(&mut rng, 9, &scattered).unwrap();
            assert!(!scattered.contains(&id) && id < 9);
        }
    }

    #[test]
    fn collate_pads_and_masks() {
        let a = MaskedRow {
            input_ids: vec![2, 9, 3],
            mlm_labels: vec![IGNORE_INDEX, 9, IGNORE_INDEX],
            perturbations: vec![(1, Perturbation::Keep)],
        };
        let b = MaskedRow {
            input_ids: vec![2, 3],
            mlm_labels: vec![IGNORE_INDEX; 2],
            perturbations: vec![],
        };
        let batch = MaskedBatch::collate(
            &[(a, vec![0; 3]), (b, vec![0; 2])],
            vec![NspLabel::IsNext, NspLabel::NotNext],
            0,
        );
        assert_eq!(batch.attention_mask.row(1).to_vec(), vec![1, 1, 0]);
        assert_eq!(batch.input_ids[[1, 2]], 0);
        assert_eq!(batch.mlm_labels[[1, 2]], IGNORE_INDEX);
        let enc = batch.to_encoder_batch();
        assert_eq!(
            enc.layout.key_mask,
            vec![true, true, true, true, true, false]
        );
    }
}
