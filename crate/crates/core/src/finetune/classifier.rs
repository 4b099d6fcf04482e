use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FinetuneError;
use crate::nn::{
    softmax_rows, Checkpoint, Encoder, EncoderBatch, Graph, Matrix, ParamRef, ParamSet, Var,
};
use crate::tokenizer::{encode_single, Tokenizer, WordPiece};

pub const HEAD_GROUP: u16 = 3;

/// Hidden layer widths of the tanh MLP; `None` means one layer of encoder width.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHeadSpec {
    pub hidden_dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadMeta {
    num_classes: usize,
    hidden_dims: Vec<usize>,
    max_seq_len: usize,
}

/// Encoder + tanh MLP over the CLS state of the last layer.
#[derive(Clone)]
pub struct SequenceClassifier {
    pub encoder: Encoder,
    pub head: ParamSet,
    tokenizer: Arc<dyn Tokenizer>,
    layers: Vec<(ParamRef, ParamRef)>,
    num_classes: usize,
    hidden_dims: Vec<usize>,
    max_seq_len: usize,
    cls_position: usize,
}

impl std::fmt::Debug for SequenceClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SequenceClassifier")
            .field("num_classes", &self.num_classes)
            .field("hidden_dims", &self.hidden_dims)
            .field("max_seq_len", &self.max_seq_len)
            .finish_non_exhaustive()
    }
}

fn head_layers(head: &ParamSet, depth: usize) -> Result<Vec<(ParamRef, ParamRef)>, FinetuneError> {
    (0..=depth)
        .map(|i| {
            let w = head.find(&format!("dense{i}.weight"));
            let b = head.find(&format!("dense{i}.bias"));
            w.zip(b).ok_or_else(|| {
                FinetuneError::IncompatibleModel(format!("classifier layer {i} is missing"))
            })
        })
        .collect()
}

/// Builds a classifier with a freshly initialised head.
pub fn build_classifier(
    encoder: Encoder,
    tokenizer: Arc<dyn Tokenizer>,
    num_classes: usize,
    spec: &ClassifierHeadSpec,
    max_seq_len: usize,
    seed: u64,
) -> Result<SequenceClassifier, FinetuneError> {
    if num_classes < 2 {
        return Err(FinetuneError::TooFewClasses(num_classes));
    }
    let cls_position = tokenizer
        .cls_position()
        .ok_or(FinetuneError::NoClsPosition)?;
    if tokenizer.vocab_size() != encoder.config.vocab_size {
        return Err(FinetuneError::IncompatibleModel(format!(
            "tokenizer has {} tokens but the encoder embedding table has {} rows",
            tokenizer.vocab_size(),
            encoder.config.vocab_size
        )));
    }
    if max_seq_len > encoder.config.max_positions || max_seq_len < 2 {
        return Err(FinetuneError::IncompatibleModel(format!(
            "max_seq_len {max_seq_len} must be in 2..={}",
            encoder.config.max_positions
        )));
    }
    let hidden_dims = spec
        .hidden_dims
        .clone()
        .unwrap_or_else(|| vec![encoder.config.hidden]);
    if hidden_dims.contains(&0) {
        return Err(FinetuneError::IncompatibleModel(
            "hidden layer width 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = ParamSet::new(HEAD_GROUP);
    let mut width = encoder.config.hidden;
    for (i, &d) in hidden_dims
        .iter()
        .chain(std::iter::once(&num_classes))
        .enumerate()
    {
        head.add_normal(&format!("dense{i}.weight"), width, d, 0.02, &mut rng);
        head.add_zeros(&format!("dense{i}.bias"), 1, d);
        width = d;
    }
    let layers = head_layers(&head, hidden_dims.len())?;
    Ok(SequenceClassifier {
        encoder,
        head,
        tokenizer,
        layers,
        num_classes,
        hidden_dims,
        max_seq_len,
        cls_position,
    })
}

impl SequenceClassifier {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        encode_single(self.tokenizer.as_ref(), text, self.max_seq_len)
    }

    pub(crate) fn batch(&self, sequences: &[Vec<u32>]) -> EncoderBatch {
        let seqs: Vec<(Vec<u32>, Vec<u32>)> = sequences
            .iter()
            .map(|s| (s.clone(), vec![0; s.len()]))
            .collect();
        EncoderBatch::from_sequences(&seqs, self.tokenizer.special_ids().pad)
    }

    /// Last-layer states at the CLS position, one row per sequence.
    pub fn cls_features(&self, g: &mut Graph, batch: &EncoderBatch) -> Var {
        let hidden = self.encoder.forward(g, batch);
        let rows: Vec<usize> = (0..batch.layout.batch)
            .map(|b| batch.row(b, self.cls_position))
            .collect();
        g.select_rows(hidden, &rows)
    }

    /// Head logits from CLS features (`n × hidden`).
    pub fn head_logits(&self, g: &mut Graph, features: Var) -> Var {
        let mut x = features;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (g.param(&self.head, w), g.param(&self.head, b));
            x = g.linear(x, w, b);
            if i < last {
                x = g.tanh(x);
            }
        }
        x
    }

    pub(crate) fn logits_for(&self, g: &mut Graph, sequences: &[Vec<u32>]) -> Var {
        let batch = self.batch(sequences);
        let features = self.cls_features(g, &batch);
        self.head_logits(g, features)
    }

    /// Raw class scores, one row per text.
    pub fn logits(&self, texts: &[&str]) -> Matrix {
        if texts.is_empty() {
            return Matrix::zeros((0, self.num_classes));
        }
        let seqs: Vec<Vec<u32>> = texts.iter().map(|t| self.encode(t)).collect();
        let mut g = Graph::new();
        let l = self.logits_for(&mut g, &seqs);
        g.value(l).clone()
    }

    /// Class probabilities, one row per text; rows sum to 1.
    pub fn predict(&self, texts: &[&str]) -> Matrix {
        softmax_rows(&self.logits(texts))
    }

    /// Argmax labels, batched.
    pub fn predict_labels(&self, texts: &[&str], batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(batch_size.max(1)) {
            let p = self.predict(chunk);
            for row in p.rows() {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    );
                out.push(best.0);
            }
        }
        out
    }

    pub fn to_checkpoint(&self, vocab: Option<Vec<String>>) -> Checkpoint {
        let meta = HeadMeta {
            num_classes: self.num_classes,
            hidden_dims: self.hidden_dims.clone(),
            max_seq_len: self.max_seq_len,
        };
        Checkpoint {
            encoder: self.encoder.clone(),
            heads: vec![("classifier".into(), self.head.clone())],
            vocab,
            metadata: serde_json::json!({ "classifier": meta }),
        }
    }

    /// Saves weights and the WordPiece vocabulary.
    pub fn save(&self, path: &Path, vocab: &WordPiece) -> Result<(), FinetuneError> {
        self.to_checkpoint(Some(vocab.tokens().to_vec()))
            .save(path)
            .map_err(|e| FinetuneError::IncompatibleModel(e.to_string()))
    }

    /// Restores a classifier saved by [`SequenceClassifier::save`].
    pub fn load(path: &Path) -> Result<SequenceClassifier, FinetuneError> {
        let ck =
            Checkpoint::load(path).map_err(|e| FinetuneError::IncompatibleModel(e.to_string()))?;
        let meta: HeadMeta = serde_json::from_value(ck.metadata["classifier"].clone())
            .map_err(|e| FinetuneError::IncompatibleModel(format!("classifier metadata: {e}")))?;
        let head = ck.head("classifier").cloned().ok_or_else(|| {
            FinetuneError::IncompatibleModel("checkpoint has no classifier head".into())
        })?;
        let vocab = ck.vocab.clone().ok_or_else(|| {
            FinetuneError::IncompatibleModel("checkpoint has no vocabulary".into())
        })?;
        let tokenizer = WordPiece::from_tokens(vocab)
            .map_err(|e| FinetuneError::IncompatibleModel(e.to_string()))?;
        let layers = head_layers(&head, meta.hidden_dims.len())?;
        let cls_position = tokenizer
            .cls_position()
            .ok_or(FinetuneError::NoClsPosition)?;
        Ok(SequenceClassifier {
            encoder: ck.encoder,
            head,
            tokenizer: Arc::new(tokenizer),
            layers,
            num_classes: meta.num_classes,
            hidden_dims: meta.hidden_dims,
            max_seq_len: meta.max_seq_len,
            cls_position,
        })
    }
}
