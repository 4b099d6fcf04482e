use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, SeqLayout, Var};
use super::params::{ParamRef, ParamSet};

pub const ENCODER_GROUP: u16 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_type_vocab() -> usize {
    2
}

fn default_ln_eps() -> f64 {
    1e-12
}

impl EncoderConfig {
    /// A small configuration: `layers` blocks of width `hidden`, four times
    /// wider feed-forward, 64-dim heads (at least one).
    pub fn small(vocab_size: usize, hidden: usize, layers: usize, max_positions: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden,
            layers,
            heads: (hidden / 64).max(1),
            intermediate: 4 * hidden,
            max_positions,
            type_vocab: 2,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vocab_size == 0 || self.hidden == 0 || self.layers == 0 || self.max_positions == 0 {
            return Err("vocab_size, hidden, layers and max_positions must be positive".into());
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(format!(
                "hidden {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        Ok(())
    }
}

/// Where the encoder weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightOrigin {
    Checkpoint(String),
    RandomInit { seed: u64 },
}

#[derive(Debug, Clone)]
struct LayerRefs {
    q_w: ParamRef,
    q_b: ParamRef,
    k_w: ParamRef,
    k_b: ParamRef,
    v_w: ParamRef,
    v_b: ParamRef,
    o_w: ParamRef,
    o_b: ParamRef,
    ln1_g: ParamRef,
    ln1_b: ParamRef,
    ff1_w: ParamRef,
    ff1_b: ParamRef,
    ff2_w: ParamRef,
    ff2_b: ParamRef,
    ln2_g: ParamRef,
    ln2_b: ParamRef,
}

#[derive(Debug, Clone)]
struct Refs {
    word: ParamRef,
    pos: ParamRef,
    kind: ParamRef,
    ln_g: ParamRef,
    ln_b: ParamRef,
    layers: Vec<LayerRefs>,
}

/// Padded batch of token sequences, flattened row-major (`batch × seq_len`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBatch {
    pub input_ids: Vec<u32>,
    pub type_ids: Vec<u32>,
    pub layout: SeqLayout,
}

impl EncoderBatch {
    /// Pads `(ids, type_ids)` pairs to the longest sequence.
    pub fn from_sequences(seqs: &[(Vec<u32>, Vec<u32>)], pad_id: u32) -> EncoderBatch {
        let seq_len = seqs.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        let mut input_ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut type_ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut key_mask = Vec::with_capacity(seqs.len() * seq_len);
        for (ids, types) in seqs {
            assert_eq!(ids.len(), types.len());
            for t in 0..seq_len {
                let real = t < ids.len();
                input_ids.push(if real { ids[t] } else { pad_id });
                type_ids.push(if real { types[t] } else { 0 });
                key_mask.push(real);
            }
        }
        EncoderBatch {
            input_ids,
            type_ids,
            layout: SeqLayout {
                batch: seqs.len(),
                seq_len,
                key_mask,
            },
        }
    }

    pub fn rows(&self) -> usize {
        self.input_ids.len()
    }

    /// Row index of position `pos` in sequence `b`.
    pub fn row(&self, b: usize, pos: usize) -> usize {
        b * self.layout.seq_len + pos
    }
}

/// BERT-style transformer encoder (post-layer-norm, GELU feed-forward).
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub origin: WeightOrigin,
    refs: Refs,
}

impl Encoder {
    pub fn random(config: EncoderConfig, seed: u64) -> Encoder {
        config.validate().expect("valid encoder config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, i) = (config.hidden, config.intermediate);
        let std = 0.02;
        let mut p = ParamSet::new(ENCODER_GROUP);
        p.add_normal("embeddings.word", config.vocab_size, h, std, &mut rng);
        p.add_normal(
            "embeddings.position",
            config.max_positions,
            h,
            std,
            &mut rng,
        );
        p.add_normal("embeddings.type", config.type_vocab, h, std, &mut rng);
        p.add_ones("embeddings.ln.gamma", 1, h);
        p.add_zeros("embeddings.ln.beta", 1, h);
        for l in 0..config.layers {
            for proj in ["query", "key", "value", "output"] {
                p.add_normal(
                    &format!("layer{l}.attention.{proj}.weight"),
                    h,
                    h,
                    std,
                    &mut rng,
                );
                p.add_zeros(&format!("layer{l}.attention.{proj}.bias"), 1, h);
            }
            p.add_ones(&format!("layer{l}.attention.ln.gamma"), 1, h);
            p.add_zeros(&format!("layer{l}.attention.ln.beta"), 1, h);
            p.add_normal(&format!("layer{l}.ffn.in.weight"), h, i, std, &mut rng);
            p.add_zeros(&format!("layer{l}.ffn.in.bias"), 1, i);
            p.add_normal(&format!("layer{l}.ffn.out.weight"), i, h, std, &mut rng);
            p.add_zeros(&format!("layer{l}.ffn.out.bias"), 1, h);
            p.add_ones(&format!("layer{l}.ffn.ln.gamma"), 1, h);
            p.add_zeros(&format!("layer{l}.ffn.ln.beta"), 1, h);
        }
        Encoder::from_params(config, p, WeightOrigin::RandomInit { seed })
            .expect("fresh params are complete")
    }

    /// Wraps loaded parameters, checking every expected tensor and shape.
    pub fn from_params(
        config: EncoderConfig,
        params: ParamSet,
        origin: WeightOrigin,
    ) -> Result<Encoder, String> {
        config.validate()?;
        let (h, i) = (config.hidden, config.intermediate);
        let get = |name: &str, rows: usize, cols: usize| -> Result<ParamRef, String> {
            let p = params
                .find(name)
                .ok_or_else(|| format!("missing tensor {name}"))?;
            let dim = params.get(p).dim();
            if dim != (rows, cols) {
                return Err(format!(
                    "tensor {name} has shape {dim:?}, expected ({rows}, {cols})"
                ));
            }
            Ok(p)
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let a = |n: &str| format!("layer{l}.attention.{n}");
            let f = |n: &str| format!("layer{l}.ffn.{n}");
            layers.push(LayerRefs {
                q_w: get(&a("query.weight"), h, h)?,
                q_b: get(&a("query.bias"), 1, h)?,
                k_w: get(&a("key.weight"), h, h)?,
                k_b: get(&a("key.bias"), 1, h)?,
                v_w: get(&a("value.weight"), h, h)?,
                v_b: get(&a("value.bias"), 1, h)?,
                o_w: get(&a("output.weight"), h, h)?,
                o_b: get(&a("output.bias"), 1, h)?,
                ln1_g: get(&a("ln.gamma"), 1, h)?,
                ln1_b: get(&a("ln.beta"), 1, h)?,
                ff1_w: get(&f("in.weight"), h, i)?,
                ff1_b: get(&f("in.bias"), 1, i)?,
                ff2_w: get(&f("out.weight"), i, h)?,
                ff2_b: get(&f("out.bias"), 1, h)?,
                ln2_g: get(&f("ln.gamma"), 1, h)?,
                ln2_b: get(&f("ln.beta"), 1, h)?,
            });
        }
        let refs = Refs {
            word: get("embeddings.word", config.vocab_size, h)?,
            pos: get("embeddings.position", config.max_positions, h)?,
            kind: get("embeddings.type", config.type_vocab, h)?,
            ln_g: get("embeddings.ln.gamma", 1, h)?,
            ln_b: get("embeddings.ln.beta", 1, h)?,
            layers,
        };
        if params.len() != 5 + 16 * config.layers {
            return Err(format!("unexpected tensor count {}", params.len()));
        }
        Ok(Encoder {
            config,
            params,
            origin,
            refs,
        })
    }

    pub fn with_origin(mut self, origin: WeightOrigin) -> Encoder {
        self.origin = origin;
        self
    }

    pub fn is_random_init(&self) -> bool {
        matches!(self.origin, WeightOrigin::RandomInit { .. })
    }

    /// Hidden states for every row of the batch (`rows × hidden`).
    pub fn forward(&self, g: &mut Graph, batch: &EncoderBatch) -> Var {
        let t = batch.layout.seq_len;
        assert!(
            t <= self.config.max_positions,
            "sequence longer than max_positions"
        );
        let eps = self.config.layer_norm_eps;
        let p = &self.params;
        let r = &self.refs;
        let ids: Vec<usize> = batch.input_ids.iter().map(|&i| i as usize).collect();
        let types: Vec<usize> = batch.type_ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..batch.rows()).map(|row| row % t.max(1)).collect();

        let word = g.param(p, r.word);
        let pos = g.param(p, r.pos);
        let kind = g.param(p, r.kind);
        let e_word = g.gather(word, &ids);
        let e_pos = g.gather(pos, &positions);
        let e_type = g.gather(kind, &types);
        let e = g.add(e_word, e_pos);
        let e = g.add(e, e_type);
        let (lg, lb) = (g.param(p, r.ln_g), g.param(p, r.ln_b));
        let mut x = g.layer_norm(e, lg, lb, eps);

        for l in &r.layers {
            let lin = |g: &mut Graph, x: Var, w: ParamRef, b: ParamRef| {
                let (w, b) = (g.param(p, w), g.param(p, b));
                g.linear(x, w, b)
            };
            let q = lin(g, x, l.q_w, l.q_b);
            let k = lin(g, x, l.k_w, l.k_b);
            let v = lin(g, x, l.v_w, l.v_b);
            let ctx = g.attention(q, k, v, &batch.layout, self.config.heads);
            let o = lin(g, ctx, l.o_w, l.o_b);
            let res = g.add(x, o);
            let (g1, b1) = (g.param(p, l.ln1_g), g.param(p, l.ln1_b));
            let x1 = g.layer_norm(res, g1, b1, eps);
            let hmid = lin(g, x1, l.ff1_w, l.ff1_b);
            let hmid = g.gelu(hmid);
            let f = lin(g, hmid, l.ff2_w, l.ff2_b);
            let res = g.add(x1, f);
            let (g2, b2) = (g.param(p, l.ln2_g), g.param(p, l.ln2_b));
            x = g.layer_norm(res, g2, b2, eps);
        }
        x
    }
}
