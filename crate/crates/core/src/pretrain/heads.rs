use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{Graph, ParamRef, ParamSet, Var};

pub const MLM_GROUP: u16 = 1;
pub const NSP_GROUP: u16 = 2;

/// MLM prediction head (dense + GELU + layer norm + vocabulary decoder) and
/// NSP head (tanh pooler over the CLS state + 2-way classifier).
#[derive(Debug, Clone)]
pub struct PretrainHeads {
    pub mlm: ParamSet,
    pub nsp: ParamSet,
    layer_norm_eps: f64,
}

fn r(set: &ParamSet, name: &str) -> ParamRef {
    set.find(name)
        .unwrap_or_else(|| panic!("head tensor {name} missing"))
}

impl PretrainHeads {
    pub fn random(hidden: usize, vocab_size: usize, seed: u64) -> PretrainHeads {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlm = ParamSet::new(MLM_GROUP);
        mlm.add_normal("transform.weight", hidden, hidden, 0.02, &mut rng);
        mlm.add_zeros("transform.bias", 1, hidden);
        mlm.add_ones("ln.gamma", 1, hidden);
        mlm.add_zeros("ln.beta", 1, hidden);
        mlm.add_normal("decoder.weight", hidden, vocab_size, 0.02, &mut rng);
        mlm.add_zeros("decoder.bias", 1, vocab_size);
        let mut nsp = ParamSet::new(NSP_GROUP);
        nsp.add_normal("pooler.weight", hidden, hidden, 0.02, &mut rng);
        nsp.add_zeros("pooler.bias", 1, hidden);
        nsp.add_normal("classifier.weight", hidden, 2, 0.02, &mut rng);
        nsp.add_zeros("classifier.bias", 1, 2);
        PretrainHeads {
            mlm,
            nsp,
            layer_norm_eps: 1e-12,
        }
    }

    /// Reuses head weights from a checkpoint when both sets are present and
    /// shaped for this encoder.
    pub fn from_sets(
        mlm: &ParamSet,
        nsp: &ParamSet,
        hidden: usize,
        vocab_size: usize,
    ) -> Option<PretrainHeads> {
        let fresh = PretrainHeads::random(hidden, vocab_size, 0);
        let compatible = |a: &ParamSet, b: &ParamSet| {
            a.len() == b.len()
                && a.iter()
                    .zip(b.iter())
                    .all(|((n1, m1), (n2, m2))| n1 == n2 && m1.dim() == m2.dim())
        };
        if mlm.group() != MLM_GROUP || nsp.group() != NSP_GROUP {
            return None;
        }
        (compatible(mlm, &fresh.mlm) && compatible(nsp, &fresh.nsp)).then(|| PretrainHeads {
            mlm: mlm.clone(),
            nsp: nsp.clone(),
            layer_norm_eps: 1e-12,
        })
    }

    /// Vocabulary logits for the given rows of the hidden states.
    pub fn mlm_logits(&self, g: &mut Graph, hidden: Var, rows: &[usize]) -> Var {
        let p = &self.mlm;
        let x = g.select_rows(hidden, rows);
        let (w, b) = (
            g.param(p, r(p, "transform.weight")),
            g.param(p, r(p, "transform.bias")),
        );
        let x = g.linear(x, w, b);
        let x = g.gelu(x);
        let (lg, lb) = (g.param(p, r(p, "ln.gamma")), g.param(p, r(p, "ln.beta")));
        let x = g.layer_norm(x, lg, lb, self.layer_norm_eps);
        let (w, b) = (
            g.param(p, r(p, "decoder.weight")),
            g.param(p, r(p, "decoder.bias")),
        );
        g.linear(x, w, b)
    }

    /// Two-way logits from the CLS rows.
    pub fn nsp_logits(&self, g: &mut Graph, hidden: Var, cls_rows: &[usize]) -> Var {
        let p = &self.nsp;
        let x = g.select_rows(hidden, cls_rows);
        let (w, b) = (
            g.param(p, r(p, "pooler.weight")),
            g.param(p, r(p, "pooler.bias")),
        );
        let x = g.linear(x, w, b);
        let x = g.tanh(x);
        let (w, b) = (
            g.param(p, r(p, "classifier.weight")),
            g.param(p, r(p, "classifier.bias")),
        );
        g.linear(x, w, b)
    }
}
