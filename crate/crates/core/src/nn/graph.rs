//! Define-by-run reverse-mode autodiff over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar (1×1) node returns the gradient of that
//! scalar with respect to every parameter leaf that took part.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamRef, ParamSet};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row layout of a padded batch: `batch` sequences of `seq_len` rows each,
/// with `key_mask[b * seq_len + t]` false at padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub seq_len: usize,
    pub key_mask: Vec<bool>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

enum Op {
    Input,
    Param(ParamRef),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        probs: Vec<Matrix>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix,
        count: usize,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Parameter gradients keyed by parameter.
pub type Grads = HashMap<ParamRef, Matrix>;

/// Row-wise softmax, stable under large logits.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant (no gradient is reported for it).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, set: &ParamSet, p: ParamRef) -> Var {
        self.push(set.get(p).clone(), Op::Param(p))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// `a (n×m) + bias (1×m)` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddBias(a, bias))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Matrix::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.row_mut(r).assign(&row.mapv(|v| (v - mean) * inv));
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over a padded batch.
    /// `q`, `k`, `v` are `(batch·seq_len) × hidden`; heads split the columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: &SeqLayout, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let hidden = qv.ncols();
        assert_eq!(hidden % heads, 0, "hidden size must divide into heads");
        assert_eq!(qv.nrows(), layout.batch * layout.seq_len);
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = layout.seq_len;
        let mut out = Matrix::zeros(qv.dim());
        let mut probs = Vec::with_capacity(layout.batch * heads);
        for b in 0..layout.batch {
            let rows = b * t..(b + 1) * t;
            let mask = &layout.key_mask[rows.clone()];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = qv.slice(s![rows.clone(), cols.clone()]);
                let kb = kv.slice(s![rows.clone(), cols.clone()]);
                let vb = vv.slice(s![rows.clone(), cols.clone()]);
                let mut scores = qb.dot(&kb.t()) * scale;
                for (j, &keep) in mask.iter().enumerate() {
                    if !keep {
                        scores.column_mut(j).fill(-1e30);
                    }
                }
                let p = softmax_rows(&scores);
                out.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout: layout.clone(),
                heads,
                probs,
            },
        )
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let value = tv.select(Axis(0), ids);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select(Axis(0), rows);
        self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Mean softmax cross-entropy over rows with a target; `None` rows are
    /// ignored. Returns a 1×1 node (0 when no row has a target).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                loss -= probs[[r, t]].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        if count > 0 {
            loss /= count as f64;
        }
        self.push(
            Matrix::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Gradients of the scalar `loss` for every node.
    pub fn backward_all(&self, loss: Var) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&grad);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, grad.clone());
                    acc(&mut grads, *b, grad.clone());
                }
                Op::AddBias(a, bias) => {
                    let gb = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, grad.clone());
                    acc(&mut grads, *bias, gb);
                }
                Op::Tanh(a) => {
                    let mut g = grad.clone();
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let mut g = grad.clone();
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                        let th = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                        *g *= 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                    });
                    acc(&mut grads, *a, g);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let dgamma = (&grad * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &grad * gv;
                    let cols = xhat.ncols() as f64;
                    let mut dx = Matrix::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dxr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dxr.sum();
                        let sum_dx = dxr.dot(&xr);
                        let inv = inv_std[r];
                        let mut out = dx.row_mut(r);
                        for c in 0..xhat.ncols() {
                            out[c] = inv / cols * (cols * dxr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    layout,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let hidden = qv.ncols();
                    let dh = hidden / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let t = layout.seq_len;
                    let mut dq = Matrix::zeros(qv.dim());
                    let mut dk = Matrix::zeros(kv.dim());
                    let mut dv = Matrix::zeros(vv.dim());
                    for b in 0..layout.batch {
                        let rows = b * t..(b + 1) * t;
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            let p = &probs[b * heads + h];
                            let go = grad.slice(s![rows.clone(), cols.clone()]);
                            let qb = qv.slice(s![rows.clone(), cols.clone()]);
                            let kb = kv.slice(s![rows.clone(), cols.clone()]);
                            let vb = vv.slice(s![rows.clone(), cols.clone()]);
                            dv.slice_mut(s![rows.clone(), cols.clone()])
                                .assign(&p.t().dot(&go));
                            let dp = go.dot(&vb.t());
                            let mut ds = &dp * p;
                            for (r, mut row) in ds.rows_mut().into_iter().enumerate() {
                                let inner: f64 = dp.row(r).dot(&p.row(r));
                                Zip::from(&mut row)
                                    .and(p.row(r))
                                    .for_each(|d, &pv| *d -= pv * inner);
                            }
                            ds *= scale;
                            dq.slice_mut(s![rows.clone(), cols.clone()])
                                .assign(&ds.dot(&kb));
                            dk.slice_mut(s![rows.clone(), cols])
                                .assign(&ds.t().dot(&qb));
                        }
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::Gather { table, ids } => {
                    let mut g = Matrix::zeros(self.value(*table).dim());
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = g.row_mut(id);
                        row += &grad.row(i);
                    }
                    acc(&mut grads, *table, g);
                }
                Op::SelectRows { x, rows } => {
                    let mut g = Matrix::zeros(self.value(*x).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut row = g.row_mut(r);
                        row += &grad.row(i);
                    }
                    acc(&mut grads, *x, g);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    if *count == 0 {
                        continue;
                    }
                    let upstream = grad[[0, 0]] / *count as f64;
                    let mut g = Matrix::zeros(probs.dim());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let mut row = g.row_mut(r);
                            row.assign(&probs.row(r));
                            row[t] -= 1.0;
                            row *= upstream;
                        }
                    }
                    acc(&mut grads, *logits, g);
                }
            }
            grads[idx] = Some(grad);
        }
        grads
    }

    /// Gradients of the scalar `loss` with respect to the parameter leaves.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut all = self.backward_all(loss);
        let mut out: Grads = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                if let Some(g) = all[idx].take() {
                    match out.get_mut(&p) {
                        Some(existing) => *existing += &g,
                        None => {
                            out.insert(p, g);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` at every entry of the input matrices.
    fn numeric_grads(inputs: &[Matrix], f: &dyn Fn(&[Matrix]) -> f64) -> Vec<Matrix> {
        let h = 1e-6;
        inputs
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut g = Matrix::zeros(m.dim());
                for idx in 0..m.len() {
                    let mut plus = inputs.to_vec();
                    let mut minus = inputs.to_vec();
                    let (r, c) = (idx / m.ncols(), idx % m.ncols());
                    plus[i][[r, c]] += h;
                    minus[i][[r, c]] -= h;
                    g[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
                }
                g
            })
            .collect()
    }

    fn check(inputs: Vec<Matrix>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |ms: &[Matrix]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ms.iter().map(|m| g.input(m.clone())).collect();
            let out = build(&mut g, &vars);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let out = build(&mut g, &vars);
        let all = g.backward_all(out);
        let numeric = numeric_grads(&inputs, &eval);
        for (v, num) in vars.iter().zip(numeric) {
            let analytic = all[v.0].clone().unwrap_or_else(|| Matrix::zeros(num.dim()));
            for (a, n) in analytic.iter().zip(num.iter()) {
                let denom = a.abs().max(n.abs()).max(1e-3);
                assert!((a - n).abs() / denom < 1e-5, "analytic {a} vs numeric {n}");
            }
        }
    }

    // Reduces a matrix to a scalar through fixed random weights so every
    // entry gets a distinct upstream gradient.
    fn reduce(g: &mut Graph, x: Var, seed: u64) -> Var {
        let (rows, cols) = g.value(x).dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.input(random(cols, 3, &mut rng));
        let logits = g.matmul(x, w);
        let targets: Vec<Option<usize>> = (0..rows).map(|r| Some(r % 3)).collect();
        g.cross_entropy(logits, &targets)
    }

    #[test]
    fn matmul_bias_tanh_gelu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![
            random(4, 5, &mut rng),
            random(5, 6, &mut rng),
            random(1, 6, &mut rng),
        ];
        check(inputs, |g, v| {
            let h = g.linear(v[0], v[1], v[2]);
            let a = g.tanh(h);
            let b = g.gelu(h);
            let s = g.add(a, b);
            reduce(g, s, 9)
        });
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![
            random(3, 6, &mut rng),
            random(1, 6, &mut rng),
            random(1, 6, &mut rng),
        ];
        check(inputs, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-12);
            reduce(g, y, 4)
        });
    }

    #[test]
    fn attention_grad_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = SeqLayout {
            batch: 2,
            seq_len: 3,
            key_mask: vec![true, true, true, true, true, false],
        };
        let inputs = vec![
            random(6, 4, &mut rng),
            random(6, 4, &mut rng),
            random(6, 4, &mut rng),
        ];
        check(inputs, |g, v| {
            let o = g.attention(v[0], v[1], v[2], &layout, 2);
            reduce(g, o, 5)
        });
    }

    #[test]
    fn padded_keys_get_no_weight() {
        let layout = SeqLayout {
            batch: 1,
            seq_len: 2,
            key_mask: vec![true, false],
        };
        let mut g = Graph::new();
        let q = g.input(Matrix::ones((2, 2)));
        let k = g.input(Matrix::ones((2, 2)));
        let v = g.input(ndarray::array![[1.0, 2.0], [100.0, 200.0]]);
        let o = g.attention(q, k, v, &layout, 1);
        assert_eq!(g.value(o).row(0).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn gather_select_and_ignore() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![random(5, 3, &mut rng)];
        check(inputs, |g, v| {
            let e = g.gather(v[0], &[0, 2, 2, 4]);
            let sel = g.select_rows(e, &[1, 3]);
            let w = g.input(Matrix::eye(3));
            let logits = g.matmul(sel, w);
            g.cross_entropy(logits, &[Some(1), None])
        });
    }

    #[test]
    fn cross_entropy_without_targets_is_zero() {
        let mut g = Graph::new();
        let l = g.input(Matrix::ones((2, 3)));
        let loss = g.cross_entropy(l, &[None, None]);
        assert_eq!(g.scalar(loss), 0.0);
        assert!(g.backward_all(loss)[l.0].is_none());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = ndarray::array![[1000.0, 0.0, -1000.0], [0.1, 0.2, 0.3]];
        let p = softmax_rows(&m);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
