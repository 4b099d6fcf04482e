use std::collections::HashMap;

use ndarray::Zip;

use super::graph::{Grads, Matrix};
use super::params::{ParamRef, ParamSet};

/// Adam with a caller-supplied learning rate and first-moment decay at every
/// step, so schedules can drive both.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    beta1_power: f64,
    state: HashMap<ParamRef, (Matrix, Matrix)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta2: f64, eps: f64) -> Self {
        Adam {
            beta2,
            eps,
            step: 0,
            beta1_power: 1.0,
            state: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every tensor of `sets` that has a gradient.
    /// The bias correction for the first moment uses the product of the
    /// `beta1` values seen so far.
    pub fn step(&mut self, sets: &mut [&mut ParamSet], grads: &Grads, lr: f64, beta1: f64) {
        self.step += 1;
        self.beta1_power *= beta1;
        let c1 = 1.0 - self.beta1_power;
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (beta2, eps) = (self.beta2, self.eps);
        for set in sets.iter_mut() {
            for p in set.refs().collect::<Vec<_>>() {
                let Some(g) = grads.get(&p) else { continue };
                let value = set.get_mut(p);
                let (m, v) = self
                    .state
                    .entry(p)
                    .or_insert_with(|| (Matrix::zeros(g.dim()), Matrix::zeros(g.dim())));
                Zip::from(value)
                    .and(m)
                    .and(v)
                    .and(g)
                    .for_each(|w, m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    });
            }
        }
    }
}
