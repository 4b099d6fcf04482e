use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::Matrix;

/// Identifies one tensor: `group` names the owning parameter set, `index`
/// the tensor inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamRef {
    pub group: u16,
    pub index: u32,
}

/// An ordered, named collection of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    group: u16,
    names: Vec<String>,
    values: Vec<Matrix>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new(group: u16) -> Self {
        ParamSet {
            group,
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamRef {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter {name}"
        );
        let index = self.values.len();
        self.by_name.insert(name.clone(), index);
        self.names.push(name);
        self.values.push(value);
        ParamRef {
            group: self.group,
            index: index as u32,
        }
    }

    /// Normal(0, std) initialised tensor.
    pub fn add_normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamRef {
        let dist = Normal::new(0.0, std).expect("valid std");
        let m = Matrix::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, m)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamRef {
        self.add(name, Matrix::zeros((rows, cols)))
    }

    pub fn add_ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamRef {
        self.add(name, Matrix::ones((rows, cols)))
    }

    pub fn get(&self, p: ParamRef) -> &Matrix {
        debug_assert_eq!(p.group, self.group);
        &self.values[p.index as usize]
    }

    pub fn get_mut(&mut self, p: ParamRef) -> &mut Matrix {
        debug_assert_eq!(p.group, self.group);
        &mut self.values[p.index as usize]
    }

    pub fn find(&self, name: &str) -> Option<ParamRef> {
        self.by_name.get(name).map(|&i| ParamRef {
            group: self.group,
            index: i as u32,
        })
    }

    pub fn name(&self, p: ParamRef) -> &str {
        &self.names[p.index as usize]
    }

    pub fn refs(&self) -> impl Iterator<Item = ParamRef> + '_ {
        (0..self.values.len()).map(|i| ParamRef {
            group: self.group,
            index: i as u32,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}
