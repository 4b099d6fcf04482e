//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use phsbench::corpus::{LabeledExample, SplitPlan};
use rand::Rng;

/// Random dataset with optional user groups. Every group has one label.
pub fn random_dataset(rng: &mut impl Rng, k: usize) -> Vec<LabeledExample> {
    let classes = rng.random_range(2..=6);
    let grouped = rng.random_bool(0.3);
    let n = rng.random_range(classes * k * 2..=500);
    let mut out = Vec::with_capacity(n);
    // Ensure every class has at least k units before filling randomly.
    for i in 0..n {
        let label = if i < classes * k {
            i % classes
        } else {
            rng.random_range(0..classes)
        };
        let group_key = if grouped && i >= classes * k {
            // Reuse an earlier unit of the same class half the time.
            let same: Vec<usize> = (0..i).filter(|&j| out_label(&out, j) == label).collect();
            if rng.random_bool(0.5) {
                let j = same[rng.random_range(0..same.len())];
                Some(unit(&out, j))
            } else {
                Some(format!("u{i}"))
            }
        } else if grouped {
            Some(format!("u{i}"))
        } else {
            None
        };
        out.push(LabeledExample {
            id: format!("e{i:04}"),
            text: String::new(),
            label,
            group_key,
        });
    }
    out
}

fn out_label(v: &[LabeledExample], j: usize) -> usize {
    v[j].label
}

fn unit(v: &[LabeledExample], j: usize) -> String {
    v[j].group_key.clone().unwrap_or_else(|| v[j].id.clone())
}

/// Checks partition, group integrity and per-class floor/ceil balance by
/// counting everything from scratch.
pub fn check_plan(examples: &[LabeledExample], plan: &SplitPlan, k: usize) -> Result<(), String> {
    if plan.folds.len() != k {
        return Err(format!("{} folds, expected {k}", plan.folds.len()));
    }
    let all: BTreeSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        for id in &fold.test_ids {
            *seen.entry(id.as_str()).or_default() += 1;
            if fold.train_ids.contains(id) {
                return Err(format!("fold {f}: {id} in train and test"));
            }
        }
        let union: BTreeSet<&str> = fold
            .train_ids
            .iter()
            .chain(&fold.test_ids)
            .map(String::as_str)
            .collect();
        if union != all {
            return Err(format!("fold {f}: train + test is not the dataset"));
        }
    }
    if seen.len() != all.len() || seen.values().any(|&c| c != 1) {
        return Err("test sets do not partition the dataset".into());
    }

    let unit_of: BTreeMap<&str, String> = examples
        .iter()
        .map(|e| (e.id.as_str(), e.unit_key().to_string()))
        .collect();
    let mut units_per_class: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for e in examples {
        units_per_class
            .entry(e.label)
            .or_default()
            .insert(e.unit_key().to_string());
    }
    let label_of_unit: BTreeMap<String, usize> = examples
        .iter()
        .map(|e| (e.unit_key().to_string(), e.label))
        .collect();
    for (f, fold) in plan.folds.iter().enumerate() {
        let test_units: BTreeSet<&String> = fold
            .test_ids
            .iter()
            .map(|id| &unit_of[id.as_str()])
            .collect();
        let train_units: BTreeSet<&String> = fold
            .train_ids
            .iter()
            .map(|id| &unit_of[id.as_str()])
            .collect();
        if let Some(u) = test_units.intersection(&train_units).next() {
            return Err(format!("fold {f}: unit {u} on both sides"));
        }
        for (class, units) in &units_per_class {
            let n = units.len();
            let got = test_units
                .iter()
                .filter(|u| label_of_unit[u.as_str()] == *class)
                .count();
            let (lo, hi) = (n / k, n.div_ceil(k));
            if got < lo || got > hi {
                return Err(format!(
                    "fold {f}: class {class} has {got} test units, bound [{lo}, {hi}]"
                ));
            }
        }
    }
    Ok(())
}

/// Per-class F1 by listing true positives, false positives and false
/// negatives one instance at a time.
pub fn f1_oracle(gold: &[usize], pred: &[usize], k: usize) -> (Vec<f64>, f64) {
    let per: Vec<f64> = (0..k)
        .map(|c| {
            let tp = gold
                .iter()
                .zip(pred)
                .filter(|(g, p)| **g == c && **p == c)
                .count() as f64;
            let fp = gold
                .iter()
                .zip(pred)
                .filter(|(g, p)| **g != c && **p == c)
                .count() as f64;
            let fneg = gold
                .iter()
                .zip(pred)
                .filter(|(g, p)| **g == c && **p != c)
                .count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fneg)
            }
        })
        .collect();
    let macro_f1 = per.iter().sum::<f64>() / k as f64;
    (per, macro_f1)
}

/// Piecewise-linear one-cycle reference: (lr, momentum) at `step` of `total`
/// with the default constants.
pub fn one_cycle_reference(step: usize, total: usize) -> (f64, f64) {
    let (max_lr, start, end) = (2e-5, 2e-5 / 25.0, 2e-5 / 2500.0);
    let peak = 0.5 * total as f64;
    let s = step as f64;
    if s < peak {
        let t = s / peak;
        (start + t * (max_lr - start), 0.95 - t * 0.10)
    } else {
        let t = (s - peak) / (total as f64 - peak);
        (max_lr + t * (end - max_lr), 0.85 + t * 0.10)
    }
}
