//! Stratified 5-fold plans, with and without user groups.

use std::fmt::Write;

use anyhow::Result;
use phsbench::corpus::{stratified_kfold, LabeledExample};
use phsbench::synth::separable_dataset;

fn class_counts(
    examples: &[LabeledExample],
    ids: &std::collections::BTreeSet<String>,
) -> Vec<usize> {
    let mut counts = vec![0; 3];
    for e in examples.iter().filter(|e| ids.contains(&e.id)) {
        counts[e.label] += 1;
    }
    counts
}

pub fn run_example() -> Result<String> {
    let mut out = String::new();
    // 101 examples: class sizes 34/34/33 do not divide by 5.
    let examples = separable_dataset(101, 3, 1);
    let plan = stratified_kfold("toy", &examples, 5, 42)?;
    for (i, fold) in plan.folds.iter().enumerate() {
        writeln!(
            out,
            "fold {i}: test per class {:?}",
            class_counts(&examples, &fold.test_ids)
        )?;
    }

    // Posts of one user never straddle train and test.
    let grouped: Vec<LabeledExample> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| LabeledExample {
            group_key: Some(format!("user{}", i / 4 * 3 + e.label)),
            ..e.clone()
        })
        .collect();
    let plan = stratified_kfold("toy-users", &grouped, 5, 42)?;
    let user_of = |id: &str| {
        grouped
            .iter()
            .find(|e| e.id == id)
            .unwrap()
            .unit_key()
            .to_string()
    };
    let leaks = plan
        .folds
        .iter()
        .filter(|f| {
            f.test_ids
                .iter()
                .any(|t| f.train_ids.iter().any(|r| user_of(r) == user_of(t)))
        })
        .count();
    writeln!(
        out,
        "grouped plan: {} folds, {leaks} with a user on both sides",
        plan.folds.len()
    )?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
