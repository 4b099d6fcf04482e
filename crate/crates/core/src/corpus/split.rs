use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, LabeledExample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub dataset_id: String,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Split units (groups, or single examples) with their label and member ids,
/// keyed and therefore ordered by unit key.
fn collect_units(
    examples: &[LabeledExample],
) -> Result<BTreeMap<&str, (usize, Vec<&str>)>, CorpusError> {
    let mut units: BTreeMap<&str, (usize, Vec<&str>)> = BTreeMap::new();
    for ex in examples {
        let entry = units.entry(ex.unit_key()).or_insert((ex.label, Vec::new()));
        if entry.0 != ex.label {
            return Err(CorpusError::MixedGroupLabels {
                group: ex.unit_key().to_string(),
                first: entry.0,
                second: ex.label,
            });
        }
        entry.1.push(&ex.id);
    }
    Ok(units)
}

/// Stratified k-fold over split units.
///
/// Units of each class are shuffled with a seeded RNG and dealt round-robin
/// into the folds; the dealing position carries over from one class to the
/// next, so fold sizes stay balanced too. Classes are visited in label order
/// and units start from key order, so the plan depends only on the example
/// set, `k` and `seed`.
pub fn stratified_kfold(
    dataset_id: &str,
    examples: &[LabeledExample],
    k: usize,
    seed: u64,
) -> Result<SplitPlan, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidK(k));
    }
    let units = collect_units(examples)?;
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (key, (label, _)) in &units {
        by_class.entry(*label).or_default().push(key);
    }
    for (class, members) in &by_class {
        if members.len() < k {
            return Err(CorpusError::InfeasibleStratification {
                class: *class,
                units: members.len(),
                k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_sets = vec![BTreeSet::new(); k];
    let mut cursor = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for key in members.iter() {
            for id in &units[key].1 {
                test_sets[cursor].insert(id.to_string());
            }
            cursor = (cursor + 1) % k;
        }
    }

    let universe: BTreeSet<String> = examples.iter().map(|e| e.id.clone()).collect();
    let folds = test_sets
        .into_iter()
        .map(|test_ids| Fold {
            train_ids: universe.difference(&test_ids).cloned().collect(),
            test_ids,
        })
        .collect();
    Ok(SplitPlan {
        dataset_id: dataset_id.to_string(),
        seed,
        folds,
    })
}

/// Splits the examples whose ids are in `ids` into (train, dev), holding out
/// `round(fraction * n)` units of each class (always leaving at least one in
/// train).
pub fn stratified_holdout(
    examples: &[LabeledExample],
    ids: &BTreeSet<String>,
    fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), CorpusError> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let selected: Vec<LabeledExample> = examples
        .iter()
        .filter(|e| ids.contains(&e.id))
        .cloned()
        .collect();
    let units = collect_units(&selected)?;
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (key, (label, _)) in &units {
        by_class.entry(*label).or_default().push(key);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = BTreeSet::new();
    let mut dev = BTreeSet::new();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_dev = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        for (i, key) in members.iter().enumerate() {
            let target = if i < n_dev { &mut dev } else { &mut train };
            for id in &units[key].1 {
                target.insert(id.to_string());
            }
        }
    }
    Ok((train, dev))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(labels: &[usize]) -> Vec<LabeledExample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledExample {
                id: format!("e{i:03}"),
                text: String::new(),
                label,
                group_key: None,
            })
            .collect()
    }

    fn class_counts(plan: &SplitPlan, exs: &[LabeledExample], class: usize) -> Vec<usize> {
        plan.folds
            .iter()
            .map(|f| {
                exs.iter()
                    .filter(|e| e.label == class && f.test_ids.contains(&e.id))
                    .count()
            })
            .collect()
    }

    #[test]
    fn perfectly_divisible() {
        let exs = examples(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let plan = stratified_kfold("d", &exs, 5, 7).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!(f.test_ids.len(), 2);
        }
        assert_eq!(class_counts(&plan, &exs, 0), vec![1; 5]);
        assert_eq!(class_counts(&plan, &exs, 1), vec![1; 5]);
    }

    #[test]
    fn seven_and_five() {
        let mut labels = vec![0; 7];
        labels.extend([1; 5]);
        let exs = examples(&labels);
        let plan = stratified_kfold("d", &exs, 5, 11).unwrap();
        let mut a = class_counts(&plan, &exs, 0);
        a.sort();
        assert_eq!(a, vec![1, 1, 1, 2, 2]);
        assert_eq!(class_counts(&plan, &exs, 1), vec![1; 5]);
    }

    #[test]
    fn too_few_members() {
        let exs = examples(&[0, 0, 0, 0]);
        let err = stratified_kfold("d", &exs, 5, 0).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::InfeasibleStratification {
                class: 0,
                units: 4,
                k: 5
            }
        ));
    }

    #[test]
    fn k_below_two() {
        assert!(matches!(
            stratified_kfold("d", &examples(&[0, 1]), 1, 0),
            Err(CorpusError::InvalidK(1))
        ));
    }

    #[test]
    fn input_order_does_not_matter() {
        let exs = examples(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]);
        let mut rev = exs.clone();
        rev.reverse();
        assert_eq!(
            stratified_kfold("d", &exs, 5, 3).unwrap(),
            stratified_kfold("d", &rev, 5, 3).unwrap()
        );
    }

    #[test]
    fn groups_stay_together() {
        let mut exs = Vec::new();
        for g in 0..10 {
            for j in 0..3 {
                exs.push(LabeledExample {
                    id: format!("g{g}p{j}"),
                    text: String::new(),
                    label: g % 2,
                    group_key: Some(format!("g{g}")),
                });
            }
        }
        let plan = stratified_kfold("d", &exs, 5, 1).unwrap();
        for f in &plan.folds {
            assert_eq!(f.test_ids.len(), 6);
            for g in 0..10 {
                let inside = (0..3)
                    .filter(|j| f.test_ids.contains(&format!("g{g}p{j}")))
                    .count();
                assert!(inside == 0 || inside == 3);
            }
        }
    }

    #[test]
    fn mixed_group_label_rejected() {
        let exs = vec![
            LabeledExample {
                id: "a".into(),
                text: String::new(),
                label: 0,
                group_key: Some("u".into()),
            },
            LabeledExample {
                id: "b".into(),
                text: String::new(),
                label: 1,
                group_key: Some("u".into()),
            },
        ];
        assert!(matches!(
            stratified_kfold("d", &exs, 2, 0),
            Err(CorpusError::MixedGroupLabels { .. })
        ));
    }

    #[test]
    fn holdout_is_stratified() {
        let mut labels = vec![0; 20];
        labels.extend([1; 10]);
        let exs = examples(&labels);
        let ids: BTreeSet<String> = exs.iter().map(|e| e.id.clone()).collect();
        let (train, dev) = stratified_holdout(&exs, &ids, 0.1, 5).unwrap();
        assert_eq!(dev.len(), 3);
        assert_eq!(train.len(), 27);
        assert!(train.is_disjoint(&dev));
        assert!(stratified_holdout(&exs, &ids, 0.5, 5).is_err());
        let (train, dev) = stratified_holdout(&exs, &ids, 0.0, 5).unwrap();
        assert!(dev.is_empty());
        assert_eq!(train, ids);
    }
}
