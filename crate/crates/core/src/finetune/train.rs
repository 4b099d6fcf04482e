use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::SequenceClassifier;
use super::schedule::OneCycleSchedule;
use super::FinetuneError;
use crate::corpus::{stratified_holdout, Fold, LabeledExample};
use crate::evalkit::{confusion, f1_scores};
use crate::nn::{Adam, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub dev_fraction: f64,
    pub freeze_encoder: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 3,
            batch_size: 8,
            max_seq_len: 64,
            seed: 0,
            dev_fraction: 0.1,
            freeze_encoder: false,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.batch_size == 0 {
            return Err(FinetuneError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.max_seq_len < 2 {
            return Err(FinetuneError::InvalidConfig(
                "max_seq_len must be at least 2".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.dev_fraction) {
            return Err(FinetuneError::InvalidConfig(format!(
                "dev_fraction must be in [0, 0.5), got {}",
                self.dev_fraction
            )));
        }
        Ok(())
    }
}

/// The ids a fine-tuning run will train and validate on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPlan {
    pub train_ids: BTreeSet<String>,
    pub dev_ids: BTreeSet<String>,
    pub total_steps: usize,
}

/// Carves the dev holdout out of the fold's training ids and counts the
/// optimizer steps the schedule must cover.
pub fn plan_training(
    examples: &[LabeledExample],
    fold: &Fold,
    config: &FineTuneConfig,
) -> Result<TrainingPlan, FinetuneError> {
    config.validate()?;
    if let Some(id) = fold.train_ids.intersection(&fold.test_ids).next() {
        return Err(FinetuneError::DataLeak(id.clone()));
    }
    let (train_ids, dev_ids) =
        stratified_holdout(examples, &fold.train_ids, config.dev_fraction, config.seed)
            .map_err(|e| FinetuneError::InvalidConfig(e.to_string()))?;
    let total_steps = config.epochs * train_ids.len().div_ceil(config.batch_size);
    Ok(TrainingPlan {
        train_ids,
        dev_ids,
        total_steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: Option<f64>,
    pub dev_micro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub epochs: Vec<EpochMetrics>,
    pub warnings: Vec<String>,
    /// Every id whose gradient reached the optimizer.
    pub seen_ids: BTreeSet<String>,
    pub plan: TrainingPlan,
}

/// Fine-tunes `model` in place on the training part of `fold`.
///
/// Adam's learning rate and β1 follow `schedule` step by step. Test ids are
/// never read; the ids that reached the optimizer are checked against them.
pub fn finetune(
    model: &mut SequenceClassifier,
    fold: &Fold,
    examples: &[LabeledExample],
    config: &FineTuneConfig,
    schedule: &OneCycleSchedule,
) -> Result<FineTuneOutcome, FinetuneError> {
    let plan = plan_training(examples, fold, config)?;
    if plan.train_ids.is_empty() {
        return Err(FinetuneError::EmptyTrain);
    }
    let mut outcome = FineTuneOutcome {
        epochs: Vec::new(),
        warnings: Vec::new(),
        seen_ids: BTreeSet::new(),
        plan: plan.clone(),
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    schedule.validate()?;
    if schedule.total_steps != plan.total_steps {
        return Err(FinetuneError::ScheduleMismatch {
            schedule: schedule.total_steps,
            expected: plan.total_steps,
        });
    }

    let by_id: HashMap<&str, &LabeledExample> =
        examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let train: Vec<(&LabeledExample, Vec<u32>)> = plan
        .train_ids
        .iter()
        .map(|id| (by_id[id.as_str()], model.encode(&by_id[id.as_str()].text)))
        .collect();
    let dev: Vec<&LabeledExample> = plan.dev_ids.iter().map(|id| by_id[id.as_str()]).collect();

    for e in train.iter().map(|(e, _)| e).chain(dev.iter()) {
        if e.label >= model.num_classes() {
            return Err(FinetuneError::LabelOutOfRange {
                id: e.id.clone(),
                label: e.label,
                num_classes: model.num_classes(),
            });
        }
    }
    let classes: BTreeSet<usize> = train.iter().map(|(e, _)| e.label).collect();
    if classes.len() < 2 {
        let msg = format!(
            "training split has a single class {:?}; the classifier cannot learn to separate",
            classes
        );
        log::warn!("{msg}");
        outcome.warnings.push(msg);
    }
    let missing: Vec<usize> = (0..model.num_classes())
        .filter(|c| !classes.contains(c))
        .collect();
    if !missing.is_empty() && classes.len() >= 2 {
        let msg = format!("classes {missing:?} are absent from the training split");
        log::warn!("{msg}");
        outcome.warnings.push(msg);
    }

    let mut adam = Adam::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|&i| train[i].1.clone()).collect();
            let targets: Vec<Option<usize>> =
                chunk.iter().map(|&i| Some(train[i].0.label)).collect();
            for &i in chunk {
                outcome.seen_ids.insert(train[i].0.id.clone());
            }
            let mut g = Graph::new();
            let batch = model.batch(&seqs);
            let features = if config.freeze_encoder {
                let mut frozen = Graph::new();
                let f = model.cls_features(&mut frozen, &batch);
                g.input(frozen.value(f).clone())
            } else {
                model.cls_features(&mut g, &batch)
            };
            let logits = model.head_logits(&mut g, features);
            let loss = g.cross_entropy(logits, &targets);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(FinetuneError::NonFiniteLoss { step });
            }
            let grads = g.backward(loss);
            let (lr, momentum) = schedule.lr_at(step)?;
            if config.freeze_encoder {
                adam.step(&mut [&mut model.head], &grads, lr, momentum);
            } else {
                adam.step(
                    &mut [&mut model.encoder.params, &mut model.head],
                    &grads,
                    lr,
                    momentum,
                );
            }
            loss_sum += value;
            batches += 1;
            step += 1;
        }
        let (dev_macro_f1, dev_micro_f1) = if dev.is_empty() {
            (None, None)
        } else {
            let texts: Vec<&str> = dev.iter().map(|e| e.text.as_str()).collect();
            let gold: Vec<usize> = dev.iter().map(|e| e.label).collect();
            let pred = model.predict_labels(&texts, config.batch_size.max(32));
            let f = f1_scores(&confusion(&gold, &pred, model.num_classes())?)?;
            (Some(f.macro_f1), Some(f.micro_f1))
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_macro_f1,
            dev_micro_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev macro-F1 {:?}",
            m.train_loss,
            m.dev_macro_f1
        );
        outcome.epochs.push(m);
    }
    if let Some(id) = outcome.seen_ids.intersection(&fold.test_ids).next() {
        return Err(FinetuneError::DataLeak(id.clone()));
    }
    Ok(outcome)
}
