//! Fine-tunes a randomly initialised toy classifier on one fold and scores it.

use std::fmt::Write;
use std::sync::Arc;

use anyhow::Result;
use phsbench::corpus::stratified_kfold;
use phsbench::evalkit::FoldResult;
use phsbench::finetune::{
    build_classifier, finetune, plan_training, ClassifierHeadSpec, FineTuneConfig,
};
use phsbench::nn::{Encoder, EncoderConfig};
use phsbench::synth::separable_dataset;
use phsbench::tokenizer::{Tokenizer, WordPiece};
use phsbench::OneCycleSchedule;

pub fn run_example() -> Result<String> {
    let examples = separable_dataset(120, 3, 4);
    let plan = stratified_kfold("toy", &examples, 5, 0)?;
    let fold = &plan.folds[0];
    let tok = WordPiece::build(examples.iter().map(|e| e.text.as_str()), 200);
    let encoder = Encoder::random(EncoderConfig::small(tok.vocab_size(), 32, 1, 32), 1);
    let mut model = build_classifier(
        encoder,
        Arc::new(tok),
        3,
        &ClassifierHeadSpec::default(),
        16,
        1,
    )?;

    let config = FineTuneConfig {
        epochs: 8,
        batch_size: 8,
        max_seq_len: 16,
        ..Default::default()
    };
    let mut schedule = OneCycleSchedule::new(plan_training(&examples, fold, &config)?.total_steps);
    schedule.max_lr = 3e-3;
    let outcome = finetune(&mut model, fold, &examples, &config, &schedule)?;

    let test: Vec<_> = examples
        .iter()
        .filter(|e| fold.test_ids.contains(&e.id))
        .collect();
    let texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
    let gold: Vec<usize> = test.iter().map(|e| e.label).collect();
    let pred = model.predict_labels(&texts, 32);
    let result = FoldResult::from_predictions("toy", "tiny", 0, &gold, &pred, 3)?;

    let mut out = String::new();
    for e in &outcome.epochs {
        writeln!(
            out,
            "epoch {}  loss {:.3}  dev macro-F1 {:?}",
            e.epoch, e.train_loss, e.dev_macro_f1
        )?;
    }
    writeln!(
        out,
        "test macro-F1 {:.3} per class {:?}",
        result.macro_f1, result.per_class_f1
    )?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
