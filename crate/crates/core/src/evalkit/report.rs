use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, f1_scores};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub dataset_id: String,
    pub model_id: String,
    pub fold_index: usize,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl FoldResult {
    pub fn from_predictions(
        dataset_id: &str,
        model_id: &str,
        fold_index: usize,
        gold: &[usize],
        pred: &[usize],
        num_classes: usize,
    ) -> Result<FoldResult, EvalError> {
        let f = f1_scores(&confusion(gold, pred, num_classes)?)?;
        Ok(FoldResult {
            dataset_id: dataset_id.to_string(),
            model_id: model_id.to_string(),
            fold_index,
            per_class_f1: f.per_class,
            macro_f1: f.macro_f1,
            micro_f1: f.micro_f1,
        })
    }
}

/// Fold-aggregated scores of one model on one dataset, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub model_id: String,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub fold_count: usize,
    #[serde(default)]
    pub fold_f1: Vec<f64>,
    #[serde(default)]
    pub mean_micro_f1: Option<f64>,
    #[serde(default)]
    pub delta_mp: BTreeMap<String, f64>,
}

/// Mean and sample standard deviation of the folds' macro-F1, times 100.
/// A single fold has standard deviation 0.
pub fn aggregate(folds: &[FoldResult]) -> Result<EvalReport, EvalError> {
    let first = folds.first().ok_or(EvalError::NoFolds)?;
    for f in folds {
        if f.dataset_id != first.dataset_id || f.model_id != first.model_id {
            return Err(EvalError::MixedFolds {
                expected: format!("{}/{}", first.dataset_id, first.model_id),
                found: format!("{}/{}", f.dataset_id, f.model_id),
            });
        }
    }
    let mut sorted: Vec<&FoldResult> = folds.iter().collect();
    sorted.sort_by_key(|f| f.fold_index);
    let scores: Vec<f64> = sorted.iter().map(|f| f.macro_f1).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = if scores.len() > 1 {
        (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let micro = sorted.iter().map(|f| f.micro_f1).sum::<f64>() / n;
    Ok(EvalReport {
        dataset_id: first.dataset_id.clone(),
        model_id: first.model_id.clone(),
        mean_f1: mean * 100.0,
        std_f1: std * 100.0,
        fold_count: folds.len(),
        fold_f1: scores.iter().map(|s| s * 100.0).collect(),
        mean_micro_f1: Some(micro * 100.0),
        delta_mp: BTreeMap::new(),
    })
}

/// Relative improvement `100 · (new − ref) / ref`, unrounded.
pub fn delta_mp_exact(new_f1: f64, ref_f1: f64) -> Result<f64, EvalError> {
    if !(ref_f1 > 0.0) {
        return Err(EvalError::NonPositiveReference(ref_f1));
    }
    Ok(100.0 * (new_f1 - ref_f1) / ref_f1)
}

/// Relative improvement rounded to two decimals.
pub fn delta_mp(new_f1: f64, ref_f1: f64) -> Result<f64, EvalError> {
    Ok(round2(delta_mp_exact(new_f1, ref_f1)?))
}

pub(crate) fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl EvalReport {
    /// Fills `delta_mp` against the given reference reports (same dataset).
    pub fn with_delta_mp<'a>(
        mut self,
        references: impl IntoIterator<Item = &'a EvalReport>,
    ) -> Result<Self, EvalError> {
        for r in references {
            if r.dataset_id == self.dataset_id && r.model_id != self.model_id {
                self.delta_mp
                    .insert(r.model_id.clone(), delta_mp(self.mean_f1, r.mean_f1)?);
            }
        }
        Ok(self)
    }
}

pub fn write_reports(reports: &[EvalReport], mut out: impl Write) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_reports(input: impl BufRead) -> Result<Vec<EvalReport>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EvalError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| EvalError::BadRecord {
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(i: usize, f1: f64) -> FoldResult {
        FoldResult {
            dataset_id: "d".into(),
            model_id: "m".into(),
            fold_index: i,
            per_class_f1: vec![f1],
            macro_f1: f1,
            micro_f1: f1,
        }
    }

    #[test]
    fn constant_folds() {
        let r = aggregate(&(0..5).map(|i| fold(i, 0.8)).collect::<Vec<_>>()).unwrap();
        assert!((r.mean_f1 - 80.0).abs() < 1e-9);
        assert!(r.std_f1.abs() < 1e-9);
        assert_eq!(r.fold_count, 5);
    }

    #[test]
    fn two_folds() {
        let r = aggregate(&[fold(0, 0.7), fold(1, 0.8)]).unwrap();
        assert!((r.mean_f1 - 75.0).abs() < 1e-9);
        assert_eq!(round2(r.std_f1), 7.07);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate(&[]), Err(EvalError::NoFolds)));
        let mut other = fold(1, 0.5);
        other.model_id = "x".into();
        assert!(matches!(
            aggregate(&[fold(0, 0.5), other]),
            Err(EvalError::MixedFolds { .. })
        ));
    }

    #[test]
    fn delta_mp_values() {
        assert_eq!(delta_mp(94.75, 94.17).unwrap(), 0.62);
        assert_eq!(delta_mp(30.28, 25.72).unwrap(), 17.73);
        assert_eq!(delta_mp(55.5, 55.5).unwrap(), 0.0);
        assert!(delta_mp(1.0, 0.0).is_err());
        assert!(delta_mp(1.0, -2.0).is_err());
    }

    #[test]
    fn reports_round_trip() {
        let r = aggregate(&[fold(0, 0.7), fold(1, 0.8)]).unwrap();
        let mut buf = Vec::new();
        write_reports(std::slice::from_ref(&r), &mut buf).unwrap();
        assert_eq!(read_reports(buf.as_slice()).unwrap(), vec![r]);
    }
}
