use serde::{Deserialize, Serialize};

use super::EvalError;

/// Rows are gold labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(
    gold: &[usize],
    pred: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut m = ConfusionMatrix::new(num_classes);
    for (i, (&g, &p)) in gold.iter().zip(pred).enumerate() {
        for label in [g, p] {
            if label >= num_classes {
                return Err(EvalError::LabelOutOfRange {
                    index: i,
                    label,
                    num_classes,
                });
            }
        }
        m.counts[g][p] += 1;
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 (0 when precision and recall are both undefined or zero),
/// their unweighted mean, and pooled (micro) F1.
pub fn f1_scores(m: &ConfusionMatrix) -> Result<F1Scores, EvalError> {
    let total = m.total();
    if total == 0 || m.num_classes == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = m.num_classes;
    let mut per_class = Vec::with_capacity(k);
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for c in 0..k {
        let tp = m.counts[c][c];
        let predicted: u64 = (0..k).map(|g| m.counts[g][c]).sum();
        let actual: u64 = m.counts[c].iter().sum();
        let (fp, fneg) = (predicted - tp, actual - tp);
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        per_class.push(if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        });
    }
    let macro_f1 = per_class.iter().sum::<f64>() / k as f64;
    let (p, r) = (
        ratio(tp_all, tp_all + fp_all),
        ratio(tp_all, tp_all + fn_all),
    );
    let micro_f1 = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    Ok(F1Scores {
        per_class,
        macro_f1,
        micro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal() {
        let m = confusion(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 1]]);
        let f = f1_scores(&m).unwrap();
        assert_eq!(f.per_class, vec![1.0, 1.0]);
        assert_eq!((f.macro_f1, f.micro_f1), (1.0, 1.0));
    }

    #[test]
    fn all_wrong() {
        let m = confusion(&[0, 0], &[1, 1], 2).unwrap();
        assert_eq!(m.counts[0][1], 2);
        assert_eq!(f1_scores(&m).unwrap().macro_f1, 0.0);
    }

    #[test]
    fn half_right() {
        let m = confusion(&[1, 1, 0, 0], &[1, 0, 1, 0], 2).unwrap();
        let f = f1_scores(&m).unwrap();
        assert_eq!(f.per_class, vec![0.5, 0.5]);
        assert_eq!(f.macro_f1, 0.5);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let f = f1_scores(&m).unwrap();
        assert_eq!(f.per_class[2], 0.0);
        assert!((f.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.micro_f1, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            confusion(&[0, 1, 0], &[0, 1], 2),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0, 2], &[0, 1], 2),
            Err(EvalError::LabelOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            f1_scores(&ConfusionMatrix::new(3)),
            Err(EvalError::EmptyMatrix)
        ));
    }
}
