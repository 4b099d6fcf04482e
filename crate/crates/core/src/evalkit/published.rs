//! The published comparison grid (per-dataset F1 of eight models, markers
//! and ΔMP columns) shipped as a fixture, plus helpers that check a rebuilt
//! table against it.

use serde::{Deserialize, Serialize};

use super::report::{delta_mp, EvalReport};
use super::table::{ComparisonTable, RowKind, TableLayout};
use crate::corpus::{Registry, TaskFamily};

pub const PUBLISHED_GRID_CSV: &str = include_str!("../../data/fixtures/published_scores.csv");

/// Column order of the published grid.
pub const PUBLISHED_MODELS: [&str; 8] = [
    "BERT",
    "ALBERT",
    "distilBERT",
    "CT-BERT",
    "BioBERT",
    "BERTweet",
    "MentalBERT",
    "Ours",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub family: TaskFamily,
    pub dataset: String,
    pub kind: RowKind,
    pub scores: Vec<(String, f64)>,
    pub bold: Option<String>,
    pub underline: Option<String>,
    pub delta_mp_baseline: f64,
    pub delta_mp_second: f64,
}

pub fn published_rows() -> Vec<PublishedRow> {
    let mut reader = csv::Reader::from_reader(PUBLISHED_GRID_CSV.as_bytes());
    let header = reader.headers().expect("fixture header").clone();
    reader
        .records()
        .map(|rec| {
            let rec = rec.expect("fixture row");
            let family = serde_json::from_value(serde_json::Value::String(rec[0].to_string()))
                .expect("family");
            let kind = if &rec[2] == "average" {
                RowKind::Average
            } else {
                RowKind::Dataset
            };
            let scores = (3..11)
                .map(|i| (header[i].to_string(), rec[i].parse::<f64>().expect("score")))
                .collect();
            let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
            PublishedRow {
                family,
                dataset: rec[1].to_string(),
                kind,
                scores,
                bold: opt(&rec[11]),
                underline: opt(&rec[12]),
                delta_mp_baseline: rec[13].parse().expect("delta"),
                delta_mp_second: rec[14].parse().expect("delta"),
            }
        })
        .collect()
}

/// One report per published dataset cell. Fold counts follow the registry's
/// split strategy when the dataset is known to it.
pub fn published_reports(registry: Option<&Registry>) -> Vec<EvalReport> {
    let mut out = Vec::new();
    for row in published_rows()
        .into_iter()
        .filter(|r| r.kind == RowKind::Dataset)
    {
        let folds = registry
            .and_then(|r| r.lookup(&row.dataset).ok())
            .map(|d| d.split_strategy.fold_count())
            .unwrap_or(1);
        for (model, score) in &row.scores {
            out.push(EvalReport {
                dataset_id: row.dataset.clone(),
                model_id: model.clone(),
                mean_f1: *score,
                std_f1: 0.0,
                fold_count: folds,
                fold_f1: Vec::new(),
                mean_micro_f1: None,
                delta_mp: Default::default(),
            });
        }
    }
    out
}

/// Row and column order of the published grid.
pub fn published_layout() -> TableLayout {
    TableLayout {
        datasets: published_rows()
            .into_iter()
            .filter(|r| r.kind == RowKind::Dataset)
            .map(|r| (r.dataset, r.family))
            .collect(),
        model_order: Some(PUBLISHED_MODELS.iter().map(|s| s.to_string()).collect()),
    }
}

/// A rebuilt row set side by side with the published one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCheck {
    pub family: TaskFamily,
    pub dataset: String,
    pub kind: RowKind,
    pub bold_matches: bool,
    pub underline_matches: bool,
    pub published_delta_baseline: f64,
    pub computed_delta_baseline: Option<f64>,
    pub published_delta_second: f64,
    pub computed_delta_second: Option<f64>,
}

impl RowCheck {
    /// Largest absolute gap between published and computed ΔMP.
    pub fn max_residual(&self) -> f64 {
        let gap = |p: f64, c: Option<f64>| c.map(|c| (p - c).abs()).unwrap_or(f64::INFINITY);
        gap(self.published_delta_baseline, self.computed_delta_baseline)
            .max(gap(self.published_delta_second, self.computed_delta_second))
    }
}

/// Compares every published row with the matching row of `table`.
pub fn check_against_published(table: &ComparisonTable) -> Vec<RowCheck> {
    let name = |c: Option<usize>| c.map(|c| table.models[c].clone());
    published_rows()
        .into_iter()
        .map(|p| {
            let row = table.rows.iter().find(|r| {
                r.kind == p.kind
                    && r.family == p.family
                    && (r.kind == RowKind::Average || r.label == p.dataset)
            });
            RowCheck {
                bold_matches: row.map(|r| name(r.bold()) == p.bold).unwrap_or(false),
                underline_matches: row
                    .map(|r| name(r.underline()) == p.underline)
                    .unwrap_or(false),
                computed_delta_baseline: row.and_then(|r| r.delta_mp_baseline),
                computed_delta_second: row.and_then(|r| r.delta_mp_second),
                published_delta_baseline: p.delta_mp_baseline,
                published_delta_second: p.delta_mp_second,
                family: p.family,
                dataset: p.dataset,
                kind: p.kind,
            }
        })
        .collect()
}

/// ΔMP recomputed from the printed scores of a published row, against the
/// first column and against its underlined model.
pub fn recompute_published_delta(row: &PublishedRow) -> (f64, Option<f64>) {
    let score = |m: &str| row.scores.iter().find(|(n, _)| n == m).map(|(_, s)| *s);
    let best = row
        .bold
        .as_deref()
        .and_then(score)
        .expect("published rows have a best model");
    let base = delta_mp(best, row.scores[0].1).expect("positive scores");
    let second = row
        .underline
        .as_deref()
        .and_then(score)
        .map(|s| delta_mp(best, s).expect("positive scores"));
    (base, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::build_comparison_table;

    #[test]
    fn grid_shape() {
        let rows = published_rows();
        assert_eq!(
            rows.iter().filter(|r| r.kind == RowKind::Dataset).count(),
            26
        );
        assert_eq!(
            rows.iter().filter(|r| r.kind == RowKind::Average).count(),
            6
        );
        assert!(rows.iter().all(|r| r.scores.len() == 8));
    }

    #[test]
    fn dataset_names_match_registry() {
        let reg = Registry::bundled(std::path::Path::new("."));
        for r in published_rows()
            .iter()
            .filter(|r| r.kind == RowKind::Dataset)
        {
            let d = reg.lookup(&r.dataset).unwrap();
            assert_eq!(d.task_family, r.family, "{}", r.dataset);
        }
    }

    #[test]
    fn rebuilt_markers_match() {
        let table =
            build_comparison_table(&published_reports(None), "BERT", &published_layout()).unwrap();
        for c in check_against_published(&table) {
            assert!(c.bold_matches && c.underline_matches, "{c:?}");
        }
    }
}
