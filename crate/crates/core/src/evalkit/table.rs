use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::report::{delta_mp, round2, EvalReport};
use super::EvalError;
use crate::corpus::{Registry, TaskFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Markdown,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "md" | "markdown" => Ok(OutputFormat::Markdown),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected md or csv)")),
        }
    }
}

/// Row order, task families and (optionally) column order of a table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableLayout {
    pub datasets: Vec<(String, TaskFamily)>,
    pub model_order: Option<Vec<String>>,
}

impl TableLayout {
    /// Datasets grouped by family in first-appearance order of the registry.
    pub fn from_registry(registry: &Registry) -> TableLayout {
        let mut families: Vec<TaskFamily> = Vec::new();
        for d in registry.iter() {
            if !families.contains(&d.task_family) {
                families.push(d.task_family);
            }
        }
        let datasets = families
            .iter()
            .flat_map(|f| {
                registry
                    .iter()
                    .filter(move |d| d.task_family == *f)
                    .map(|d| (d.id.clone(), d.task_family))
            })
            .collect();
        TableLayout {
            datasets,
            model_order: None,
        }
    }

    pub fn with_model_order(mut self, order: Vec<String>) -> TableLayout {
        self.model_order = Some(order);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Dataset,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub family: TaskFamily,
    pub label: String,
    pub kind: RowKind,
    /// One entry per table column (model), in percent.
    pub scores: Vec<Option<f64>>,
    /// Column of the best score (ties resolved to the lower model id).
    pub best: Option<usize>,
    /// Column of the best score among the other models.
    pub second: Option<usize>,
    /// The best score is shared; no markers are rendered.
    pub tie: bool,
    pub delta_mp_baseline: Option<f64>,
    pub delta_mp_second: Option<f64>,
}

impl TableRow {
    pub fn bold(&self) -> Option<usize> {
        if self.tie {
            None
        } else {
            self.best
        }
    }

    /// Average rows carry only the bold marker.
    pub fn underline(&self) -> Option<usize> {
        if self.tie || self.kind == RowKind::Average {
            None
        } else {
            self.second
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    pub baseline: String,
    pub rows: Vec<TableRow>,
    pub warnings: Vec<String>,
}

/// Ranks columns by score as printed (two decimals), breaking ties by model id.
fn rank(scores: &[Option<f64>], models: &[String]) -> (Option<usize>, Option<usize>, bool) {
    let mut present: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|v| (i, round2(v))))
        .collect();
    present.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| models[a.0].cmp(&models[b.0]))
    });
    let best = present.first().map(|p| p.0);
    let second = present.get(1).map(|p| p.0);
    let tie = present.len() > 1 && present[0].1 == present[1].1;
    (best, second, tie)
}

fn finish_row(
    family: TaskFamily,
    label: String,
    kind: RowKind,
    scores: Vec<Option<f64>>,
    models: &[String],
    baseline_col: usize,
) -> Result<TableRow, EvalError> {
    let (best, second, tie) = rank(&scores, models);
    let delta = |other: Option<usize>| -> Result<Option<f64>, EvalError> {
        match (best.and_then(|b| scores[b]), other.and_then(|o| scores[o])) {
            (Some(b), Some(o)) => Ok(Some(delta_mp(b, o)?)),
            _ => Ok(None),
        }
    };
    Ok(TableRow {
        delta_mp_baseline: delta(Some(baseline_col))?,
        delta_mp_second: delta(second)?,
        family,
        label,
        kind,
        scores,
        best,
        second,
        tie,
    })
}

/// One row per dataset with a report, grouped by family; families with at
/// least two datasets get an average row of the per-model mean scores.
/// ΔMP compares the best model with the baseline and with the runner-up.
pub fn build_comparison_table(
    reports: &[EvalReport],
    baseline_id: &str,
    layout: &TableLayout,
) -> Result<ComparisonTable, EvalError> {
    let mut by_cell: HashMap<(&str, &str), f64> = HashMap::new();
    for r in reports {
        if by_cell
            .insert((&r.dataset_id, &r.model_id), r.mean_f1)
            .is_some()
        {
            return Err(EvalError::DuplicateReport {
                dataset: r.dataset_id.clone(),
                model: r.model_id.clone(),
            });
        }
        if !layout.datasets.iter().any(|(d, _)| d == &r.dataset_id) {
            return Err(EvalError::UnknownDataset(r.dataset_id.clone()));
        }
    }
    let mut models: Vec<String> = Vec::new();
    if let Some(order) = &layout.model_order {
        for m in order {
            if reports.iter().any(|r| &r.model_id == m) && !models.contains(m) {
                models.push(m.clone());
            }
        }
    }
    let mut rest: Vec<String> = reports
        .iter()
        .map(|r| r.model_id.clone())
        .filter(|m| !models.contains(m))
        .collect();
    rest.sort();
    rest.dedup();
    if layout.model_order.is_none() {
        if let Some(pos) = rest.iter().position(|m| m == baseline_id) {
            let b = rest.remove(pos);
            rest.insert(0, b);
        }
    }
    models.extend(rest);
    if models.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut warnings = Vec::new();
    if models.len() == 1 {
        warnings.push(format!(
            "only one model (`{}`) has reports; ΔMP columns omitted",
            models[0]
        ));
    }
    let single = models.len() == 1;
    let baseline_col = match models.iter().position(|m| m == baseline_id) {
        Some(c) => c,
        None if single => 0,
        None => {
            return Err(EvalError::MissingBaseline {
                baseline: baseline_id.to_string(),
                dataset: reports
                    .first()
                    .map(|r| r.dataset_id.clone())
                    .unwrap_or_default(),
            })
        }
    };

    let mut grouped: BTreeMap<usize, (TaskFamily, Vec<&str>)> = BTreeMap::new();
    let mut family_slot: HashMap<TaskFamily, usize> = HashMap::new();
    for (d, fam) in &layout.datasets {
        if !reports.iter().any(|r| &r.dataset_id == d) {
            continue;
        }
        let next = family_slot.len();
        let slot = *family_slot.entry(*fam).or_insert(next);
        grouped.entry(slot).or_insert((*fam, Vec::new())).1.push(d);
    }

    let mut rows = Vec::new();
    for (family, datasets) in grouped.into_values() {
        let mut family_scores: Vec<Vec<Option<f64>>> = Vec::new();
        for d in &datasets {
            if !single && !by_cell.contains_key(&(*d, baseline_id)) {
                return Err(EvalError::MissingBaseline {
                    baseline: baseline_id.to_string(),
                    dataset: d.to_string(),
                });
            }
            let scores: Vec<Option<f64>> = models
                .iter()
                .map(|m| by_cell.get(&(*d, m.as_str())).copied())
                .collect();
            family_scores.push(scores.clone());
            rows.push(finish_row(
                family,
                d.to_string(),
                RowKind::Dataset,
                scores,
                &models,
                baseline_col,
            )?);
        }
        if datasets.len() >= 2 {
            let avg: Vec<Option<f64>> = (0..models.len())
                .map(|c| {
                    let col: Option<Vec<f64>> = family_scores.iter().map(|s| s[c]).collect();
                    col.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            rows.push(finish_row(
                family,
                "Average".into(),
                RowKind::Average,
                avg,
                &models,
                baseline_col,
            )?);
        }
    }
    Ok(ComparisonTable {
        models,
        baseline: baseline_id.to_string(),
        rows,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

impl ComparisonTable {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Markdown => self.to_markdown(),
            OutputFormat::Csv => self.to_csv(),
        }
    }

    /// ΔMP needs a second model to compare against.
    pub fn has_delta(&self) -> bool {
        self.models.len() >= 2
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.kind == RowKind::Dataset && r.label == label)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "| Task | Dataset |");
        for m in &self.models {
            let _ = write!(out, " {m} |");
        }
        if self.has_delta() {
            let _ = write!(out, " ΔMP_{} | ΔMP_SB |", self.baseline);
        }
        let _ = write!(out, "\n|---|---|");
        for _ in &self.models {
            out.push_str("---:|");
        }
        if self.has_delta() {
            out.push_str("---:|---:|");
        }
        out.push('\n');
        for row in &self.rows {
            let label = match row.kind {
                RowKind::Dataset => row.label.clone(),
                RowKind::Average => format!("*{}*", row.label),
            };
            let _ = write!(out, "| {} | {} |", row.family.title(), label);
            for (c, s) in row.scores.iter().enumerate() {
                let cell = fmt_opt(*s);
                let cell = if row.bold() == Some(c) {
                    format!("**{cell}**")
                } else if row.underline() == Some(c) {
                    format!("<u>{cell}</u>")
                } else {
                    cell
                };
                let _ = write!(out, " {cell} |");
            }
            if self.has_delta() {
                let _ = write!(
                    out,
                    " {} | {} |",
                    fmt_opt(row.delta_mp_baseline),
                    fmt_opt(row.delta_mp_second)
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = vec!["family".into(), "dataset".into(), "kind".into()];
        header.extend(self.models.iter().cloned());
        header.extend(["bold".into(), "underline".into(), "tie".into()]);
        if self.has_delta() {
            header.extend([format!("delta_mp_{}", self.baseline), "delta_mp_sb".into()]);
        }
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let kind = match row.kind {
                RowKind::Dataset => "dataset",
                RowKind::Average => "average",
            };
            let mut rec: Vec<String> =
                vec![row.family.title().into(), row.label.clone(), kind.into()];
            rec.extend(
                row.scores
                    .iter()
                    .map(|s| s.map(|x| format!("{x:.2}")).unwrap_or_default()),
            );
            let name = |c: Option<usize>| c.map(|c| self.models[c].clone()).unwrap_or_default();
            rec.push(name(row.bold()));
            rec.push(name(row.underline()));
            rec.push(row.tie.to_string());
            if self.has_delta() {
                rec.push(
                    row.delta_mp_baseline
                        .map(|x| format!("{x:.2}"))
                        .unwrap_or_default(),
                );
                rec.push(
                    row.delta_mp_second
                        .map(|x| format!("{x:.2}"))
                        .unwrap_or_default(),
                );
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
