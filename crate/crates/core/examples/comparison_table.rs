//! Rebuilds the published comparison grid and checks its derived columns.

use std::fmt::Write;

use anyhow::Result;
use phsbench::evalkit::published::{check_against_published, published_layout, published_reports};
use phsbench::evalkit::{build_comparison_table, OutputFormat};

pub fn run_example() -> Result<String> {
    let table = build_comparison_table(&published_reports(None), "BERT", &published_layout())?;
    let mut out = table.render(OutputFormat::Markdown);
    let checks = check_against_published(&table);
    let markers = checks
        .iter()
        .filter(|c| c.bold_matches && c.underline_matches)
        .count();
    writeln!(
        out,
        "\nmarkers reproduced on {markers}/{} rows",
        checks.len()
    )?;
    for c in checks.iter().filter(|c| c.max_residual() > 0.5) {
        writeln!(
            out,
            "  {} {}: ΔMP residual {:.2}",
            c.family.title(),
            c.dataset,
            c.max_residual()
        )?;
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
