//! Walks the bundled dataset registry.

use std::fmt::Write;
use std::path::Path;

use anyhow::Result;
use phsbench::corpus::{Registry, SplitStrategy};

pub fn run_example() -> Result<String> {
    let registry = Registry::bundled(Path::new("data"));
    let mut out = String::new();
    writeln!(
        out,
        "{} rows over {} datasets",
        registry.len(),
        registry.distinct_sources()
    )?;
    for (family, n) in registry.families() {
        writeln!(out, "  {:<28} {n}", family.title())?;
    }
    let cv = registry
        .iter()
        .filter(|d| d.split_strategy == SplitStrategy::Stratified5Fold)
        .count();
    writeln!(
        out,
        "{cv} use stratified 5-fold, {} an official split",
        registry.len() - cv
    )?;
    let rhmd = registry.lookup("RHMD")?;
    let merged = rhmd.with_variant("merged-3").expect("variant exists");
    writeln!(
        out,
        "RHMD: {} classes, merged-3 variant: {}",
        rhmd.num_classes, merged.num_classes
    )?;
    let problems = registry.stats_discrepancies();
    writeln!(out, "matches the dataset table: {}", problems.is_empty())?;
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
