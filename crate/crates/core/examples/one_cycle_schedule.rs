//! Learning rate and momentum over a one-cycle run.

use std::fmt::Write;

use anyhow::Result;
use phsbench::OneCycleSchedule;

pub fn run_example() -> Result<String> {
    let schedule = OneCycleSchedule::new(1000);
    let mut out = String::new();
    for step in [0, 125, 250, 375, 500, 625, 750, 875, 1000] {
        let (lr, momentum) = schedule.lr_at(step)?;
        writeln!(out, "{step:>5}  lr {lr:.3e}  momentum {momentum:.3}")?;
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
