//! Runs the full verification battery. Built without the libtest harness so
//! the per-criterion lines are always printed.

use std::process::ExitCode;

use fragwave::stream::DEFAULT_MASTER_SEED;
use fragwave::verify::{run_all, Budget};

fn main() -> ExitCode {
    let report = run_all(Budget::Full, DEFAULT_MASTER_SEED);
    for outcome in &report.outcomes {
        println!("{outcome}");
    }
    let failed: Vec<u8> = report.outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", report.outcomes.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
