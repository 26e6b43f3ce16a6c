//! Runs every acceptance gate and prints one line per criterion.
//! Gate 10 needs a labelled dataset directory in `HEP2_DATASET`.

use std::process::ExitCode;

use hep2_verify::gates::{all_passed, run_gates, SuiteOptions};

fn main() -> ExitCode {
    let ids: Vec<u8> = (1..=10).collect();
    println!("acceptance: running {} criteria", ids.len());
    let outcomes = run_gates(&ids, &SuiteOptions::default(), |g| println!("{g}"));
    let failed = outcomes.iter().filter(|g| g.status == hep2_verify::Status::Fail).count();
    let skipped = outcomes.iter().filter(|g| g.status == hep2_verify::Status::Skip).count();
    println!(
        "acceptance: {} passed, {failed} failed, {skipped} skipped",
        outcomes.len() - failed - skipped
    );
    if all_passed(&outcomes) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
