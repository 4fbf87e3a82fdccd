//! Runs every acceptance criterion at full level and prints one line each.
//!
//! `cargo test -p bohmgrav-acceptance -- 3 7` runs only criteria 3 and 7.

use std::process::ExitCode;

use bohmgrav::acceptance::{run_criterion, VerifyOptions, CRITERIA};

fn main() -> ExitCode {
    let picked: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let opts = VerifyOptions {
        full: true,
        inject: None,
    };
    let mut failed = Vec::new();
    for id in CRITERIA.into_iter().filter(|id| picked.is_empty() || picked.contains(id)) {
        let r = run_criterion(id, &opts);
        println!("{}", r.line());
        if !r.passed() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
