//! Runs all fourteen acceptance criteria and prints one line per criterion.

use std::process::ExitCode;

use marginflow_cli::criteria::{Suite, Verifier};

fn main() -> ExitCode {
    let mut verifier = Verifier::new();
    let mut failed = Vec::new();
    for id in Suite::All.criteria() {
        let report = verifier.run(id);
        println!("{}", report.line());
        if !report.passed() {
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
