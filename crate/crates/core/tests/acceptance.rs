//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Exits nonzero if any criterion fails.

use qutrit::selftest;

fn main() {
    let seed = 20_240_601;
    let mut failed = 0;
    for &(id, _) in selftest::CRITERIA.iter() {
        let check = selftest::run(id, seed);
        println!("{}", check.line());
        if !check.passed {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        selftest::CRITERIA.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
