//! Acceptance suite: every shipped guarantee runs at its pinned tolerance
//! and runtime budget, printing one pass/fail line per criterion.

use eqlaw::acceptance;

#[test]
fn acceptance_criteria() {
    let outcomes = acceptance::run_all();
    let mut all_ok = true;
    for outcome in &outcomes {
        println!("{}", outcome.line());
        all_ok &= outcome.passed;
    }
    assert!(
        all_ok,
        "one or more acceptance criteria failed; see lines above"
    );
}
