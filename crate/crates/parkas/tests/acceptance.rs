//! Release gate: runs every acceptance criterion and prints one pass/fail
//! line per criterion. Run with `cargo test -p parkas --test acceptance --
//! --nocapture` to see the lines.

#[test]
fn all_acceptance_criteria_pass() {
    let outcomes = parkas::acceptance::run_all();
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {:>2} ({}): {}", o.id, o.name, o.detail);
        if !o.pass {
            failed.push(o.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
