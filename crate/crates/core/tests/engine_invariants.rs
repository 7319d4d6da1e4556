use reserve_caching::engine::{run_trace_observed, InvariantChecker};
use reserve_caching::workload::{generate, random_specs, Limits};

#[test]
fn random_traces_keep_every_state_invariant() {
    let mut failures = Vec::new();
    for (idx, spec) in random_specs(2024, 400, Limits::STANDARD).iter().enumerate() {
        let inst = generate(spec).unwrap();
        let mut checker = InvariantChecker::new();
        match run_trace_observed(&inst, &mut checker) {
            Err(e) => failures.push(format!("#{idx}: {e}")),
            Ok(_) if !checker.is_clean() => failures.push(format!("#{idx}: {:?}", &checker.violations[..1])),
            Ok(_) => {}
        }
    }
    assert!(
        failures.is_empty(),
        "{} failures, first: {:?}",
        failures.len(),
        &failures[..failures.len().min(5)]
    );
}
