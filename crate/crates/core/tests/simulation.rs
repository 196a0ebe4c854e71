use poel_core::sim::{random_scenario, run, summarize, trace_table};
use proptest::prelude::*;

#[test]
fn random_scenarios_run_clean() {
    for seed in 0..100 {
        let s = random_scenario(seed);
        let trace = run(&s).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(trace.ledgers.len() as u64, s.epochs + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reruns_are_identical(seed in any::<u64>()) {
        let s = random_scenario(seed);
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        prop_assert_eq!(trace_table(&a), trace_table(&b));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn summary_totals_match_ledgers() {
    let s = random_scenario(7);
    let trace = run(&s).unwrap();
    let sum = summarize(&trace, &s.metrics);
    let sr: poel_core::Amount = trace.ledgers.iter().map(|l| l.staking_rewards).sum();
    assert_eq!(sum.totals.staking_rewards, sr);
    assert_eq!(sum.totals.epochs as u64, s.epochs);
}
