use smart_tmle::montecarlo::run_parallel;
use smart_tmle_core::sim::{run_monte_carlo, McSettings, Scenario};

#[test]
fn thread_count_does_not_change_results() {
    let settings = McSettings::new(Scenario::Sim1Dgp2, 24, 400, 99);
    let serial = run_monte_carlo(&settings).unwrap();
    let one = run_parallel(&settings, 1).unwrap();
    let four = run_parallel(&settings, 4).unwrap();
    assert_eq!(serial, one);
    assert_eq!(one, four);
    assert_eq!(four.replicates.iter().map(|r| r.replicate).collect::<Vec<_>>(), (0..24).collect::<Vec<_>>());
}

#[test]
fn invalid_settings_are_rejected_before_running() {
    let settings = McSettings::new(Scenario::Sim1Dgp1, 1, 400, 1);
    assert!(run_parallel(&settings, 2).is_err());
}
