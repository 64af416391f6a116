mod common;

use common::*;
use dcsim::policy::{HostFailure, ShiftPolicy};
use dcsim::sim::PolicyConfig;

pub fn two_phase_fixture() -> (Vec<f64>, ShiftPolicy) {
    let mut ci = vec![300.0; 4];
    ci.extend([200.0; 4]);
    ci.extend([100.0; 4]);
    ci.extend([300.0; 36]);
    (ci, ShiftPolicy { percentile: 30.0, forecast_window_ms: 12 * H, max_delay_ms: 24 * H })
}

#[test]
fn contention_and_failure_timeline() {
    let (ci, policy) = two_phase_fixture();
    let topo = topology(3, 1, linear(100.0, 200.0));
    let failure = HostFailure { host: 0, start: hours(10.0), duration_ms: 6 * H };
    let tr = traces(hourly(&ci), Some(vec![failure]));
    let tasks = vec![
        task("1", 1.0, 3 * H),
        task("2", 1.0, 3 * H),
        task("3", 1.0, 3 * H),
        task("4", 5.0, 3 * H),
        task("5", 5.0, 3 * H),
    ];
    let policies = PolicyConfig { shifting: Some(policy), ..PolicyConfig::default() };
    let report = run(&topo, &policies, &tr, tasks, from_zero());
    assert_eq!(window(&report, "2"), (8.0, 11.0));
    assert_eq!(window(&report, "3"), (8.0, 11.0));
    assert_eq!(window(&report, "1"), (8.0, 14.0));
    assert_eq!(window(&report, "4"), (11.0, 14.0));
    assert_eq!(window(&report, "5"), (14.0, 17.0));
}
