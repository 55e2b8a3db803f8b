use ctxr_harness::bench::bench_query_orientation;
use ctxr_harness::crash::crash_test;
use ctxr_harness::scenario::{scenario, SCENARIOS};

#[test]
fn every_scenario_passes() {
    for name in SCENARIOS {
        let r = scenario(name, 3, 4).unwrap();
        assert!(r.pass(), "{r}");
    }
    assert!(scenario("s5_supply", 1, 4).is_err());
}

#[test]
fn scenarios_are_deterministic() {
    let a = scenario("s1_query", 11, 3).unwrap().to_records();
    let b = scenario("s1_query", 11, 3).unwrap().to_records();
    assert_eq!(a, b);
}

#[test]
fn empty_bench_gives_empty_answers() {
    let b = bench_query_orientation(1, 0).unwrap();
    assert!(b.pass());
    assert_eq!((b.context.scanned, b.device.scanned), (0, 0));
    assert!(b.context.answers.iter().all(|a| a.occupancy.is_none() && a.energy.is_none()));
}

#[test]
fn crash_without_kills_is_a_baseline() {
    let r = crash_test(500, 0, 7).unwrap();
    assert!(r.pass(), "{r:?}");
    assert_eq!(r.kills, 0);
}
