use std::sync::Arc;

use edgestack::bench::{
    calibrated_profile, compute_report, run_virtual, run_wall, series_csv, BenchScenario,
    BlobCorpus, LiveStack, RunOptions, VirtualStack, BLOB_10M_LEN, BLOB_1M_LEN,
};
use edgestack::radio::LinkProfile;
use proptest::prelude::*;

fn run(scenario: &BenchScenario, profile: &LinkProfile) -> Vec<edgestack::bench::RequestSample> {
    run_virtual(
        scenario,
        profile,
        &VirtualStack::standard(),
        RunOptions::default(),
    )
    .unwrap()
}

#[test]
fn empty_issues_250_inside_five_seconds() {
    let s = run(&BenchScenario::empty(), &calibrated_profile());
    assert_eq!(s.len(), 250);
    assert!(s.iter().all(|x| x.issued_at_ms < 5000.0));
    for (i, x) in s.iter().enumerate() {
        assert_eq!(x.index, i);
        // chunk k starts at k s, 20 ms apart inside the chunk
        let expect = (i / 50) as f64 * 1000.0 + (i % 50) as f64 * 20.0;
        assert_eq!(x.issued_at_ms, expect);
    }
}

#[test]
fn empty_matches_reference_latency() {
    let s = run(&BenchScenario::empty(), &calibrated_profile());
    let r = compute_report("empty", &s).unwrap();
    println!(
        "empty: mean {:.2} ms p99 {:.2} ms",
        r.mean_latency_ms, r.p99_latency_ms
    );
    assert!((r.mean_latency_ms - 20.6).abs() <= 0.15 * 20.6);
    assert!((r.p99_latency_ms - 45.9).abs() <= 0.25 * 45.9);
    // the first request pays connection setup
    let p = calibrated_profile();
    assert!(s[0].latency_ms >= r.mean_latency_ms + p.setup_cost / 2.0);
}

#[test]
fn same_seed_same_samples() {
    let p = calibrated_profile();
    let a = run(&BenchScenario::empty(), &p);
    let b = run(&BenchScenario::empty(), &p);
    assert_eq!(series_csv(&a), series_csv(&b));
    let other = run(
        &BenchScenario::empty(),
        &LinkProfile {
            seed: p.seed + 1,
            ..p
        },
    );
    assert_ne!(series_csv(&a), series_csv(&other));
}

#[test]
fn blob1m_follows_queueing_law() {
    let p = calibrated_profile();
    let s = run(&BenchScenario::blob1m(), &p);
    let r = compute_report("blob1m", &s).unwrap();
    // hand oracle: 250 bodies of 2^20 bytes drained at the link bandwidth
    let oracle_ms = 250.0 * 1_048_576.0 / p.bandwidth * 1e3;
    println!(
        "blob1m: mean {:.0} ms last {:.0} ms oracle {:.0} ms",
        r.mean_latency_ms, r.last_completion_ms, oracle_ms
    );
    assert_eq!(r.success_count, 250);
    assert!((r.last_completion_ms - oracle_ms).abs() <= 0.15 * oracle_ms);
    assert!(r.mean_latency_ms >= 10_000.0 && r.mean_latency_ms < 100_000.0);
    // lossless: every body arrives whole
    assert_eq!(r.total_bytes, 250 * BLOB_1M_LEN as u64);
    // saturation: latency never decreases after the first chunk
    for w in s[50..].windows(2) {
        assert!(
            w[1].latency_ms >= w[0].latency_ms,
            "{} -> {}",
            w[0].latency_ms,
            w[1].latency_ms
        );
    }
}

#[test]
fn blob10m_hits_throughput_ceiling() {
    let p = calibrated_profile();
    let s = run(&BenchScenario::blob10m(), &p);
    let r = compute_report("blob10m", &s).unwrap();
    println!(
        "blob10m: {:.3} MB/s, {} ok of {}",
        r.throughput / 1e6,
        r.success_count,
        r.requests
    );
    assert!((r.throughput - 7.52e6).abs() <= 0.10 * 7.52e6);
    assert!(s
        .iter()
        .filter(|x| x.succeeded())
        .all(|x| x.bytes == BLOB_10M_LEN as u64));
    // requests still queued at the 120 s timeout are recorded as failures
    assert!(s
        .iter()
        .filter(|x| !x.succeeded())
        .all(|x| x.status == 0 && x.latency_ms == 120_000.0));
}

#[test]
fn baseline_is_faster_than_radio() {
    let sc = BenchScenario::baseline();
    let s = run(&sc, sc.profile.as_ref().unwrap());
    let r = compute_report("baseline", &s).unwrap();
    let radio = compute_report(
        "blob10m",
        &run(&BenchScenario::blob10m(), &calibrated_profile()),
    )
    .unwrap();
    println!(
        "baseline: {:.2} MB/s mean {:.0} ms",
        r.throughput / 1e6,
        r.mean_latency_ms
    );
    assert_eq!(r.success_count, 250);
    assert!(r.throughput > 4.0 * radio.throughput);
}

#[test]
fn wall_clock_empty_run() {
    let stack = LiveStack::standalone(Arc::new(BlobCorpus::generate(1))).unwrap();
    let sc = BenchScenario {
        rate: 20,
        duration: 1,
        ..BenchScenario::empty()
    };
    let p = LinkProfile {
        one_way_delay: 5.0,
        bandwidth: 7.52e6,
        ..Default::default()
    };
    let s = run_wall(&sc, &p, &stack, RunOptions::default()).unwrap();
    assert_eq!(s.len(), 20);
    for x in &s {
        assert_eq!(x.status, 200, "{x:?}");
        assert_eq!(x.bytes, 0);
        // at least one round trip over the emulated path
        assert!(x.latency_ms >= 10.0, "{x:?}");
        let scheduled = x.index as f64 * 50.0;
        assert!((x.issued_at_ms - scheduled).abs() <= 5.0, "{x:?}");
    }
}

#[test]
fn wall_clock_carries_blob_bytes() {
    let stack = LiveStack::standalone(Arc::new(BlobCorpus::generate(1))).unwrap();
    let sc = BenchScenario {
        rate: 2,
        duration: 1,
        ..BenchScenario::blob1m()
    };
    let p = LinkProfile {
        one_way_delay: 1.0,
        bandwidth: 50e6,
        ..Default::default()
    };
    let s = run_wall(&sc, &p, &stack, RunOptions::default()).unwrap();
    assert!(
        s.iter()
            .all(|x| x.status == 200 && x.bytes == BLOB_1M_LEN as u64),
        "{s:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn count_and_schedule_exact(rate in 1u32..40, duration in 1u32..4, seed in any::<u64>()) {
        let sc = BenchScenario { rate, duration, ..BenchScenario::empty() };
        let p = LinkProfile { one_way_delay: 3.0, bandwidth: 7.52e6, jitter_stddev: 1.0, seed, ..Default::default() };
        let s = run(&sc, &p);
        prop_assert_eq!(s.len(), (rate * duration) as usize);
        for (i, x) in s.iter().enumerate() {
            prop_assert_eq!(x.index, i);
            prop_assert_eq!(x.issued_at_ms, sc.issue_offset(i).as_nanos() as f64 / 1e6);
            prop_assert!(x.latency_ms >= 0.0);
            prop_assert!(x.issued_at_ms < f64::from(duration) * 1000.0);
        }
    }
}
