//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use edgestack::bench::{
    calibrated_profile, compute_report, emit_series, run_virtual, BenchScenario, RunOptions,
    VirtualStack,
};
use edgestack::epc::{Core, CoreError, SessionState};
use edgestack::fabric::{Fabric, FabricError};
use edgestack::gtp::{self, TunnelEndpointId};
use edgestack::pipeline::{Outcome, Pipeline, PipelineConfig, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gtp_codec() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6770);
    let mut failures = 0;
    for case in 0..1000 {
        let teid = TunnelEndpointId(rng.gen_range(1..=u32::MAX));
        // cover the extremes explicitly, random lengths otherwise
        let len = match case {
            0 => 0,
            1 => 65_535,
            _ => rng.gen_range(0..=65_535),
        };
        let mut payload = vec![0u8; len];
        rng.fill(&mut payload[..]);
        let wire = gtp::encode_gpdu(teid, &payload).map_err(|e| format!("encode failed: {e}"))?;
        match gtp::decode(&wire) {
            Ok(p)
                if p.header.teid == teid
                    && p.payload == payload
                    && p.encode().ok() == Some(wire.clone()) => {}
            _ => failures += 1,
        }
    }
    // hand-computed layout: flags 0x30 (version 1, PT=1), type 0xFF (G-PDU),
    // length 4, TEID 1, then the payload
    let expected: [u8; 12] = [
        0x30, 0xFF, 0x00, 0x04, 0x00, 0x00, 0x00, 0x01, b'A', b'B', b'C', b'D',
    ];
    let vector = gtp::encode_gpdu(TunnelEndpointId(1), b"ABCD").map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        failures == 0 && vector == expected && elapsed < Duration::from_secs(5),
        format!(
            "1000 round trips, {failures} failures; fixed vector {}; {:.2}s",
            if vector == expected {
                "matches"
            } else {
                "MISMATCH"
            },
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn empty_row() -> Verdict {
    let start = Instant::now();
    let p = calibrated_profile();
    let s = run_virtual(
        &BenchScenario::empty(),
        &p,
        &VirtualStack::standard(),
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let r = compute_report("empty", &s).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mean_ok = (r.mean_latency_ms - 20.6).abs() <= 0.15 * 20.6;
    let p99_ok = (r.p99_latency_ms - 45.9).abs() <= 0.25 * 45.9;
    check(
        mean_ok && p99_ok && s.len() == 250 && elapsed < Duration::from_secs(30),
        format!(
            "mean {:.2} ms (20.6 ±15%), p99 {:.2} ms (45.9 ±25%), {} samples, {:.1}s",
            r.mean_latency_ms,
            r.p99_latency_ms,
            s.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn throughput_ceiling() -> Verdict {
    let start = Instant::now();
    let s = run_virtual(
        &BenchScenario::blob10m(),
        &calibrated_profile(),
        &VirtualStack::standard(),
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let r = compute_report("blob10m", &s).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        (r.throughput - 7.52e6).abs() <= 0.10 * 7.52e6 && elapsed < Duration::from_secs(60),
        format!(
            "throughput {:.3} MB/s (7.52 ±10%), {}/{} completed before the 120 s timeout, {:.1}s",
            r.throughput / 1e6,
            r.success_count,
            r.requests,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn queueing_law() -> Verdict {
    // hand oracle, fixed before the run: 250 bodies of 2^20 bytes drained
    // through a 7.52 MB/s link take 250 * 1048576 / 7.52e6 s
    let oracle_ms = 250.0 * 1_048_576.0 / 7.52e6 * 1e3;
    let s = run_virtual(
        &BenchScenario::blob1m(),
        &calibrated_profile(),
        &VirtualStack::standard(),
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let r = compute_report("blob1m", &s).map_err(|e| e.to_string())?;
    let tens_of_seconds = (10_000.0..100_000.0).contains(&r.mean_latency_ms);
    let within = (r.last_completion_ms - oracle_ms).abs() <= 0.15 * oracle_ms;
    check(
        tens_of_seconds && within,
        format!(
            "mean {:.1} s, last completion {:.1} s vs oracle {:.1} s ({:+.1}%)",
            r.mean_latency_ms / 1e3,
            r.last_completion_ms / 1e3,
            oracle_ms / 1e3,
            (r.last_completion_ms / oracle_ms - 1.0) * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 5

fn first_request() -> Verdict {
    let p = calibrated_profile();
    let s = run_virtual(
        &BenchScenario::empty(),
        &p,
        &VirtualStack::standard(),
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("empty.csv");
    emit_series(&s, &path).map_err(|e| e.to_string())?;
    // read the numbers back from the CSV itself
    let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut rows = text.lines();
    if rows.next() != Some("index,issued_at_ms,latency_ms,status,bytes") {
        return Err("unexpected CSV header".into());
    }
    let mut latencies = Vec::new();
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let status: u16 = cols[3].parse().map_err(|_| format!("bad row {row}"))?;
        if (200..300).contains(&status) {
            latencies.push(
                cols[2]
                    .parse::<f64>()
                    .map_err(|_| format!("bad row {row}"))?,
            );
        }
    }
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let first = latencies[0];
    check(
        first - mean >= p.setup_cost / 2.0,
        format!(
            "row 0 {:.2} ms, mean {:.2} ms, excess {:.2} ms >= setup_cost/2 = {:.2} ms",
            first,
            mean,
            first - mean,
            p.setup_cost / 2.0
        ),
    )
}

// ---------------------------------------------------------------- 6

fn write_repo(dir: &Path, files: &[(&str, String)]) {
    for (rel, body) in files {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }
}

fn pipeline_env(root: &Path, net: &str, readiness: Duration) -> (Pipeline, Arc<Fabric>) {
    let fabric = Arc::new(Fabric::new());
    let mut cfg = PipelineConfig::new(root.join("pipeline"));
    cfg.instance_net = net.parse().unwrap();
    cfg.timeouts.readiness = readiness;
    cfg.readiness_poll = Duration::from_millis(20);
    cfg.extra_path.push(bin_dir());
    (Pipeline::new(cfg, fabric.clone()).unwrap(), fabric)
}

fn pipeline_gating() -> Verdict {
    let start = Instant::now();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pipeline, fabric) = pipeline_env(root.path(), "127.48.6.0/24", Duration::from_secs(10));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut expected = BTreeMap::new();
    let mut repos = Vec::new();
    for i in 0..100 {
        let name = format!("gate-{i:03}");
        let pass = rng.gen_bool(0.5);
        // the test script's verdict depends on a file it checks
        let script = format!(
            "#!/bin/sh\n[ \"$(cat expect)\" = \"{}\" ]\n",
            if pass { "ok" } else { "broken" }
        );
        let dir = root.path().join("repos").join(&name);
        write_repo(
            &dir,
            &[
                (
                    "edge.manifest",
                    "test_command = \"sh test.sh\"\nbuild_recipe = \"static_site public\"\nreplicas = 1\nport = 8080\n"
                        .to_string(),
                ),
                ("test.sh", script),
                ("expect", "ok".to_string()),
                ("public/index.html", format!("<p>{name} {}</p>", rng.gen::<u64>())),
            ],
        );
        pipeline.register_repo(&name).map_err(|e| e.to_string())?;
        let run = pipeline
            .on_push(&name, "", &dir)
            .map_err(|e| e.to_string())?;
        expected.insert(run, (name.clone(), pass));
        repos.push(dir);
    }
    let mut leaked = 0;
    let mut unresolved = 0;
    let mut wrong_verdict = 0;
    let (mut passed, mut failed) = (0, 0);
    for (&run, (name, pass)) in &expected {
        let Some(summary) = pipeline.wait(run, Duration::from_secs(110)) else {
            return Err(format!("run {run} for {name} did not finish"));
        };
        let test_failed = summary
            .events
            .iter()
            .any(|e| e.stage == Stage::Test && e.outcome == Outcome::Fail);
        if test_failed {
            failed += 1;
            if summary
                .events
                .iter()
                .any(|e| matches!(e.stage, Stage::Build | Stage::Store | Stage::Deploy))
            {
                leaked += 1;
            }
        } else {
            passed += 1;
            let fqdn = format!("{name}.edge.local");
            let resolvable = fabric
                .resolve(&fqdn)
                .map(|i| !i.ready.is_empty())
                .unwrap_or(false);
            if summary.address() != Some(fqdn.as_str()) || !resolvable {
                unresolved += 1;
            }
        }
        if test_failed == *pass {
            wrong_verdict += 1;
        }
    }
    pipeline.shutdown();
    let elapsed = start.elapsed();
    check(
        leaked == 0 && unresolved == 0 && wrong_verdict == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{passed} passing / {failed} failing repos; {leaked} failed runs with build/store/deploy events; \
             {unresolved} passing runs without a resolvable address; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn bin_dir() -> PathBuf {
    Path::new(env!("CARGO_BIN_EXE_edgestack"))
        .parent()
        .unwrap()
        .to_path_buf()
}

fn blob_manifest(command: &str, readiness: &str) -> String {
    format!(
        "test_command = \"true\"\nbuild_recipe = \"exec {command}\"\nreplicas = 2\nport = 8080\nreadiness_path = \"{readiness}\"\n"
    )
}

fn ready_set(fabric: &Fabric) -> BTreeSet<SocketAddrV4> {
    fabric
        .record("blob-server")
        .map(|r| {
            r.instances
                .into_iter()
                .filter(|e| e.ready)
                .map(|e| e.address)
                .collect()
        })
        .unwrap_or_default()
}

fn rolling_availability() -> Verdict {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pipeline, fabric) = pipeline_env(root.path(), "127.48.7.0/24", Duration::from_secs(3));
    let repo = root.path().join("blob-server");
    pipeline
        .register_repo("blob-server")
        .map_err(|e| e.to_string())?;
    let push = |revision_note: String, manifest: String| {
        write_repo(
            &repo,
            &[("edge.manifest", manifest), ("REVISION", revision_note)],
        );
        let run = pipeline
            .on_push("blob-server", "", &repo)
            .map_err(|e| e.to_string())?;
        pipeline
            .wait(run, Duration::from_secs(90))
            .ok_or_else(|| format!("run {run} did not finish"))
    };
    let v1 = push(
        "v1".into(),
        blob_manifest("edgestack serve-blobs", "/healthz"),
    )?;
    if v1.error.is_some() {
        return Err(format!("initial deploy failed: {:?}", v1.error));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let (probes, outages) = (Arc::new(AtomicUsize::new(0)), Arc::new(AtomicUsize::new(0)));
    let probe = {
        let (fabric, stop, probes, outages) = (
            fabric.clone(),
            stop.clone(),
            probes.clone(),
            outages.clone(),
        );
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                probes.fetch_add(1, Ordering::Relaxed);
                if let Err(FabricError::NoReadyEndpoints(_)) =
                    fabric.resolve("blob-server.edge.local")
                {
                    outages.fetch_add(1, Ordering::Relaxed);
                }
                thread::sleep(Duration::from_millis(100));
            }
        })
    };

    let mut update_failures = 0;
    for r in 0..20 {
        let run = push(
            format!("update {r}"),
            blob_manifest("edgestack serve-blobs", "/healthz"),
        )?;
        if run.error.is_some() {
            update_failures += 1;
        }
    }
    let mut set_mismatches = 0;
    let mut unexpected_successes = 0;
    for r in 0..20 {
        let before = ready_set(&fabric);
        // alternate a crashing build with one that never becomes ready
        let manifest = if r % 2 == 0 {
            blob_manifest("exit 3", "/healthz")
        } else {
            blob_manifest("edgestack serve-blobs", "/never-ready")
        };
        let run = push(format!("broken {r}"), manifest)?;
        if run.error.is_none() {
            unexpected_successes += 1;
        }
        if ready_set(&fabric) != before {
            set_mismatches += 1;
        }
    }
    stop.store(true, Ordering::Relaxed);
    let _ = probe.join();
    pipeline.shutdown();
    let outages = outages.load(Ordering::Relaxed);
    check(
        outages == 0 && update_failures == 0 && set_mismatches == 0 && unexpected_successes == 0,
        format!(
            "{} probes, {outages} NoReadyEndpoints; 20 updates ({update_failures} failed); \
             20 forced failures ({unexpected_successes} succeeded, {set_mismatches} ready-set changes)",
            probes.load(Ordering::Relaxed)
        ),
    )
}

// ---------------------------------------------------------------- 8

fn fairness() -> Verdict {
    let fabric = Fabric::new();
    let addrs: Vec<SocketAddrV4> = (2..6)
        .map(|h| SocketAddrV4::new(Ipv4Addr::new(10, 45, 1, h), 80))
        .collect();
    for a in &addrs {
        fabric
            .register_instance("fair", *a, "v1")
            .map_err(|e| e.to_string())?;
        fabric
            .set_ready("fair", *a, true)
            .map_err(|e| e.to_string())?;
    }
    let mut counts: HashMap<SocketAddrV4, usize> = HashMap::new();
    for _ in 0..250 {
        *counts
            .entry(
                fabric
                    .pick_endpoint("fair")
                    .map_err(|e| e.to_string())?
                    .address,
            )
            .or_default() += 1;
    }
    // brute-force oracle: a counter cycling over the endpoints
    let mut oracle = [0usize; 4];
    for i in 0..250 {
        oracle[i % 4] += 1;
    }
    let mut got: Vec<usize> = addrs
        .iter()
        .map(|a| counts.get(a).copied().unwrap_or(0))
        .collect();
    let per_endpoint = got.clone();
    got.sort_unstable();
    let mut want = oracle.to_vec();
    want.sort_unstable();
    let spread = got[3] - got[0];
    check(
        got == want && got == [62, 62, 63, 63] && spread <= 1,
        format!("counts {per_endpoint:?}, oracle {oracle:?}"),
    )
}

// ---------------------------------------------------------------- 9

fn session_safety() -> Verdict {
    let start = Instant::now();
    // a /27 has 29 assignable addresses, fewer than the 40 subscribers, so
    // pool exhaustion is exercised too
    let core = Core::new("10.45.0.0/27".parse().unwrap()).unwrap();
    let ids: Vec<String> = (0..40).map(|i| format!("00101{i:010}")).collect();
    for id in &ids {
        core.register_subscriber(id).map_err(|e| e.to_string())?;
    }
    let capacity = 29;
    #[derive(Clone, Copy)]
    struct M {
        ip: Ipv4Addr,
        up: TunnelEndpointId,
        down: TunnelEndpointId,
    }
    let mut model: HashMap<String, M> = HashMap::new();
    let mut issued_teids: HashSet<u32> = HashSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = Vec::new();
    for op in 0..10_000 {
        let id = &ids[rng.gen_range(0..ids.len())];
        match rng.gen_range(0..3) {
            0 => match (core.attach(id), model.contains_key(id)) {
                (Ok(s), false) if model.len() < capacity => {
                    let b = s.bearer.unwrap();
                    let ip_taken = model.values().any(|m| m.ip == b.ue_ip);
                    let fresh = issued_teids.insert(b.uplink_teid.0)
                        & issued_teids.insert(b.downlink_teid.0);
                    if s.state != SessionState::Attached || ip_taken || !fresh {
                        violations.push(format!("op {op}: bad attach {s:?}"));
                    }
                    model.insert(
                        id.clone(),
                        M {
                            ip: b.ue_ip,
                            up: b.uplink_teid,
                            down: b.downlink_teid,
                        },
                    );
                }
                (Err(CoreError::AlreadyAttached(_)), true) => {}
                (Err(CoreError::PoolExhausted), false) if model.len() == capacity => {}
                (r, attached) => violations.push(format!(
                    "op {op}: attach {id} -> {r:?} (model attached={attached})"
                )),
            },
            1 => match (core.detach(id), model.get(id).copied()) {
                (Ok(rel), Some(m))
                    if rel.bearer.ue_ip == m.ip && rel.bearer.uplink_teid == m.up =>
                {
                    model.remove(id);
                }
                (Err(CoreError::NotAttached(_)), None) => {}
                (r, m) => violations.push(format!(
                    "op {op}: detach {id} -> {r:?} (model has={})",
                    m.is_some()
                )),
            },
            _ => {
                // demux either a live uplink TEID or a random one
                let live: Vec<(&String, &M)> = model.iter().collect();
                let teid = if !live.is_empty() && rng.gen_bool(0.7) {
                    live[rng.gen_range(0..live.len())].1.up
                } else {
                    TunnelEndpointId(rng.gen_range(1..=u32::MAX))
                };
                let owner = model
                    .iter()
                    .find(|(_, m)| m.up == teid)
                    .map(|(k, _)| k.clone());
                let payload: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
                let wire = gtp::encode_gpdu(teid, &payload).unwrap();
                match (core.demux_uplink(&wire), owner) {
                    (Ok((s, inner)), Some(o)) if s.subscriber_id == o && inner == payload => {}
                    (Err(CoreError::UnknownTeid(t)), None) if t == teid => {}
                    (r, o) => violations.push(format!(
                        "op {op}: demux {teid} -> {:?} (owner {o:?})",
                        r.map(|x| x.0)
                    )),
                }
            }
        }
        // table-wide invariants against the model
        let sessions = core.sessions();
        let live: Vec<_> = sessions
            .iter()
            .filter(|s| s.state != SessionState::Detached)
            .collect();
        let ips: HashSet<_> = live.iter().filter_map(|s| s.ue_ip()).collect();
        let teids: HashSet<_> = live.iter().filter_map(|s| s.uplink_teid()).collect();
        if live.len() != model.len() || ips.len() != live.len() || teids.len() != live.len() {
            violations.push(format!(
                "op {op}: table has {} sessions, model {}",
                live.len(),
                model.len()
            ));
        }
        for s in &live {
            let m = model.get(&s.subscriber_id);
            let agrees = m.is_some_and(|m| {
                s.state == SessionState::Attached
                    && s.ue_ip() == Some(m.ip)
                    && s.uplink_teid() == Some(m.up)
                    && s.downlink_teid() == Some(m.down)
            });
            if !agrees {
                violations.push(format!(
                    "op {op}: session {} disagrees with model",
                    s.subscriber_id
                ));
            }
        }
        if violations.len() > 5 {
            break;
        }
    }
    let elapsed = start.elapsed();
    check(
        violations.is_empty() && elapsed < Duration::from_secs(30),
        if violations.is_empty() {
            format!(
                "10000 operations, 0 violations, {:.2}s",
                elapsed.as_secs_f64()
            )
        } else {
            format!("violations: {}", violations.join("; "))
        },
    )
}

// ---------------------------------------------------------------- 10

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &str| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_edgestack"))
            .args(["bench", "all", "--seed", "7", "--out", out])
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.success() {
            Ok(())
        } else {
            Err(format!(
                "bench all failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ))
        }
    };
    run("a")?;
    run("b")?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for scenario in ["empty", "blob1m", "blob10m", "baseline"] {
        for file in [format!("{scenario}.csv"), format!("{scenario}.report.toml")] {
            let a =
                fs::read(dir.path().join("a").join(&file)).map_err(|e| format!("{file}: {e}"))?;
            let b =
                fs::read(dir.path().join("b").join(&file)).map_err(|e| format!("{file}: {e}"))?;
            compared += 1;
            if a != b {
                differing.push(file);
            }
        }
    }
    check(
        differing.is_empty(),
        format!("{compared} files compared across two seeded runs, differing: {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("GTP codec round-trip and fixed vector", gtp_codec),
        ("empty scenario mean and p99 vs reference", empty_row),
        ("blob10m throughput ceiling", throughput_ceiling),
        ("blob1m saturation and queueing law", queueing_law),
        ("first-request effect in the empty series", first_request),
        ("pipeline gating over 100 random repos", pipeline_gating),
        ("rolling availability and rollback", rolling_availability),
        ("round-robin fairness", fairness),
        ("session-table safety against a set model", session_safety),
        ("determinism of seeded benchmark output", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(p) => Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        match verdict {
            Ok(detail) => println!("criterion {:>2}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
