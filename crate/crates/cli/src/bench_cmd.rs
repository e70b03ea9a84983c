use std::fs;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use edgestack::bench::{
    calibrated_profile, compute_report, emit_plot, emit_series, run_virtual, run_wall, serve_blobs,
    summary_table, BenchReport, BenchScenario, BlobCorpus, ConnectionPolicy, LiveStack, RunOptions,
    VirtualStack, DEFAULT_CORPUS_SEED,
};
use edgestack::radio::{ClockMode, LinkProfile};

use crate::config::StackConfig;
use crate::error::{CliError, Result};

pub struct BenchArgs<'a> {
    pub scenario: &'a str,
    pub seed: Option<u64>,
    pub out: &'a Path,
    pub policy: ConnectionPolicy,
    pub timeout: Duration,
    pub plot: bool,
}

pub fn report_path(out: &Path, scenario: &str) -> PathBuf {
    out.join(format!("{scenario}.report.toml"))
}

pub fn series_path(out: &Path, scenario: &str) -> PathBuf {
    out.join(format!("{scenario}.csv"))
}

/// Runs one scenario or all four, writing a series CSV and a report per
/// scenario. With `all`, also prints the combined summary table.
pub fn bench(cfg: &StackConfig, args: BenchArgs<'_>) -> Result<()> {
    let scenarios = match args.scenario {
        "all" => BenchScenario::all(),
        name => vec![BenchScenario::by_name(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown scenario {name:?} (empty|blob1m|blob10m|baseline|all)"
            ))
        })?],
    };
    let base = match &cfg.profile {
        Some(path) => LinkProfile::load(path)?,
        None => calibrated_profile(),
    };
    base.validate()?;
    fs::create_dir_all(args.out)?;
    let opts = RunOptions {
        policy: args.policy,
        timeout: args.timeout,
    };
    let live = match cfg.clock {
        ClockMode::Wall => Some(LiveStack::standalone(Arc::new(BlobCorpus::generate(
            DEFAULT_CORPUS_SEED,
        )))?),
        ClockMode::Virtual => None,
    };

    let mut reports: Vec<BenchReport> = Vec::new();
    let mut failure = None;
    for sc in &scenarios {
        let mut profile = sc.profile.unwrap_or(base);
        if let Some(seed) = args.seed {
            profile.seed = seed;
        }
        let samples = match &live {
            Some(stack) => run_wall(sc, &profile, stack, opts)?,
            None => run_virtual(sc, &profile, &VirtualStack::standard(), opts)?,
        };
        let series = series_path(args.out, &sc.name);
        emit_series(&samples, &series)?;
        println!("series {}", series.display());
        if args.plot {
            let svg = args.out.join(format!("{}.svg", sc.name));
            emit_plot(&sc.name, &samples, &svg)?;
            println!("plot {}", svg.display());
        }
        match compute_report(&sc.name, &samples) {
            Ok(r) => {
                let path = report_path(args.out, &sc.name);
                r.write(&path)?;
                println!("report {}", path.display());
                println!(
                    "{}: mean {:.1} ms p99 {:.1} ms throughput {:.3} MB/s ok {}/{}",
                    r.scenario,
                    r.mean_latency_ms,
                    r.p99_latency_ms,
                    r.throughput / 1e6,
                    r.success_count,
                    r.requests
                );
                reports.push(r);
            }
            Err(e) => {
                println!("{}: {e}", sc.name);
                failure.get_or_insert(e);
            }
        }
    }
    if scenarios.len() > 1 {
        print!("{}", summary_table(&reports));
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn serve(host: &str, port: u16, corpus_seed: u64) -> Result<()> {
    let addr = (host, port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| CliError::Usage(format!("cannot resolve {host}:{port}")))?;
    let server = serve_blobs(Arc::new(BlobCorpus::generate(corpus_seed)), addr)?;
    println!("serving blobs on {}", server.local_addr());
    server.wait();
    Ok(())
}

pub fn gen_corpus(dir: &Path, corpus_seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let c = BlobCorpus::generate(corpus_seed);
    for (name, bytes) in [
        ("empty.html", &c.empty),
        ("blob1m.bin", &c.blob_1mb),
        ("blob10m.bin", &c.blob_10mb),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        println!("{} {}", path.display(), bytes.len());
    }
    Ok(())
}
