use std::fs::{self, File};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use edgestack::epc::Signal;
use edgestack::pipeline::{snapshot_hash, Deployment, Manifest, Outcome, PushRequest, RunSummary};

use crate::client::Client;
use crate::config::StackConfig;
use crate::daemon::{self, StatusReply, SubscriberRequest};
use crate::error::{CliError, Result};
use crate::state::{self, CORE_LOG};

const STARTUP_TIMEOUT: Duration = Duration::from_secs(20);
const SHUTDOWN_TIMEOUT: Duration = Duration::from_secs(60);
const POLL: Duration = Duration::from_millis(50);

fn log_tail(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(5)..].join("\n")
}

/// Starts the core as a background process and waits until it is serving.
pub fn core_up(cfg: &StackConfig) -> Result<()> {
    fs::create_dir_all(&cfg.state_dir)?;
    if let Ok(c) = Client::connect(&cfg.state_dir) {
        if c.is_alive() {
            return Err(CliError::PortInUse(cfg.addr(c.state.ports.control)));
        }
        // left behind by a core that did not shut down cleanly
        state::remove(&cfg.state_dir);
    }
    daemon::check_ports_free(cfg)?;

    let mut child_cfg = cfg.clone();
    child_cfg.state_dir = fs::canonicalize(&cfg.state_dir)?;
    let log_path = child_cfg.state_dir.join(CORE_LOG);
    let log = File::create(&log_path)?;
    let mut child = Command::new(std::env::current_exe()?)
        .args(["core", "serve"])
        .args(child_cfg.to_args())
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .process_group(0)
        .spawn()?;

    let deadline = Instant::now() + STARTUP_TIMEOUT;
    loop {
        if let Some(status) = child.try_wait()? {
            return Err(CliError::Remote(format!(
                "core exited ({status}): {}",
                log_tail(&log_path)
            )));
        }
        if let Ok(c) = Client::connect(&cfg.state_dir) {
            if c.state.pid == child.id() && c.is_alive() {
                break;
            }
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            return Err(CliError::Remote(format!(
                "core did not come up: {}",
                log_tail(&log_path)
            )));
        }
        thread::sleep(POLL);
    }
    println!("core up pid {}", child.id());
    for (name, port) in cfg.ports.named() {
        println!("{name} {}", cfg.addr(port));
    }
    Ok(())
}

pub fn core_down(cfg: &StackConfig) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    if !c.is_alive() {
        state::remove(&cfg.state_dir);
        return Err(CliError::NotRunning(cfg.state_dir.display().to_string()));
    }
    c.admin_post::<serde_json::Value>("/shutdown", &serde_json::json!({}))?;
    let deadline = Instant::now() + SHUTDOWN_TIMEOUT;
    while state::load(&cfg.state_dir).is_some() {
        if Instant::now() > deadline {
            return Err(CliError::Remote(format!(
                "core pid {} did not shut down",
                c.state.pid
            )));
        }
        thread::sleep(POLL);
    }
    println!("core down");
    Ok(())
}

pub fn core_status(cfg: &StackConfig) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    let s: StatusReply = c.admin_get("/status")?;
    println!("core running pid {}", s.pid);
    for (name, port) in c.state.ports.named() {
        println!(
            "{name} {}",
            std::net::SocketAddr::from((c.state.bind, port))
        );
    }
    println!("sessions {}", s.sessions);
    print!("{}", s.session_dump);
    println!("services {}", s.services);
    print!("{}", s.service_dump);
    Ok(())
}

pub fn ue_register(cfg: &StackConfig, id: &str) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    let _: serde_json::Value = c.admin_post(
        "/subscribers",
        &SubscriberRequest {
            subscriber_id: id.to_string(),
        },
    )?;
    println!("registered {id}");
    Ok(())
}

pub fn ue_attach(cfg: &StackConfig, id: &str) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    match c.signal(&Signal::AttachRequest {
        subscriber_id: id.to_string(),
    })? {
        Signal::AttachAccept { session } => {
            println!("{}", session.dump_line());
            Ok(())
        }
        Signal::Reject { cause } => Err(CliError::Remote(cause)),
        other => Err(CliError::Remote(format!("unexpected reply {other:?}"))),
    }
}

pub fn ue_detach(cfg: &StackConfig, id: &str) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    match c.signal(&Signal::DetachRequest {
        subscriber_id: id.to_string(),
    })? {
        Signal::DetachAccept { released } => {
            let b = released.bearer;
            println!(
                "detached {} released {} {} {}",
                released.subscriber_id, b.ue_ip, b.uplink_teid, b.downlink_teid
            );
            Ok(())
        }
        Signal::Reject { cause } => Err(CliError::Remote(cause)),
        other => Err(CliError::Remote(format!("unexpected reply {other:?}"))),
    }
}

pub fn ue_list(cfg: &StackConfig) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    let s: StatusReply = c.admin_get("/status")?;
    print!("{}", s.session_dump);
    Ok(())
}

pub struct PushArgs<'a> {
    pub dir: &'a Path,
    pub name: Option<&'a str>,
    pub revision: Option<&'a str>,
    pub wait: Duration,
}

/// Pushes a directory as a new revision of its repo and follows the run,
/// printing one line per stage event.
pub fn app_push(cfg: &StackConfig, args: PushArgs<'_>) -> Result<()> {
    let dir = fs::canonicalize(args.dir)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", args.dir.display())))?;
    Manifest::load(&dir)?;
    let name = match args.name {
        Some(n) => n.to_string(),
        None => dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| {
                CliError::Usage(format!("cannot derive an app name from {}", dir.display()))
            })?,
    };
    let revision = match args.revision {
        Some(r) => r.to_string(),
        None => snapshot_hash(&dir)?,
    };
    let c = Client::connect(&cfg.state_dir)?;
    let previous: Option<Deployment> = c.webhook_get_opt(&format!("/apps/{name}"))?;
    let _: serde_json::Value = c.webhook_post("/repos", &serde_json::json!({ "repo_id": name }))?;
    let queued: serde_json::Value = c.webhook_post(
        "/hooks/push",
        &PushRequest {
            repo_id: name.clone(),
            revision: revision.clone(),
            snapshot_path: dir.clone(),
        },
    )?;
    let run_id = queued["run_id"]
        .as_u64()
        .ok_or_else(|| CliError::Remote(format!("unexpected push reply {queued}")))?;
    println!("push {name} revision {revision} run {run_id}");

    let deadline = Instant::now() + args.wait;
    let mut printed = 0;
    let run = loop {
        let run: RunSummary = c.webhook_get(&format!("/runs/{run_id}"))?;
        for e in &run.events[printed..] {
            let outcome = match e.outcome {
                Outcome::Ok => "ok",
                Outcome::Fail => "fail",
            };
            let detail = e.detail.replace(['\n', '\r'], " ");
            println!(
                "stage {} {} {outcome} {}",
                e.stage.number(),
                e.stage.name(),
                detail.trim_end()
            );
        }
        printed = run.events.len();
        if run.finished {
            break run;
        }
        if Instant::now() > deadline {
            return Err(CliError::Remote(format!(
                "run {run_id} still in progress after {:?}",
                args.wait
            )));
        }
        thread::sleep(POLL * 2);
    };
    if let Some(reason) = run.error.clone() {
        let stage = run
            .failed_stage()
            .map_or("unknown", |s| s.name())
            .to_string();
        return Err(CliError::DeployFailed { stage, reason });
    }
    let d = &run.deployment;
    let artifact = d.artifact_id.clone().unwrap_or_default();
    let unchanged = previous
        .and_then(|p| p.artifact_id)
        .is_some_and(|prev| prev == artifact);
    println!(
        "artifact {artifact} {}",
        if unchanged { "unchanged" } else { "new" }
    );
    println!("version {}", d.version);
    println!("address {}", run.address().unwrap_or_default());
    Ok(())
}

pub fn app_status(cfg: &StackConfig, name: &str) -> Result<()> {
    let c = Client::connect(&cfg.state_dir)?;
    let d: Deployment = c
        .webhook_get_opt(&format!("/apps/{name}"))?
        .ok_or_else(|| CliError::Remote(format!("app {name} is not running")))?;
    println!("app {}", d.app);
    println!("status {}", d.status);
    println!("version {}", d.version);
    println!("artifact {}", d.artifact_id.as_deref().unwrap_or("-"));
    println!("replicas {}/{} ready", d.ready_count(), d.desired_replicas);
    for e in &d.instances {
        println!(
            "instance {} {} {}",
            e.address,
            if e.ready { "ready" } else { "not-ready" },
            e.version
        );
    }
    if let Ok(addr) = d.address() {
        println!("address {addr}");
    }
    Ok(())
}
