//! Push-to-deploy pipeline.
//!
//! A push names a repo, a revision and a directory snapshot. Each run walks
//! the nine stages in order: accept, pull, test, build, store, deploy,
//! provision, readiness, address. A failing stage ends the run. Runs for one
//! repo execute one at a time in arrival order; different repos proceed in
//! parallel on their own worker threads.
//!
//! Rollouts are rolling: the new version's instances must all pass their
//! readiness probe before any instance of the running version is withdrawn,
//! and a rollout that fails leaves the previous version untouched.

mod bundle;
mod events;
mod manifest;
mod runtime;
mod shell;
mod snapshot;
mod store;
mod webhook;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{fqdn, probe_ready, validate_name, Endpoint, Fabric, FabricError};

pub use bundle::{build, unpack, version_tag, BuildArtifact, BundleKind, BundleSpec};
pub use events::{well_ordered, Outcome, PipelineEvent, RunId, Stage};
pub use manifest::{BuildRecipe, Manifest, Timeouts, MANIFEST_FILE};
pub use runtime::{Instance, Runtime, RuntimeConfig, StaticHost, DEFAULT_INSTANCE_NET};
use shell::search_path;
pub use shell::{run_shell, ShellOutcome};
pub use snapshot::{copy_snapshot, revision_matches, snapshot_hash};
pub use store::{content_id, ArtifactRef, ArtifactStore, StoreError};
pub use webhook::{PushRequest, WebhookServer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown repo {0}")]
    UnknownRepo(String),
    #[error("revision {revision:?} cannot be resolved: {reason}")]
    UnresolvableRevision { revision: String, reason: String },
    #[error("no manifest at {}", .0.display())]
    MissingManifest(PathBuf),
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("{stage} timed out after {after:?}")]
    Timeout {
        stage: &'static str,
        after: Duration,
    },
    #[error("tests failed (exit code {exit_code:?})")]
    TestsFailed {
        exit_code: Option<i32>,
        output: String,
    },
    #[error("build failed: {0}")]
    BuildFailed(String),
    #[error("malformed bundle: {0}")]
    BadBundle(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("provisioning failed: {0}")]
    ProvisionFailed(String),
    #[error("{0} is not running")]
    NotRunning(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeploymentStatus {
    Pending,
    Testing,
    Building,
    Deploying,
    Running,
    Failed,
    /// Was RUNNING and has been replaced by a newer version.
    Retired,
}

impl DeploymentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentStatus::Pending => "PENDING",
            DeploymentStatus::Testing => "TESTING",
            DeploymentStatus::Building => "BUILDING",
            DeploymentStatus::Deploying => "DEPLOYING",
            DeploymentStatus::Running => "RUNNING",
            DeploymentStatus::Failed => "FAILED",
            DeploymentStatus::Retired => "RETIRED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            DeploymentStatus::Running | DeploymentStatus::Failed | DeploymentStatus::Retired
        )
    }
}

impl std::fmt::Display for DeploymentStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub app: String,
    /// Empty until the build produced an artifact.
    pub version: String,
    pub artifact_id: Option<String>,
    pub desired_replicas: u32,
    pub instances: Vec<Endpoint>,
    pub status: DeploymentStatus,
}

impl Deployment {
    pub fn ready_count(&self) -> usize {
        self.instances.iter().filter(|e| e.ready).count()
    }

    pub fn address(&self) -> Result<String, PipelineError> {
        if self.status == DeploymentStatus::Running {
            Ok(fqdn(&self.app))
        } else {
            Err(PipelineError::NotRunning(self.app.clone()))
        }
    }
}

/// Everything known about one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: RunId,
    pub repo_id: String,
    pub revision: String,
    pub events: Vec<PipelineEvent>,
    pub deployment: Deployment,
    pub finished: bool,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn address(&self) -> Option<&str> {
        self.events
            .iter()
            .find(|e| e.stage == Stage::Address && e.outcome == Outcome::Ok)
            .map(|e| e.detail.as_str())
    }

    pub fn failed_stage(&self) -> Option<Stage> {
        self.events
            .iter()
            .find(|e| e.outcome == Outcome::Fail)
            .map(|e| e.stage)
    }
}

/// Result of a test stage that ran to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestReport {
    pub passed: bool,
    pub exit_code: Option<i32>,
    pub output: String,
}

/// Runs the manifest's test command inside `workdir`. A timeout is an
/// error; a nonzero exit is a report with `passed == false`. `extra_path`
/// directories are searched before the inherited `PATH`.
pub fn run_tests(
    workdir: &Path,
    timeout: Duration,
    extra_path: &[PathBuf],
) -> Result<TestReport, PipelineError> {
    let manifest = Manifest::load(workdir)?;
    let path = search_path(extra_path)?;
    let env: Vec<(&str, &str)> = path.iter().map(|p| ("PATH", p.as_str())).collect();
    let out = run_shell(&manifest.test_command, workdir, &env, timeout)?;
    if out.timed_out {
        return Err(PipelineError::Timeout {
            stage: "test",
            after: timeout,
        });
    }
    Ok(TestReport {
        passed: out.success(),
        exit_code: out.exit_code,
        output: out.output,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Holds `store/`, `runs/`, `instances/` and `pipeline.log`.
    pub root: PathBuf,
    pub timeouts: Timeouts,
    pub store_quota: u64,
    pub instance_net: ipnet::Ipv4Net,
    pub extra_path: Vec<PathBuf>,
    pub readiness_poll: Duration,
}

impl PipelineConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            root: root.into(),
            timeouts: Timeouts::default(),
            store_quota: 4 << 30,
            instance_net: DEFAULT_INSTANCE_NET.parse().expect("valid default network"),
            extra_path: Vec::new(),
            readiness_poll: Duration::from_millis(100),
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct QueuedRun {
    run_id: RunId,
    snapshot: PathBuf,
    snapshot_hash: String,
}

#[derive(Default)]
struct RepoQueue {
    queue: VecDeque<QueuedRun>,
    busy: bool,
}

/// The version currently serving an app.
struct Live {
    run_id: RunId,
    instances: Vec<Instance>,
}

struct Shared {
    cfg: PipelineConfig,
    fabric: Arc<Fabric>,
    store: ArtifactStore,
    runtime: Runtime,
    repos: Mutex<HashMap<String, RepoQueue>>,
    runs: Mutex<BTreeMap<RunId, RunSummary>>,
    run_done: Condvar,
    live: Mutex<HashMap<String, Live>>,
    log: Mutex<File>,
    next_run: AtomicU64,
}

/// Handle to the pipeline; clones share state.
#[derive(Clone)]
pub struct Pipeline {
    shared: Arc<Shared>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, fabric: Arc<Fabric>) -> Result<Pipeline, PipelineError> {
        fs::create_dir_all(&cfg.root)?;
        let store = ArtifactStore::open(cfg.root.join("store"), cfg.store_quota)?;
        let mut rt_cfg = RuntimeConfig::new(cfg.root.join("instances"));
        rt_cfg.address_pool = cfg.instance_net;
        rt_cfg.extra_path = cfg.extra_path.clone();
        let runtime = Runtime::new(rt_cfg)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(cfg.root.join("pipeline.log"))?;
        // continue numbering after runs recorded by an earlier process
        let last_run = fs::read_to_string(cfg.root.join("pipeline.log"))
            .unwrap_or_default()
            .lines()
            .filter_map(|l| l.parse::<PipelineEvent>().ok())
            .map(|e| e.run_id)
            .max()
            .unwrap_or(0);
        Ok(Pipeline {
            shared: Arc::new(Shared {
                cfg,
                fabric,
                store,
                runtime,
                repos: Mutex::new(HashMap::new()),
                runs: Mutex::new(BTreeMap::new()),
                run_done: Condvar::new(),
                live: Mutex::new(HashMap::new()),
                log: Mutex::new(log),
                next_run: AtomicU64::new(last_run + 1),
            }),
        })
    }

    pub fn fabric(&self) -> &Arc<Fabric> {
        &self.shared.fabric
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.shared.store
    }

    pub fn log_path(&self) -> PathBuf {
        self.shared.cfg.root.join("pipeline.log")
    }

    /// Makes a repo known. The repo id doubles as the app's service name,
    /// so it must be a DNS label. Idempotent.
    pub fn register_repo(&self, repo_id: &str) -> Result<(), PipelineError> {
        validate_name(repo_id)?;
        self.shared
            .repos
            .lock()
            .entry(repo_id.to_string())
            .or_default();
        Ok(())
    }

    pub fn repos(&self) -> Vec<String> {
        let mut v: Vec<String> = self.shared.repos.lock().keys().cloned().collect();
        v.sort();
        v
    }

    /// Queues a run for `repo_id` at `revision`, whose content is the
    /// directory `snapshot`. Returns as soon as the run is queued.
    pub fn on_push(
        &self,
        repo_id: &str,
        revision: &str,
        snapshot: &Path,
    ) -> Result<RunId, PipelineError> {
        if !self.shared.repos.lock().contains_key(repo_id) {
            return Err(PipelineError::UnknownRepo(repo_id.to_string()));
        }
        let unresolvable = |reason: String| PipelineError::UnresolvableRevision {
            revision: revision.to_string(),
            reason,
        };
        let hash = snapshot_hash(snapshot).map_err(|e| unresolvable(e.to_string()))?;
        if !revision_matches(revision, &hash) {
            return Err(unresolvable(format!("snapshot content hashes to {hash}")));
        }
        let revision = if revision.trim().is_empty() {
            hash.clone()
        } else {
            revision.trim().to_string()
        };
        let run_id = self.shared.next_run.fetch_add(1, Ordering::Relaxed);
        self.shared.runs.lock().insert(
            run_id,
            RunSummary {
                run_id,
                repo_id: repo_id.to_string(),
                revision: revision.clone(),
                events: Vec::new(),
                deployment: Deployment {
                    app: repo_id.to_string(),
                    version: String::new(),
                    artifact_id: None,
                    desired_replicas: 0,
                    instances: Vec::new(),
                    status: DeploymentStatus::Pending,
                },
                finished: false,
                error: None,
            },
        );
        self.shared.emit(
            run_id,
            Stage::Push,
            Outcome::Ok,
            format!("repo={repo_id} revision={revision}"),
        );

        let start_worker = {
            let mut repos = self.shared.repos.lock();
            let q = repos.get_mut(repo_id).expect("checked above");
            q.queue.push_back(QueuedRun {
                run_id,
                snapshot: snapshot.to_path_buf(),
                snapshot_hash: hash,
            });
            !std::mem::replace(&mut q.busy, true)
        };
        if start_worker {
            let shared = self.shared.clone();
            let repo = repo_id.to_string();
            std::thread::Builder::new()
                .name(format!("pipeline-{repo}"))
                .spawn(move || shared.drain(&repo))?;
        }
        Ok(run_id)
    }

    pub fn run(&self, run_id: RunId) -> Option<RunSummary> {
        self.shared.runs.lock().get(&run_id).cloned()
    }

    pub fn runs(&self) -> Vec<RunSummary> {
        self.shared.runs.lock().values().cloned().collect()
    }

    pub fn events(&self, run_id: RunId) -> Vec<PipelineEvent> {
        self.run(run_id).map(|r| r.events).unwrap_or_default()
    }

    /// Blocks until the run finishes or `timeout` elapses.
    pub fn wait(&self, run_id: RunId, timeout: Duration) -> Option<RunSummary> {
        let deadline = Instant::now() + timeout;
        let mut runs = self.shared.runs.lock();
        loop {
            match runs.get(&run_id) {
                None => return None,
                Some(r) if r.finished => return Some(r.clone()),
                Some(_) => {}
            }
            if self
                .shared
                .run_done
                .wait_until(&mut runs, deadline)
                .timed_out()
            {
                return runs.get(&run_id).cloned();
            }
        }
    }

    /// The RUNNING deployment of an app, if any.
    pub fn deployment(&self, app: &str) -> Option<Deployment> {
        let run_id = self.shared.live.lock().get(app)?.run_id;
        self.run(run_id).map(|r| r.deployment)
    }

    pub fn get_address(&self, app: &str) -> Result<String, PipelineError> {
        match self.deployment(app) {
            Some(d) => d.address(),
            None => Err(PipelineError::NotRunning(app.to_string())),
        }
    }

    /// Stops every running instance and withdraws it from the fabric.
    pub fn shutdown(&self) {
        let live: Vec<(String, Live)> = self.shared.live.lock().drain().collect();
        for (app, l) in live {
            self.shared.withdraw(&app, l.instances);
            self.shared.set_status(l.run_id, DeploymentStatus::Retired);
        }
    }
}

impl Shared {
    fn emit(&self, run_id: RunId, stage: Stage, outcome: Outcome, detail: String) {
        let event = PipelineEvent {
            run_id,
            stage,
            outcome,
            timestamp: now_ms(),
            detail,
        };
        log::info!("pipeline event {event}");
        if let Err(e) = writeln!(self.log.lock(), "{event}") {
            log::warn!("cannot append to pipeline log: {e}");
        }
        if let Some(run) = self.runs.lock().get_mut(&run_id) {
            run.events.push(event);
        }
    }

    fn update(&self, run_id: RunId, f: impl FnOnce(&mut Deployment)) {
        if let Some(run) = self.runs.lock().get_mut(&run_id) {
            f(&mut run.deployment);
        }
    }

    fn set_status(&self, run_id: RunId, status: DeploymentStatus) {
        self.update(run_id, |d| d.status = status);
    }

    fn finish(&self, run_id: RunId, error: Option<String>) {
        if let Some(run) = self.runs.lock().get_mut(&run_id) {
            run.finished = true;
            run.error = error;
            if run.deployment.status != DeploymentStatus::Running {
                run.deployment.status = DeploymentStatus::Failed;
            }
        }
        self.run_done.notify_all();
    }

    fn drain(self: Arc<Self>, repo: &str) {
        loop {
            let next = {
                let mut repos = self.repos.lock();
                let q = repos.get_mut(repo).expect("repo queues are never removed");
                match q.queue.pop_front() {
                    Some(r) => r,
                    None => {
                        q.busy = false;
                        return;
                    }
                }
            };
            let run_id = next.run_id;
            let result = self.execute(repo, next);
            self.finish(run_id, result.err().map(|e| e.to_string()));
        }
    }

    /// Records the outcome of one stage and passes the result through.
    fn record<T>(
        &self,
        id: RunId,
        stage: Stage,
        r: Result<T, PipelineError>,
        detail: impl FnOnce(&T) -> String,
    ) -> Result<T, PipelineError> {
        match &r {
            Ok(v) => self.emit(id, stage, Outcome::Ok, detail(v)),
            Err(PipelineError::TestsFailed { exit_code, output }) => self.emit(
                id,
                stage,
                Outcome::Fail,
                format!(
                    "tests failed (exit code {exit_code:?}): {}",
                    tail(output, 400)
                ),
            ),
            Err(e) => self.emit(id, stage, Outcome::Fail, e.to_string()),
        }
        r
    }

    /// Runs stages 2–9. Every stage records exactly one event; the first
    /// failure is recorded and ends the run.
    fn execute(&self, app: &str, run: QueuedRun) -> Result<(), PipelineError> {
        let id = run.run_id;

        let workdir = self.cfg.root.join("runs").join(id.to_string()).join("src");
        let pulled = (|| {
            if workdir.exists() {
                fs::remove_dir_all(&workdir)?;
            }
            copy_snapshot(&run.snapshot, &workdir)?;
            let copied = snapshot_hash(&workdir)?;
            if copied != run.snapshot_hash {
                return Err(PipelineError::UnresolvableRevision {
                    revision: run.snapshot_hash.clone(),
                    reason: "snapshot changed after the push".into(),
                });
            }
            Ok(copied)
        })();
        self.record(id, Stage::Pull, pulled, |h| format!("snapshot={h}"))?;

        self.set_status(id, DeploymentStatus::Testing);
        let tested = Manifest::load(&workdir).and_then(|m| {
            let report = run_tests(&workdir, self.cfg.timeouts.test, &self.cfg.extra_path)?;
            if report.passed {
                Ok(m)
            } else {
                Err(PipelineError::TestsFailed {
                    exit_code: report.exit_code,
                    output: report.output,
                })
            }
        });
        let manifest = self.record(id, Stage::Test, tested, |m| {
            format!("`{}` passed", m.test_command)
        })?;
        self.update(id, |d| d.desired_replicas = manifest.replicas);

        self.set_status(id, DeploymentStatus::Building);
        let built = build(
            &workdir,
            app,
            &manifest,
            self.cfg.timeouts.build,
            &self.cfg.extra_path,
        );
        let artifact = self.record(id, Stage::Build, built, |a| {
            format!("artifact={} version={}", a.artifact_id, a.version)
        })?;

        let stored = self
            .store
            .put(&artifact.payload)
            .map_err(PipelineError::from);
        self.record(id, Stage::Store, stored, |r| {
            format!("stored {}", r.path.display())
        })?;
        self.update(id, |d| {
            d.version = artifact.version.clone();
            d.artifact_id = Some(artifact.artifact_id.clone());
        });

        self.set_status(id, DeploymentStatus::Deploying);
        self.rollout(
            id,
            app,
            &artifact.artifact_id,
            manifest.replicas,
            &manifest.readiness_path,
        )
    }

    fn rollout(
        &self,
        id: RunId,
        app: &str,
        artifact_id: &str,
        replicas: u32,
        readiness_path: &str,
    ) -> Result<(), PipelineError> {
        // fetching back from the store re-verifies the content hash
        let fetched = self.store.get(artifact_id).map_err(PipelineError::from);
        let payload = self.record(id, Stage::Deploy, fetched, |_| {
            format!("artifact={artifact_id} replicas={replicas}")
        })?;
        let version = version_tag(artifact_id);

        let mut fresh: Vec<Instance> = Vec::new();
        let provisioned = (|| {
            for _ in 0..replicas {
                let inst = self.runtime.start(&payload)?;
                let addr = inst.address;
                fresh.push(inst);
                self.fabric.register_instance(app, addr, &version)?;
            }
            Ok(())
        })();
        self.sync_instances(id, app, &fresh);
        let addrs = fresh
            .iter()
            .map(|i| i.address.to_string())
            .collect::<Vec<_>>()
            .join(",");
        if let Err(e) = self.record(id, Stage::Provision, provisioned, |_| addrs) {
            self.withdraw(app, fresh);
            self.sync_instances(id, app, &[]);
            return Err(e);
        }

        let ready = self.await_ready(app, &mut fresh, readiness_path);
        self.sync_instances(id, app, &fresh);
        if let Err(e) = self.record(id, Stage::Readiness, ready, |n| {
            format!("{n}/{replicas} ready")
        }) {
            self.withdraw(app, fresh);
            self.sync_instances(id, app, &[]);
            return Err(e);
        }

        // the new version is fully ready, so the old one can go
        let previous = self.live.lock().insert(
            app.to_string(),
            Live {
                run_id: id,
                instances: fresh,
            },
        );
        self.set_status(id, DeploymentStatus::Running);
        if let Some(old) = previous {
            self.withdraw(app, old.instances);
            self.set_status(old.run_id, DeploymentStatus::Retired);
        }

        let address = fqdn(app);
        self.record(id, Stage::Address, Ok(()), |_| address)?;
        Ok(())
    }

    fn await_ready(
        &self,
        app: &str,
        instances: &mut [Instance],
        path: &str,
    ) -> Result<usize, PipelineError> {
        let deadline = Instant::now() + self.cfg.timeouts.readiness;
        let mut ready = vec![false; instances.len()];
        loop {
            for (i, inst) in instances.iter_mut().enumerate() {
                if ready[i] {
                    continue;
                }
                if let Some(reason) = inst.exit_reason() {
                    return Err(PipelineError::ProvisionFailed(format!(
                        "{}: {reason}",
                        inst.address
                    )));
                }
                if probe_ready(inst.address, path) {
                    self.fabric.set_ready(app, inst.address, true)?;
                    ready[i] = true;
                }
            }
            let n = ready.iter().filter(|r| **r).count();
            if n == instances.len() {
                return Ok(n);
            }
            if Instant::now() >= deadline {
                return Err(PipelineError::ProvisionFailed(format!(
                    "{n}/{} instances ready after {:?}",
                    instances.len(),
                    self.cfg.timeouts.readiness
                )));
            }
            std::thread::sleep(self.cfg.readiness_poll);
        }
    }

    /// Takes instances out of rotation, then deregisters and stops them.
    fn withdraw(&self, app: &str, instances: Vec<Instance>) {
        for inst in &instances {
            let _ = self.fabric.set_ready(app, inst.address, false);
        }
        for inst in instances {
            let _ = self.fabric.deregister_instance(app, inst.address);
            inst.stop();
        }
    }

    /// Mirrors the fabric's view of these instances into the run record.
    fn sync_instances(&self, id: RunId, app: &str, instances: &[Instance]) {
        let record = self.fabric.record(app);
        let endpoints = instances
            .iter()
            .map(|i| {
                record
                    .as_ref()
                    .and_then(|r| r.instances.iter().find(|e| e.address == i.address).cloned())
                    .unwrap_or(Endpoint {
                        address: i.address,
                        ready: false,
                        version: String::new(),
                    })
            })
            .collect();
        self.update(id, |d| d.instances = endpoints);
    }
}

fn tail(s: &str, max: usize) -> &str {
    let s = s.trim_end();
    let mut start = s.len().saturating_sub(max);
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}
