//! Process-level runtime: each app instance is either a supervised child
//! process (`exec` bundles) or an in-process static file host. Instances get
//! their own loopback address from a pool and listen on the manifest port,
//! the way pods share a container port behind distinct pod IPs.

use std::fs::{self, File};
use std::net::SocketAddrV4;
use std::path::{Component, Path, PathBuf};
use std::process::Child;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use ipnet::Ipv4Net;
use parking_lot::Mutex;

use super::bundle::{self, BundleKind, BundleSpec};
use super::shell::{kill_tree, search_path, shell_command};
use super::PipelineError;
use crate::epc::IpPool;
use crate::fabric::DEFAULT_READINESS_PATH;

pub const DEFAULT_INSTANCE_NET: &str = "127.45.1.0/24";

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    /// Working directories for instances are created under here.
    pub instance_root: PathBuf,
    pub address_pool: Ipv4Net,
    /// Prepended to `PATH` for `exec` instances.
    pub extra_path: Vec<PathBuf>,
}

impl RuntimeConfig {
    pub fn new(instance_root: impl Into<PathBuf>) -> Self {
        RuntimeConfig {
            instance_root: instance_root.into(),
            address_pool: DEFAULT_INSTANCE_NET.parse().expect("valid default network"),
            extra_path: Vec::new(),
        }
    }
}

pub struct Runtime {
    cfg: RuntimeConfig,
    pool: Arc<Mutex<IpPool>>,
    seq: AtomicU64,
}

enum Handle {
    Process(Child),
    Static(StaticHost),
}

/// A running app instance. Dropping it stops the instance and returns its
/// address to the pool.
pub struct Instance {
    pub address: SocketAddrV4,
    pub dir: PathBuf,
    handle: Option<Handle>,
    pool: Arc<Mutex<IpPool>>,
}

impl std::fmt::Debug for Instance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Instance")
            .field("address", &self.address)
            .field("dir", &self.dir)
            .finish()
    }
}

impl Instance {
    /// `Some(reason)` if the instance is no longer running.
    pub fn exit_reason(&mut self) -> Option<String> {
        match self.handle.as_mut()? {
            Handle::Process(child) => match child.try_wait() {
                Ok(Some(status)) => Some(format!("instance exited with {status}")),
                Ok(None) => None,
                Err(e) => Some(format!("cannot poll instance: {e}")),
            },
            Handle::Static(_) => None,
        }
    }

    /// Log file of an `exec` instance.
    pub fn log_path(&self) -> PathBuf {
        self.dir.join("instance.log")
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        match self.handle.take() {
            Some(Handle::Process(mut child)) => kill_tree(&mut child),
            Some(Handle::Static(host)) => drop(host),
            None => return,
        }
        self.pool.lock().release(*self.address.ip());
    }
}

impl Drop for Instance {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Runtime {
    pub fn new(cfg: RuntimeConfig) -> Result<Runtime, PipelineError> {
        let pool = IpPool::new(cfg.address_pool).ok_or_else(|| {
            PipelineError::ProvisionFailed(format!("address pool {} too small", cfg.address_pool))
        })?;
        fs::create_dir_all(&cfg.instance_root)?;
        Ok(Runtime {
            cfg,
            pool: Arc::new(Mutex::new(pool)),
            seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    /// Unpacks a bundle into a fresh directory and starts one instance.
    /// The instance is not yet known to be ready.
    pub fn start(&self, payload: &[u8]) -> Result<Instance, PipelineError> {
        let ip = self.pool.lock().allocate().ok_or_else(|| {
            PipelineError::ProvisionFailed("instance address pool exhausted".into())
        })?;
        let n = self.seq.fetch_add(1, Ordering::Relaxed);
        let dir = self.cfg.instance_root.join(format!("i{n:06}-{ip}"));
        // From here on the Instance owns the address, even on error paths.
        let mut inst = Instance {
            address: SocketAddrV4::new(ip, 0),
            dir: dir.clone(),
            handle: None,
            pool: self.pool.clone(),
        };
        let result = (|| {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            let spec = bundle::unpack(payload, &dir)?;
            inst.address.set_port(spec.port);
            let handle = self.launch(&spec, &dir, inst.address)?;
            inst.handle = Some(handle);
            Ok(())
        })();
        if let Err(e) = result {
            // no handle yet, so dropping `inst` will not release it again
            self.pool.lock().release(ip);
            return Err(e);
        }
        Ok(inst)
    }

    fn launch(
        &self,
        spec: &BundleSpec,
        dir: &Path,
        addr: SocketAddrV4,
    ) -> Result<Handle, PipelineError> {
        match spec.kind {
            BundleKind::Static => Ok(Handle::Static(StaticHost::serve(addr, dir.to_path_buf())?)),
            BundleKind::Exec => {
                let command = spec.command.as_deref().ok_or_else(|| {
                    PipelineError::BadBundle("exec bundle without a command".into())
                })?;
                let log = File::create(dir.join("instance.log"))?;
                let mut cmd = shell_command(command, dir);
                cmd.stdout(log.try_clone()?)
                    .stderr(log)
                    .env("HOST", addr.ip().to_string())
                    .env("PORT", addr.port().to_string());
                if let Some(path) = search_path(&self.cfg.extra_path)? {
                    cmd.env("PATH", path);
                }
                Ok(Handle::Process(cmd.spawn()?))
            }
        }
    }
}

/// Serves a directory over HTTP/1.1, plus the readiness path.
pub struct StaticHost {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") | Some("htm") => "text/html; charset=utf-8",
        Some("css") => "text/css",
        Some("js") => "application/javascript",
        Some("json") => "application/json",
        Some("txt") => "text/plain; charset=utf-8",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn resolve_path(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("/");
    let rel = path.trim_start_matches('/');
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if full.is_dir() {
        full.push("index.html");
    }
    full.is_file().then_some(full)
}

impl StaticHost {
    const WORKERS: usize = 4;

    pub fn serve(addr: SocketAddrV4, root: PathBuf) -> Result<StaticHost, PipelineError> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| PipelineError::ProvisionFailed(format!("cannot listen on {addr}: {e}")))?;
        let server = Arc::new(server);
        let workers = (0..Self::WORKERS)
            .map(|_| {
                let server = server.clone();
                let root = root.clone();
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        let resp = if req.url() == DEFAULT_READINESS_PATH {
                            tiny_http::Response::from_data(b"ok".to_vec())
                        } else {
                            match resolve_path(&root, req.url())
                                .and_then(|p| Some((fs::read(&p).ok()?, p)))
                            {
                                Some((body, p)) => tiny_http::Response::from_data(body)
                                    .with_header(
                                        tiny_http::Header::from_bytes(
                                            "Content-Type",
                                            content_type(&p),
                                        )
                                        .expect("static header is valid"),
                                    ),
                                None => tiny_http::Response::from_data(b"not found".to_vec())
                                    .with_status_code(404),
                            }
                        };
                        let _ = req.respond(resp);
                    }
                })
            })
            .collect();
        Ok(StaticHost { server, workers })
    }

    pub fn address(&self) -> Option<SocketAddrV4> {
        match self.server.server_addr() {
            tiny_http::ListenAddr::IP(std::net::SocketAddr::V4(a)) => Some(a),
            _ => None,
        }
    }
}

impl Drop for StaticHost {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
