//! The long-running core process: EPC signalling and GTP-U user plane, the
//! fabric's DNS responder, the deploy pipeline's webhook and an admin API.

use std::fs;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use edgestack::epc::{
    load_subscriber_file, recv_message, send_message, Core, Signal, SubscriberFile,
};
use edgestack::fabric::{DnsResponder, Fabric};
use edgestack::pipeline::{Pipeline, PipelineConfig, WebhookServer};
use edgestack::userplane::UserPlane;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use tiny_http::{Method, Response};

use crate::config::StackConfig;
use crate::error::{CliError, Result};
use crate::state::{self, CoreState, SUBSCRIBERS_FILE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusReply {
    pub pid: u32,
    pub sessions: usize,
    pub session_dump: String,
    pub services: usize,
    pub service_dump: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscriberRequest {
    pub subscriber_id: String,
}

fn in_use(addr: SocketAddr) -> impl Fn(io::Error) -> CliError {
    move |e| match e.kind() {
        io::ErrorKind::AddrInUse => CliError::PortInUse(addr),
        _ => CliError::Io(e),
    }
}

pub fn bind_tcp(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(in_use(addr))
}

pub fn bind_udp(addr: SocketAddr) -> Result<UdpSocket> {
    UdpSocket::bind(addr).map_err(in_use(addr))
}

/// Fails with `PortInUse` if any of the configured ports is taken.
pub fn check_ports_free(cfg: &StackConfig) -> Result<()> {
    let p = cfg.ports;
    for port in [p.control, p.admin, p.webhook] {
        bind_tcp(cfg.addr(port))?;
    }
    for port in [p.gtpu, p.dns] {
        bind_udp(cfg.addr(port))?;
    }
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn save_subscribers(dir: &Path, core: &Core) -> io::Result<()> {
    let file = SubscriberFile {
        subscribers: core.subscribers(),
    };
    fs::write(
        dir.join(SUBSCRIBERS_FILE),
        toml::to_string(&file).map_err(io::Error::other)?,
    )
}

/// Runs the core in the foreground until an admin shutdown request.
pub fn serve(cfg: &StackConfig) -> Result<()> {
    fs::create_dir_all(&cfg.state_dir)?;
    let p = cfg.ports;
    let control = bind_tcp(cfg.addr(p.control))?;
    let admin = bind_tcp(cfg.addr(p.admin))?;
    let webhook = bind_tcp(cfg.addr(p.webhook))?;
    let gtpu = bind_udp(cfg.addr(p.gtpu))?;
    let dns = bind_udp(cfg.addr(p.dns))?;

    let core = Arc::new(
        Core::new(cfg.ip_pool)
            .ok_or_else(|| CliError::Usage(format!("ip pool {} is too small", cfg.ip_pool)))?,
    );
    let subs_path = cfg.state_dir.join(SUBSCRIBERS_FILE);
    if subs_path.exists() {
        for sub in load_subscriber_file(&subs_path)?.subscribers {
            core.import_subscriber(sub)?;
        }
    }
    let fabric = Arc::new(Fabric::new());
    let mut pcfg = PipelineConfig::new(cfg.state_dir.join("pipeline"));
    pcfg.timeouts = cfg.timeouts;
    pcfg.instance_net = cfg.instance_net;
    if let Some(dir) = std::env::current_exe()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
    {
        pcfg.extra_path.push(dir);
    }
    let pipeline = Pipeline::new(pcfg, fabric.clone())?;

    let userplane = UserPlane::from_socket(gtpu, core.clone(), fabric.clone())?;
    let dns = DnsResponder::from_socket(dns, fabric.clone())?;
    let webhook = WebhookServer::from_listener(webhook, pipeline.clone())?;
    let stop = Arc::new(AtomicBool::new(false));
    let signalling = spawn_signalling(control, core.clone(), stop.clone())?;
    let admin = tiny_http::Server::from_listener(admin, None).map_err(io::Error::other)?;

    state::save(
        &cfg.state_dir,
        &CoreState {
            pid: std::process::id(),
            bind: cfg.bind,
            ports: p,
            started_at_ms: now_ms(),
        },
    )?;
    info!("core up on {} (pid {})", cfg.bind, std::process::id());

    for mut req in admin.incoming_requests() {
        let url = req.url().to_string();
        let method = req.method().clone();
        let mut body = String::new();
        let _ = req.as_reader().read_to_string(&mut body);
        let (status, reply) = match (method, url.as_str()) {
            (Method::Get, "/status") => {
                let sessions = core.sessions();
                let records = fabric.records();
                (
                    200,
                    serde_json::to_value(StatusReply {
                        pid: std::process::id(),
                        sessions: sessions.len(),
                        session_dump: core.dump(),
                        services: records.len(),
                        service_dump: fabric.dump(),
                    })
                    .expect("serializable"),
                )
            }
            (Method::Get, "/subscribers") => (200, serde_json::json!(core.subscribers())),
            (Method::Post, "/subscribers") => {
                match serde_json::from_str::<SubscriberRequest>(&body) {
                    Err(e) => (
                        400,
                        serde_json::json!({ "error": format!("bad request body: {e}") }),
                    ),
                    Ok(r) => match core.register_subscriber(&r.subscriber_id) {
                        Ok(sub) => match save_subscribers(&cfg.state_dir, &core) {
                            Ok(()) => (200, serde_json::json!(sub)),
                            Err(e) => (500, serde_json::json!({ "error": e.to_string() })),
                        },
                        Err(e) => (400, serde_json::json!({ "error": e.to_string() })),
                    },
                }
            }
            (Method::Post, "/shutdown") => {
                let _ = req.respond(Response::from_string("{}").with_status_code(200));
                break;
            }
            _ => (
                404,
                serde_json::json!({ "error": format!("no route for {url}") }),
            ),
        };
        let _ = req.respond(Response::from_string(reply.to_string()).with_status_code(status));
    }

    info!("core shutting down");
    pipeline.shutdown();
    core.detach_all();
    stop.store(true, Ordering::Relaxed);
    // unblock the signalling accept loop
    let _ = TcpStream::connect(cfg.addr(p.control));
    let _ = signalling.join();
    drop((webhook, dns, userplane, admin));
    // last: a client waiting on the state file may rebind the ports at once
    state::remove(&cfg.state_dir);
    Ok(())
}

/// UE signalling: length-prefixed JSON [`Signal`] messages, one reply per
/// request, several requests per connection.
fn spawn_signalling(
    listener: TcpListener,
    core: Arc<Core>,
    stop: Arc<AtomicBool>,
) -> io::Result<thread::JoinHandle<()>> {
    thread::Builder::new()
        .name("signalling".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let Ok(mut conn) = conn else { continue };
                let core = core.clone();
                thread::spawn(move || loop {
                    match recv_message::<_, Signal>(&mut conn) {
                        Ok(Some(msg)) => {
                            if send_message(&mut conn, &core.handle_signal(msg)).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            warn!("signalling connection dropped: {e}");
                            break;
                        }
                    }
                });
            }
        })
}
