//! HTTP front door of the pipeline.
//!
//! | method | path           | body / result                                   |
//! |--------|----------------|-------------------------------------------------|
//! | POST   | `/hooks/push`  | `{repo_id, revision, snapshot_path}` → `{run_id}` |
//! | POST   | `/repos`       | `{repo_id}` registers a repo                     |
//! | GET    | `/runs`        | every run summary                                |
//! | GET    | `/runs/<id>`   | one run summary                                  |
//! | GET    | `/apps/<name>` | the app's RUNNING deployment                     |
//! | GET    | `/services`    | registry dump, one line per service              |

use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response};

use super::{Pipeline, PipelineError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushRequest {
    pub repo_id: String,
    #[serde(default)]
    pub revision: String,
    pub snapshot_path: PathBuf,
}

#[derive(Deserialize)]
struct RepoRequest {
    repo_id: String,
}

const MAX_BODY: u64 = 1 << 20;

pub struct WebhookServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

fn json<T: Serialize>(status: u16, value: &T) -> Response<io::Cursor<Vec<u8>>> {
    let body = serde_json::to_vec(value).expect("response types serialize");
    Response::from_data(body)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("valid header"))
}

fn error(status: u16, msg: impl std::fmt::Display) -> Response<io::Cursor<Vec<u8>>> {
    json(status, &serde_json::json!({ "error": msg.to_string() }))
}

fn status_for(e: &PipelineError) -> u16 {
    match e {
        PipelineError::UnknownRepo(_) | PipelineError::NotRunning(_) => 404,
        PipelineError::UnresolvableRevision { .. } | PipelineError::Fabric(_) => 422,
        _ => 500,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(
    req: &mut Request,
) -> Result<T, Response<io::Cursor<Vec<u8>>>> {
    let mut body = Vec::new();
    req.as_reader()
        .take(MAX_BODY)
        .read_to_end(&mut body)
        .map_err(|e| error(400, e))?;
    serde_json::from_slice(&body).map_err(|e| error(400, format!("bad request body: {e}")))
}

fn handle(pipeline: &Pipeline, req: &mut Request) -> Response<io::Cursor<Vec<u8>>> {
    let url = req.url().split('?').next().unwrap_or("").to_string();
    let segments: Vec<&str> = url.trim_matches('/').split('/').collect();
    match (req.method(), segments.as_slice()) {
        (Method::Post, ["hooks", "push"]) => {
            let push: PushRequest = match read_json(req) {
                Ok(p) => p,
                Err(resp) => return resp,
            };
            match pipeline.on_push(&push.repo_id, &push.revision, &push.snapshot_path) {
                Ok(run_id) => json(202, &serde_json::json!({ "run_id": run_id })),
                Err(e) => error(status_for(&e), e),
            }
        }
        (Method::Post, ["repos"]) => {
            let repo: RepoRequest = match read_json(req) {
                Ok(r) => r,
                Err(resp) => return resp,
            };
            match pipeline.register_repo(&repo.repo_id) {
                Ok(()) => json(201, &serde_json::json!({ "repo_id": repo.repo_id })),
                Err(e) => error(status_for(&e), e),
            }
        }
        (Method::Get, ["runs"]) => json(200, &pipeline.runs()),
        (Method::Get, ["runs", id]) => match id.parse().ok().and_then(|id| pipeline.run(id)) {
            Some(run) => json(200, &run),
            None => error(404, format!("no run {id}")),
        },
        (Method::Get, ["apps", name]) => match pipeline.deployment(name) {
            Some(d) => json(200, &d),
            None => error(404, PipelineError::NotRunning(name.to_string())),
        },
        (Method::Get, ["services"]) => Response::from_data(pipeline.fabric().dump().into_bytes()),
        _ => error(404, format!("no route for {} {url}", req.method())),
    }
}

impl WebhookServer {
    pub fn start(addr: &str, pipeline: Pipeline) -> io::Result<WebhookServer> {
        WebhookServer::from_listener(TcpListener::bind(addr)?, pipeline)
    }

    pub fn from_listener(listener: TcpListener, pipeline: Pipeline) -> io::Result<WebhookServer> {
        let addr = listener.local_addr()?;
        let server = tiny_http::Server::from_listener(listener, None).map_err(io::Error::other)?;
        let server = Arc::new(server);
        let srv = server.clone();
        let worker = std::thread::Builder::new()
            .name("pipeline-webhook".into())
            .spawn(move || {
                while let Ok(mut req) = srv.recv() {
                    let resp = handle(&pipeline, &mut req);
                    let _ = req.respond(resp);
                }
            })?;
        Ok(WebhookServer {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for WebhookServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
