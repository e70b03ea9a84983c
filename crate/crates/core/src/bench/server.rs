//! The benchmark target: an HTTP/1.1 server for the blob corpus.

use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Response, StatusCode};

use super::corpus::BlobCorpus;
use super::BenchError;
use crate::fabric::DEFAULT_READINESS_PATH;

const WORKERS: usize = 8;

/// Streams one corpus body without copying it.
struct BodyReader {
    corpus: Arc<BlobCorpus>,
    path: &'static str,
    pos: usize,
}

impl Read for BodyReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let body = self.corpus.body(self.path).unwrap_or(&[]);
        let n = buf.len().min(body.len() - self.pos);
        buf[..n].copy_from_slice(&body[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

pub struct BlobServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

/// Binds `addr` and serves `/empty`, `/blob1m`, `/blob10m` and `/healthz`.
pub fn serve_blobs(corpus: Arc<BlobCorpus>, addr: SocketAddr) -> Result<BlobServer, BenchError> {
    let listener = TcpListener::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => BenchError::PortInUse(addr),
        _ => BenchError::Io(e),
    })?;
    BlobServer::from_listener(listener, corpus)
}

fn header(k: &str, v: &str) -> Header {
    Header::from_bytes(k, v).expect("static header is valid")
}

fn respond(corpus: &Arc<BlobCorpus>, req: tiny_http::Request) {
    let url = req.url().split('?').next().unwrap_or("").to_string();
    let result = match url.as_str() {
        DEFAULT_READINESS_PATH => req.respond(Response::from_string("ok")),
        path => match ["/empty", "/blob1m", "/blob10m"]
            .into_iter()
            .find(|p| *p == path)
        {
            Some(route) => {
                let len = corpus.body(route).map_or(0, <[u8]>::len);
                let content_type = if route == "/empty" {
                    "text/html"
                } else {
                    "application/octet-stream"
                };
                let body = BodyReader {
                    corpus: corpus.clone(),
                    path: route,
                    pos: 0,
                };
                req.respond(
                    Response::new(
                        StatusCode(200),
                        vec![header("Content-Type", content_type)],
                        body,
                        Some(len),
                        None,
                    )
                    // always a fixed Content-Length, never chunked
                    .with_chunked_threshold(usize::MAX),
                )
            }
            None => req.respond(Response::from_string("not found").with_status_code(404)),
        },
    };
    if let Err(e) = result {
        log::debug!("blob server response failed: {e}");
    }
}

impl BlobServer {
    pub fn from_listener(
        listener: TcpListener,
        corpus: Arc<BlobCorpus>,
    ) -> Result<BlobServer, BenchError> {
        let addr = listener.local_addr()?;
        let server =
            Arc::new(tiny_http::Server::from_listener(listener, None).map_err(io::Error::other)?);
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, corpus) = (server.clone(), corpus.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        respond(&corpus, req);
                    }
                })
            })
            .collect();
        Ok(BlobServer {
            server,
            addr,
            workers,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serves until the process exits.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for BlobServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
