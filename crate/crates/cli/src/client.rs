//! Talking to a running core: admin and webhook over HTTP, UE signalling
//! over the framed TCP channel.

use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::time::Duration;

use edgestack::epc::{recv_message, send_message, Signal};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::state::{self, CoreState};

const TIMEOUT: Duration = Duration::from_secs(10);

pub struct Client {
    pub state: CoreState,
    agent: ureq::Agent,
    state_dir: String,
}

impl Client {
    /// Finds the core recorded under `state_dir`; `NotRunning` if there is
    /// none.
    pub fn connect(state_dir: &Path) -> Result<Client> {
        let dir = state_dir.display().to_string();
        let state = state::load(state_dir).ok_or_else(|| CliError::NotRunning(dir.clone()))?;
        Ok(Client {
            state,
            agent: ureq::AgentBuilder::new().timeout(TIMEOUT).build(),
            state_dir: dir,
        })
    }

    fn addr(&self, port: u16) -> SocketAddr {
        SocketAddr::from((self.state.bind, port))
    }

    fn url(&self, port: u16, path: &str) -> String {
        format!("http://{}{path}", self.addr(port))
    }

    fn map_err(&self, e: ureq::Error) -> CliError {
        match e {
            ureq::Error::Status(_, resp) => {
                let msg = resp
                    .into_json::<serde_json::Value>()
                    .ok()
                    .and_then(|v| v.get("error").and_then(|m| m.as_str()).map(str::to_string))
                    .unwrap_or_else(|| "request failed".to_string());
                CliError::Remote(msg)
            }
            ureq::Error::Transport(_) => CliError::NotRunning(self.state_dir.clone()),
        }
    }

    fn get<T: DeserializeOwned>(&self, port: u16, path: &str) -> Result<T> {
        let resp = self
            .agent
            .get(&self.url(port, path))
            .call()
            .map_err(|e| self.map_err(e))?;
        Ok(resp.into_json()?)
    }

    fn post<T: DeserializeOwned>(&self, port: u16, path: &str, body: &impl Serialize) -> Result<T> {
        let resp = self
            .agent
            .post(&self.url(port, path))
            .send_json(body)
            .map_err(|e| self.map_err(e))?;
        Ok(resp.into_json()?)
    }

    pub fn admin_get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.get(self.state.ports.admin, path)
    }

    pub fn admin_post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T> {
        self.post(self.state.ports.admin, path, body)
    }

    pub fn webhook_get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.get(self.state.ports.webhook, path)
    }

    /// `Ok(None)` when the webhook answers 404.
    pub fn webhook_get_opt<T: DeserializeOwned>(&self, path: &str) -> Result<Option<T>> {
        match self
            .agent
            .get(&self.url(self.state.ports.webhook, path))
            .call()
        {
            Ok(resp) => Ok(Some(resp.into_json()?)),
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(e) => Err(self.map_err(e)),
        }
    }

    pub fn webhook_post<T: DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T> {
        self.post(self.state.ports.webhook, path, body)
    }

    /// One signalling exchange with the EPC.
    pub fn signal(&self, msg: &Signal) -> Result<Signal> {
        let addr = self.addr(self.state.ports.control);
        let mut conn = TcpStream::connect_timeout(&addr, TIMEOUT)
            .map_err(|_| CliError::NotRunning(self.state_dir.clone()))?;
        conn.set_read_timeout(Some(TIMEOUT))?;
        send_message(&mut conn, msg)?;
        recv_message(&mut conn)?
            .ok_or_else(|| CliError::Remote("signalling channel closed without a reply".into()))
    }

    pub fn is_alive(&self) -> bool {
        self.admin_get::<serde_json::Value>("/status").is_ok()
    }
}
