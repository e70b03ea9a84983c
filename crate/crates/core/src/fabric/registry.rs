use std::collections::BTreeMap;
use std::net::SocketAddrV4;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::topology::{Node, Topology};

/// DNS zone served by the fabric resolver.
pub const ZONE: &str = "edge.local";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("malformed service name {0:?}")]
    MalformedName(String),
    #[error("endpoint {address} already registered for {name}")]
    DuplicateEndpoint { name: String, address: SocketAddrV4 },
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("service {0} has no ready endpoints")]
    NoReadyEndpoints(String),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(SocketAddrV4),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub address: SocketAddrV4,
    pub ready: bool,
    pub version: String,
}

/// Snapshot of one service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub name: String,
    pub instances: Vec<Endpoint>,
    pub rr_cursor: usize,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

impl ServiceRecord {
    pub fn ready_count(&self) -> usize {
        self.instances.iter().filter(|e| e.ready).count()
    }

    /// `name ready_count/total_count version[,version...]`
    pub fn dump_line(&self) -> String {
        let mut versions: Vec<&str> = self.instances.iter().map(|e| e.version.as_str()).collect();
        versions.sort_unstable();
        versions.dedup();
        let versions = if versions.is_empty() {
            "-".to_string()
        } else {
            versions.join(",")
        };
        format!(
            "{} {}/{} {}",
            self.name,
            self.ready_count(),
            self.instances.len(),
            versions
        )
    }
}

/// Result of a successful resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInfo {
    pub fqdn: String,
    pub ready: Vec<Endpoint>,
    pub total: usize,
}

pub fn validate_name(name: &str) -> Result<(), FabricError> {
    let ok = !name.is_empty()
        && name.len() <= 63
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !name.starts_with('-')
        && !name.ends_with('-');
    if ok {
        Ok(())
    } else {
        Err(FabricError::MalformedName(name.to_string()))
    }
}

pub fn fqdn(name: &str) -> String {
    format!("{name}.{ZONE}")
}

/// Accepts either a bare label or a name inside the fabric zone.
pub fn strip_zone(name: &str) -> &str {
    let name = name.strip_suffix('.').unwrap_or(name);
    name.strip_suffix(ZONE)
        .and_then(|n| n.strip_suffix('.'))
        .unwrap_or(name)
}

#[derive(Debug)]
struct Service {
    instances: Vec<Endpoint>,
    cursor: AtomicUsize,
    created_at: u64,
}

impl Service {
    fn record(&self, name: &str) -> ServiceRecord {
        let ready = self.instances.iter().filter(|e| e.ready).count();
        ServiceRecord {
            name: name.to_string(),
            instances: self.instances.clone(),
            rr_cursor: self.cursor.load(Ordering::Relaxed) % ready.max(1),
            created_at: self.created_at,
        }
    }
}

/// The registry. Mutations take the write lock; `resolve` and
/// `pick_endpoint` only read, and the round-robin cursor is atomic so
/// concurrent picks stay fair.
#[derive(Debug, Default)]
pub struct Fabric {
    services: RwLock<BTreeMap<String, Service>>,
    topology: RwLock<Topology>,
}

impl Fabric {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_instance(
        &self,
        name: &str,
        address: SocketAddrV4,
        version: &str,
    ) -> Result<ServiceRecord, FabricError> {
        validate_name(name)?;
        let mut services = self.services.write();
        let svc = services.entry(name.to_string()).or_insert_with(|| Service {
            instances: Vec::new(),
            cursor: AtomicUsize::new(0),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        });
        if svc.instances.iter().any(|e| e.address == address) {
            return Err(FabricError::DuplicateEndpoint {
                name: name.to_string(),
                address,
            });
        }
        svc.instances.push(Endpoint {
            address,
            ready: false,
            version: version.to_string(),
        });
        let host = Node::Host(*address.ip());
        let mut topo = self.topology.write();
        if !topo.contains(host) {
            topo.link(Node::EpcEgress, host);
        }
        Ok(svc.record(name))
    }

    pub fn set_ready(
        &self,
        name: &str,
        address: SocketAddrV4,
        ready: bool,
    ) -> Result<(), FabricError> {
        let mut services = self.services.write();
        let svc = services
            .get_mut(strip_zone(name))
            .ok_or_else(|| FabricError::UnknownService(name.to_string()))?;
        let ep = svc
            .instances
            .iter_mut()
            .find(|e| e.address == address)
            .ok_or(FabricError::UnknownEndpoint(address))?;
        ep.ready = ready;
        Ok(())
    }

    /// Removes an endpoint; a service left without instances disappears.
    pub fn deregister_instance(
        &self,
        name: &str,
        address: SocketAddrV4,
    ) -> Result<(), FabricError> {
        let mut services = self.services.write();
        let key = strip_zone(name);
        let svc = services
            .get_mut(key)
            .ok_or_else(|| FabricError::UnknownService(name.to_string()))?;
        let before = svc.instances.len();
        svc.instances.retain(|e| e.address != address);
        if svc.instances.len() == before {
            return Err(FabricError::UnknownEndpoint(address));
        }
        if svc.instances.is_empty() {
            services.remove(key);
        }
        Ok(())
    }

    pub fn record(&self, name: &str) -> Option<ServiceRecord> {
        let key = strip_zone(name);
        self.services.read().get(key).map(|s| s.record(key))
    }

    pub fn records(&self) -> Vec<ServiceRecord> {
        self.services
            .read()
            .iter()
            .map(|(name, s)| s.record(name))
            .collect()
    }

    /// Registry dump: one `name ready/total version` line per service.
    pub fn dump(&self) -> String {
        self.records()
            .iter()
            .map(|r| r.dump_line() + "\n")
            .collect()
    }

    pub fn resolve(&self, name: &str) -> Result<ServiceInfo, FabricError> {
        let key = strip_zone(name);
        let services = self.services.read();
        let svc = services
            .get(key)
            .ok_or_else(|| FabricError::UnknownService(key.to_string()))?;
        let ready: Vec<Endpoint> = svc.instances.iter().filter(|e| e.ready).cloned().collect();
        if ready.is_empty() {
            return Err(FabricError::NoReadyEndpoints(key.to_string()));
        }
        Ok(ServiceInfo {
            fqdn: fqdn(key),
            ready,
            total: svc.instances.len(),
        })
    }

    /// Round-robin over the currently ready endpoints.
    pub fn pick_endpoint(&self, name: &str) -> Result<Endpoint, FabricError> {
        let key = strip_zone(name);
        let services = self.services.read();
        let svc = services
            .get(key)
            .ok_or_else(|| FabricError::UnknownService(key.to_string()))?;
        let ready: Vec<&Endpoint> = svc.instances.iter().filter(|e| e.ready).collect();
        if ready.is_empty() {
            return Err(FabricError::NoReadyEndpoints(key.to_string()));
        }
        let turn = svc.cursor.fetch_add(1, Ordering::Relaxed);
        Ok(ready[turn % ready.len()].clone())
    }

    /// Fabric links between the EPC egress and a registered endpoint.
    pub fn hop_count(&self, to: SocketAddrV4) -> Result<u32, FabricError> {
        let registered = self
            .services
            .read()
            .values()
            .any(|s| s.instances.iter().any(|e| e.address == to));
        if !registered {
            return Err(FabricError::UnknownEndpoint(to));
        }
        self.topology
            .read()
            .hops(Node::EpcEgress, Node::Host(*to.ip()))
            .ok_or(FabricError::UnknownEndpoint(to))
    }

    /// Rewires the topology, e.g. to place a host behind a router.
    pub fn with_topology<R>(&self, f: impl FnOnce(&mut Topology) -> R) -> R {
        f(&mut self.topology.write())
    }

    pub fn clear(&self) {
        self.services.write().clear();
        *self.topology.write() = Topology::new();
    }
}
