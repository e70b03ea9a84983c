//! Collapsed EPC control plane.
//!
//! Owns the subscriber registry, UE address pool, TEID allocation and the
//! session table the user-plane demux reads. All mutations go through the
//! table's write lock, so there is exactly one writer at a time; lookups take
//! the read lock and may run concurrently.

mod channel;
mod pool;
mod session;
mod subscribers;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::time::{SystemTime, UNIX_EPOCH};

use ipnet::Ipv4Net;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gtp::{self, EchoKind, GtpError, MessageType, TunnelEndpointId};

pub use channel::{read_frame, recv_message, send_message, write_frame, Signal, MAX_FRAME_LEN};
pub use pool::IpPool;
pub use session::{Bearer, Session, SessionState};
pub use subscribers::{load_subscriber_file, parse_subscriber_file, SubscriberFile};

pub const DEFAULT_POOL: &str = "10.45.0.0/24";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("malformed subscriber id {0:?} (expected 5-15 decimal digits)")]
    MalformedId(String),
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(String),
    #[error("subscriber {0} is disabled")]
    SubscriberDisabled(String),
    #[error("subscriber {0} already has an active session")]
    AlreadyAttached(String),
    #[error("UE address pool exhausted")]
    PoolExhausted,
    #[error("TEID space exhausted")]
    TeidExhausted,
    #[error("subscriber {0} is not attached")]
    NotAttached(String),
    #[error("no session for uplink TEID {0}")]
    UnknownTeid(TunnelEndpointId),
    #[error("no attached session for UE address {0}")]
    UnknownUeIp(Ipv4Addr),
    #[error("GTP-U decode failed: {0}")]
    Decode(#[from] GtpError),
    /// The datagram was an Echo message and is not forwarded. For an Echo
    /// Request `response` holds the Echo Response to send back.
    #[error("echo message handled on the path")]
    EchoShortCircuit { response: Option<Vec<u8>> },
    #[error("illegal session transition {from} -> {to}")]
    IllegalTransition {
        from: SessionState,
        to: SessionState,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscriber {
    pub subscriber_id: String,
    pub enabled: bool,
}

pub fn validate_subscriber_id(id: &str) -> Result<(), CoreError> {
    if (5..=15).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(CoreError::MalformedId(id.to_string()))
    }
}

/// Summary returned by [`Core::detach`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Released {
    pub subscriber_id: String,
    pub bearer: Bearer,
}

#[derive(Debug)]
struct Table {
    subscribers: BTreeMap<String, Subscriber>,
    /// Non-DETACHED sessions keyed by subscriber.
    sessions: BTreeMap<String, Session>,
    by_ue_ip: HashMap<Ipv4Addr, String>,
    by_uplink: HashMap<TunnelEndpointId, String>,
    pool: IpPool,
    next_teid: u64,
}

impl Table {
    fn alloc_teid_pair(&mut self) -> Result<(TunnelEndpointId, TunnelEndpointId), CoreError> {
        let first = self.next_teid;
        if first + 1 > u64::from(u32::MAX) {
            return Err(CoreError::TeidExhausted);
        }
        self.next_teid += 2;
        Ok((
            TunnelEndpointId(first as u32),
            TunnelEndpointId(first as u32 + 1),
        ))
    }
}

fn step(session: &mut Session, to: SessionState) -> Result<(), CoreError> {
    if !session.state.can_transition_to(to) {
        return Err(CoreError::IllegalTransition {
            from: session.state,
            to,
        });
    }
    session.state = to;
    Ok(())
}

fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug)]
pub struct Core {
    table: RwLock<Table>,
}

impl Default for Core {
    fn default() -> Self {
        Core::new(DEFAULT_POOL.parse().expect("default pool parses"))
            .expect("default pool is usable")
    }
}

impl Core {
    /// Returns `None` if the block is too small to hold any UE address.
    pub fn new(pool: Ipv4Net) -> Option<Core> {
        Some(Core {
            table: RwLock::new(Table {
                subscribers: BTreeMap::new(),
                sessions: BTreeMap::new(),
                by_ue_ip: HashMap::new(),
                by_uplink: HashMap::new(),
                pool: IpPool::new(pool)?,
                next_teid: 1,
            }),
        })
    }

    pub fn gateway(&self) -> Ipv4Addr {
        self.table.read().pool.gateway()
    }

    pub fn pool_in_use(&self) -> usize {
        self.table.read().pool.in_use()
    }

    pub fn register_subscriber(&self, subscriber_id: &str) -> Result<Subscriber, CoreError> {
        validate_subscriber_id(subscriber_id)?;
        let mut t = self.table.write();
        Ok(t.subscribers
            .entry(subscriber_id.to_string())
            .or_insert_with(|| Subscriber {
                subscriber_id: subscriber_id.to_string(),
                enabled: true,
            })
            .clone())
    }

    /// Inserts or overwrites a subscriber record (used when loading a
    /// subscriber file).
    pub fn import_subscriber(&self, sub: Subscriber) -> Result<(), CoreError> {
        validate_subscriber_id(&sub.subscriber_id)?;
        self.table
            .write()
            .subscribers
            .insert(sub.subscriber_id.clone(), sub);
        Ok(())
    }

    pub fn set_enabled(&self, subscriber_id: &str, enabled: bool) -> Result<(), CoreError> {
        let mut t = self.table.write();
        let sub = t
            .subscribers
            .get_mut(subscriber_id)
            .ok_or_else(|| CoreError::UnknownSubscriber(subscriber_id.to_string()))?;
        sub.enabled = enabled;
        Ok(())
    }

    pub fn subscribers(&self) -> Vec<Subscriber> {
        self.table.read().subscribers.values().cloned().collect()
    }

    pub fn attach(&self, subscriber_id: &str) -> Result<Session, CoreError> {
        let mut t = self.table.write();
        match t.subscribers.get(subscriber_id) {
            None => return Err(CoreError::UnknownSubscriber(subscriber_id.to_string())),
            Some(s) if !s.enabled => {
                return Err(CoreError::SubscriberDisabled(subscriber_id.to_string()))
            }
            Some(_) => {}
        }
        if t.sessions.contains_key(subscriber_id) {
            return Err(CoreError::AlreadyAttached(subscriber_id.to_string()));
        }

        let mut session = Session {
            subscriber_id: subscriber_id.to_string(),
            state: SessionState::Detached,
            bearer: None,
            attached_at: None,
        };
        step(&mut session, SessionState::Attaching)?;

        let ue_ip = t.pool.allocate().ok_or(CoreError::PoolExhausted)?;
        let (uplink_teid, downlink_teid) = match t.alloc_teid_pair() {
            Ok(pair) => pair,
            Err(e) => {
                t.pool.release(ue_ip);
                return Err(e);
            }
        };
        session.bearer = Some(Bearer {
            ue_ip,
            uplink_teid,
            downlink_teid,
        });
        session.attached_at = Some(unix_millis());
        step(&mut session, SessionState::Attached)?;

        t.by_ue_ip.insert(ue_ip, subscriber_id.to_string());
        t.by_uplink.insert(uplink_teid, subscriber_id.to_string());
        t.sessions
            .insert(subscriber_id.to_string(), session.clone());
        log::debug!("attached {subscriber_id} ue_ip={ue_ip} ul={uplink_teid} dl={downlink_teid}");
        Ok(session)
    }

    pub fn detach(&self, subscriber_id: &str) -> Result<Released, CoreError> {
        let mut t = self.table.write();
        let attached = t
            .sessions
            .get(subscriber_id)
            .is_some_and(|s| s.state == SessionState::Attached);
        if !attached {
            return Err(CoreError::NotAttached(subscriber_id.to_string()));
        }
        let mut session = t.sessions.remove(subscriber_id).expect("checked above");
        step(&mut session, SessionState::Detaching)?;
        let bearer = session
            .bearer
            .take()
            .expect("attached sessions carry a bearer");
        t.by_ue_ip.remove(&bearer.ue_ip);
        t.by_uplink.remove(&bearer.uplink_teid);
        t.pool.release(bearer.ue_ip);
        step(&mut session, SessionState::Detached)?;
        log::debug!("detached {subscriber_id}");
        Ok(Released {
            subscriber_id: subscriber_id.to_string(),
            bearer,
        })
    }

    /// Drops every session and returns all addresses to the pool. Retired
    /// TEIDs stay retired.
    pub fn detach_all(&self) -> usize {
        let ids: Vec<String> = self.table.read().sessions.keys().cloned().collect();
        ids.iter().filter(|id| self.detach(id).is_ok()).count()
    }

    pub fn session(&self, subscriber_id: &str) -> Option<Session> {
        self.table.read().sessions.get(subscriber_id).cloned()
    }

    pub fn session_by_ue_ip(&self, ue_ip: Ipv4Addr) -> Option<Session> {
        let t = self.table.read();
        t.by_ue_ip
            .get(&ue_ip)
            .and_then(|id| t.sessions.get(id))
            .cloned()
    }

    pub fn session_by_uplink_teid(&self, teid: TunnelEndpointId) -> Option<Session> {
        let t = self.table.read();
        t.by_uplink
            .get(&teid)
            .and_then(|id| t.sessions.get(id))
            .cloned()
    }

    pub fn sessions(&self) -> Vec<Session> {
        self.table.read().sessions.values().cloned().collect()
    }

    /// Session table dump, one `subscriber_id state ue_ip uplink_teid
    /// downlink_teid` line per session, ordered by subscriber id.
    pub fn dump(&self) -> String {
        self.sessions()
            .iter()
            .map(|s| s.dump_line() + "\n")
            .collect()
    }

    /// Uplink demultiplexing: decode, short-circuit Echo, then look up the
    /// session owning the uplink TEID.
    pub fn demux_uplink(&self, datagram: &[u8]) -> Result<(Session, Vec<u8>), CoreError> {
        let packet = gtp::decode(datagram)?;
        match packet.header.message_type {
            MessageType::EchoRequest => {
                let seq = packet.header.sequence().unwrap_or(0);
                Err(CoreError::EchoShortCircuit {
                    response: Some(gtp::make_echo(EchoKind::Response, seq)),
                })
            }
            MessageType::EchoResponse => Err(CoreError::EchoShortCircuit { response: None }),
            MessageType::GPdu => {
                let teid = packet.header.teid;
                let session = self
                    .session_by_uplink_teid(teid)
                    .filter(|s| s.state == SessionState::Attached)
                    .ok_or(CoreError::UnknownTeid(teid))?;
                Ok((session, packet.payload))
            }
        }
    }

    pub fn encap_downlink(
        &self,
        ue_ip: Ipv4Addr,
        inner_packet: &[u8],
    ) -> Result<Vec<u8>, CoreError> {
        let teid = self
            .session_by_ue_ip(ue_ip)
            .filter(|s| s.state == SessionState::Attached)
            .and_then(|s| s.downlink_teid())
            .ok_or(CoreError::UnknownUeIp(ue_ip))?;
        Ok(gtp::encode_gpdu(teid, inner_packet)?)
    }

    /// Applies one UE signalling message and returns the reply.
    pub fn handle_signal(&self, signal: Signal) -> Signal {
        let outcome = match signal {
            Signal::AttachRequest { subscriber_id } => self
                .attach(&subscriber_id)
                .map(|session| Signal::AttachAccept { session }),
            Signal::DetachRequest { subscriber_id } => self
                .detach(&subscriber_id)
                .map(|released| Signal::DetachAccept { released }),
            other => {
                return Signal::Reject {
                    cause: format!("unexpected message {other:?}"),
                }
            }
        };
        outcome.unwrap_or_else(|e| Signal::Reject {
            cause: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMSI: &str = "001010000000001";

    fn core_with(ids: &[&str]) -> Core {
        let core = Core::default();
        for id in ids {
            core.register_subscriber(id).unwrap();
        }
        core
    }

    fn imsi(n: usize) -> String {
        format!("00101{n:010}")
    }

    #[test]
    fn register_validates_and_is_idempotent() {
        let core = Core::default();
        let a = core.register_subscriber(IMSI).unwrap();
        assert!(a.enabled);
        let b = core.register_subscriber(IMSI).unwrap();
        assert_eq!(a, b);
        assert_eq!(core.subscribers().len(), 1);
        assert_eq!(
            core.register_subscriber("12ab"),
            Err(CoreError::MalformedId("12ab".into()))
        );
        assert!(core.register_subscriber("1234").is_err());
        assert!(core.register_subscriber("1234567890123456").is_err());
        assert!(core.register_subscriber("12345").is_ok());
    }

    #[test]
    fn first_attach_gets_dot_two() {
        let core = core_with(&[IMSI]);
        let s = core.attach(IMSI).unwrap();
        assert_eq!(s.state, SessionState::Attached);
        assert_eq!(s.ue_ip(), Some(Ipv4Addr::new(10, 45, 0, 2)));
        let b = s.bearer.unwrap();
        assert_ne!(b.uplink_teid, b.downlink_teid);
        assert_eq!(core.session_by_ue_ip(b.ue_ip).unwrap(), s);
        assert_eq!(core.session_by_uplink_teid(b.uplink_teid).unwrap(), s);
    }

    #[test]
    fn attach_preconditions() {
        let core = core_with(&[IMSI]);
        assert_eq!(
            core.attach("001019999999999"),
            Err(CoreError::UnknownSubscriber("001019999999999".into()))
        );
        core.attach(IMSI).unwrap();
        assert_eq!(
            core.attach(IMSI),
            Err(CoreError::AlreadyAttached(IMSI.into()))
        );
        core.detach(IMSI).unwrap();
        core.set_enabled(IMSI, false).unwrap();
        assert_eq!(
            core.attach(IMSI),
            Err(CoreError::SubscriberDisabled(IMSI.into()))
        );
    }

    #[test]
    fn pool_exhausts_at_254th_attach() {
        let ids: Vec<String> = (0..254).map(imsi).collect();
        let core = Core::default();
        for id in &ids {
            core.register_subscriber(id).unwrap();
        }
        for id in &ids[..253] {
            core.attach(id).unwrap();
        }
        let before = core.dump();
        assert_eq!(core.attach(&ids[253]), Err(CoreError::PoolExhausted));
        // failed attach leaves the table untouched
        assert_eq!(core.dump(), before);
        assert!(core.session(&ids[253]).is_none());
    }

    #[test]
    fn reattach_reuses_ip_with_fresh_teids() {
        let core = core_with(&[IMSI]);
        let first = core.attach(IMSI).unwrap().bearer.unwrap();
        let released = core.detach(IMSI).unwrap();
        assert_eq!(released.bearer, first);
        assert!(core.session(IMSI).is_none());
        let second = core.attach(IMSI).unwrap().bearer.unwrap();
        assert_eq!(second.ue_ip, first.ue_ip);
        assert!(second.uplink_teid > first.downlink_teid);
        assert!(second.downlink_teid > first.downlink_teid);
    }

    #[test]
    fn detach_requires_attached() {
        let core = core_with(&[IMSI]);
        assert_eq!(core.detach(IMSI), Err(CoreError::NotAttached(IMSI.into())));
    }

    #[test]
    fn thousand_cycles_never_exhaust() {
        let core = core_with(&[IMSI]);
        for _ in 0..1000 {
            core.attach(IMSI).unwrap();
            assert!(core.pool_in_use() <= 1);
            core.detach(IMSI).unwrap();
        }
        assert_eq!(core.pool_in_use(), 0);
    }

    #[test]
    fn demux_pairs_with_encap() {
        let core = core_with(&[IMSI]);
        let s = core.attach(IMSI).unwrap();
        let b = s.bearer.unwrap();
        let bytes = gtp::encode_gpdu(b.uplink_teid, b"inner").unwrap();
        let (found, inner) = core.demux_uplink(&bytes).unwrap();
        assert_eq!(found, s);
        assert_eq!(inner, b"inner");

        let unknown = gtp::encode_gpdu(TunnelEndpointId(999_999), b"x").unwrap();
        assert_eq!(
            core.demux_uplink(&unknown),
            Err(CoreError::UnknownTeid(TunnelEndpointId(999_999)))
        );
        // downlink TEID is not an uplink key
        let wrong_dir = gtp::encode_gpdu(b.downlink_teid, b"x").unwrap();
        assert!(matches!(
            core.demux_uplink(&wrong_dir),
            Err(CoreError::UnknownTeid(_))
        ));
    }

    #[test]
    fn stale_teid_after_detach() {
        let core = core_with(&[IMSI]);
        let b = core.attach(IMSI).unwrap().bearer.unwrap();
        core.detach(IMSI).unwrap();
        core.attach(IMSI).unwrap();
        let stale = gtp::encode_gpdu(b.uplink_teid, b"x").unwrap();
        assert_eq!(
            core.demux_uplink(&stale),
            Err(CoreError::UnknownTeid(b.uplink_teid))
        );
    }

    #[test]
    fn echo_request_is_answered() {
        let core = Core::default();
        for seq in [0u16, 1, 65535] {
            let err = core
                .demux_uplink(&gtp::make_echo(EchoKind::Request, seq))
                .unwrap_err();
            let CoreError::EchoShortCircuit {
                response: Some(resp),
            } = err
            else {
                panic!("expected echo response, got {err:?}");
            };
            let p = gtp::decode(&resp).unwrap();
            assert_eq!(p.header.message_type, MessageType::EchoResponse);
            assert_eq!(p.header.sequence(), Some(seq));
        }
    }

    #[test]
    fn echo_classification_ignores_teid() {
        let core = core_with(&[IMSI]);
        let b = core.attach(IMSI).unwrap().bearer.unwrap();
        for kind in [
            MessageType::EchoRequest,
            MessageType::EchoResponse,
            MessageType::GPdu,
        ] {
            for teid in [0u32, 1] {
                let mut bytes = match kind {
                    MessageType::EchoRequest => gtp::make_echo(EchoKind::Request, 5),
                    MessageType::EchoResponse => gtp::make_echo(EchoKind::Response, 5),
                    MessageType::GPdu => {
                        let mut v = gtp::encode_gpdu(TunnelEndpointId(1), b"p").unwrap();
                        v[4..8].copy_from_slice(&0u32.to_be_bytes());
                        v
                    }
                };
                bytes[4..8].copy_from_slice(&teid.to_be_bytes());
                let out = core.demux_uplink(&bytes);
                match (kind, teid) {
                    (MessageType::EchoRequest, _) => assert!(matches!(
                        out,
                        Err(CoreError::EchoShortCircuit { response: Some(_) })
                    )),
                    (MessageType::EchoResponse, _) => {
                        assert_eq!(out, Err(CoreError::EchoShortCircuit { response: None }))
                    }
                    (MessageType::GPdu, 0) => {
                        assert_eq!(out, Err(CoreError::Decode(GtpError::ZeroTeid)))
                    }
                    (MessageType::GPdu, _) => {
                        // TEID 1 is this session's uplink key
                        assert_eq!(b.uplink_teid, TunnelEndpointId(1));
                        assert_eq!(out.unwrap().1, b"p");
                    }
                }
            }
        }
    }

    #[test]
    fn downlink_encap() {
        let core = core_with(&[IMSI]);
        let b = core.attach(IMSI).unwrap().bearer.unwrap();
        let pkt = vec![0xA5u8; 1400];
        let bytes = core.encap_downlink(b.ue_ip, &pkt).unwrap();
        let decoded = gtp::decode(&bytes).unwrap();
        assert_eq!(decoded.header.teid, b.downlink_teid);
        assert_eq!(decoded.payload, pkt);
        assert_eq!(
            core.encap_downlink(Ipv4Addr::new(10, 45, 0, 99), &pkt),
            Err(CoreError::UnknownUeIp(Ipv4Addr::new(10, 45, 0, 99)))
        );
    }

    #[test]
    fn dump_format() {
        let core = core_with(&[IMSI]);
        assert_eq!(core.dump(), "");
        core.attach(IMSI).unwrap();
        assert_eq!(core.dump(), format!("{IMSI} ATTACHED 10.45.0.2 1 2\n"));
    }

    #[test]
    fn signal_handling() {
        let core = core_with(&[IMSI]);
        let reply = core.handle_signal(Signal::AttachRequest {
            subscriber_id: IMSI.into(),
        });
        assert!(matches!(reply, Signal::AttachAccept { .. }));
        let reply = core.handle_signal(Signal::AttachRequest {
            subscriber_id: IMSI.into(),
        });
        assert!(matches!(reply, Signal::Reject { .. }));
        let reply = core.handle_signal(Signal::DetachRequest {
            subscriber_id: IMSI.into(),
        });
        assert!(matches!(reply, Signal::DetachAccept { .. }));
    }
}
