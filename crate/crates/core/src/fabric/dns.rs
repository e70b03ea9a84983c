//! Minimal DNS responder for the fabric zone. It answers A queries for
//! `<service>.edge.local` with the addresses of ready instances and
//! refuses everything outside the zone.

use std::io;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::registry::{Fabric, FabricError, ZONE};

const TYPE_A: u16 = 1;
const TYPE_ANY: u16 = 255;
const CLASS_IN: u16 = 1;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_REFUSED: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsReply {
    pub id: u16,
    pub rcode: u8,
    pub addresses: Vec<Ipv4Addr>,
}

struct Question {
    name: String,
    qtype: u16,
    /// Offset just past the question section.
    end: usize,
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub fn build_query(id: u16, name: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + name.len());
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&0x0100u16.to_be_bytes()); // RD
    out.extend_from_slice(&[0, 1, 0, 0, 0, 0, 0, 0]);
    for label in name.trim_end_matches('.').split('.') {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
    out.extend_from_slice(&TYPE_A.to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    out
}

fn read_name(msg: &[u8], mut pos: usize) -> io::Result<(String, usize)> {
    let mut labels = Vec::new();
    let mut end = None;
    for _ in 0..128 {
        let len = *msg.get(pos).ok_or_else(|| bad("name runs past message"))? as usize;
        if len == 0 {
            return Ok((labels.join("."), end.unwrap_or(pos + 1)));
        }
        if len & 0xC0 == 0xC0 {
            let lo = *msg.get(pos + 1).ok_or_else(|| bad("truncated pointer"))? as usize;
            end.get_or_insert(pos + 2);
            pos = ((len & 0x3F) << 8) | lo;
            continue;
        }
        let label = msg
            .get(pos + 1..pos + 1 + len)
            .ok_or_else(|| bad("truncated label"))?;
        labels.push(String::from_utf8_lossy(label).to_ascii_lowercase());
        pos += 1 + len;
    }
    Err(bad("name too long or looping"))
}

fn parse_question(msg: &[u8]) -> io::Result<Question> {
    if msg.len() < 12 {
        return Err(bad("short header"));
    }
    if u16::from_be_bytes([msg[4], msg[5]]) != 1 {
        return Err(bad("expected exactly one question"));
    }
    let (name, pos) = read_name(msg, 12)?;
    let tail = msg
        .get(pos..pos + 4)
        .ok_or_else(|| bad("truncated question"))?;
    Ok(Question {
        name,
        qtype: u16::from_be_bytes([tail[0], tail[1]]),
        end: pos + 4,
    })
}

pub fn parse_response(msg: &[u8]) -> io::Result<DnsReply> {
    let q = parse_question(msg)?;
    let id = u16::from_be_bytes([msg[0], msg[1]]);
    if msg[2] & 0x80 == 0 {
        return Err(bad("not a response"));
    }
    let rcode = msg[3] & 0x0F;
    let ancount = u16::from_be_bytes([msg[6], msg[7]]);
    let mut pos = q.end;
    let mut addresses = Vec::new();
    for _ in 0..ancount {
        let (_, after) = read_name(msg, pos)?;
        let fixed = msg
            .get(after..after + 10)
            .ok_or_else(|| bad("truncated answer"))?;
        let rtype = u16::from_be_bytes([fixed[0], fixed[1]]);
        let rdlen = u16::from_be_bytes([fixed[8], fixed[9]]) as usize;
        let rdata = msg
            .get(after + 10..after + 10 + rdlen)
            .ok_or_else(|| bad("truncated rdata"))?;
        if rtype == TYPE_A && rdlen == 4 {
            addresses.push(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3]));
        }
        pos = after + 10 + rdlen;
    }
    Ok(DnsReply {
        id,
        rcode,
        addresses,
    })
}

/// Builds the reply for one query datagram. `None` for garbage that does
/// not even carry a header.
fn answer(fabric: &Fabric, query: &[u8]) -> Option<Vec<u8>> {
    if query.len() < 12 || query[2] & 0x80 != 0 {
        return None;
    }
    let mut out = Vec::with_capacity(512);
    out.extend_from_slice(&query[..2]);
    let rd = query[2] & 0x01;
    let q = match parse_question(query) {
        Ok(q) => q,
        Err(_) => {
            out.extend_from_slice(&[0x84 | rd, RCODE_FORMERR, 0, 0, 0, 0, 0, 0, 0, 0]);
            return Some(out);
        }
    };
    let zone_suffix = format!(".{ZONE}");
    let (rcode, addrs) = match q.name.strip_suffix(&zone_suffix) {
        None => (RCODE_REFUSED, Vec::new()),
        Some(svc) => match fabric.resolve(svc) {
            Ok(info) => {
                let mut ips: Vec<Ipv4Addr> = info.ready.iter().map(|e| *e.address.ip()).collect();
                ips.dedup();
                if q.qtype == TYPE_A || q.qtype == TYPE_ANY {
                    (RCODE_NOERROR, ips)
                } else {
                    (RCODE_NOERROR, Vec::new())
                }
            }
            Err(FabricError::NoReadyEndpoints(_)) => (RCODE_SERVFAIL, Vec::new()),
            Err(_) => (RCODE_NXDOMAIN, Vec::new()),
        },
    };
    let aa = if rcode == RCODE_REFUSED { 0 } else { 0x04 };
    out.push(0x80 | aa | rd);
    out.push(rcode);
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(addrs.len() as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.extend_from_slice(&query[12..q.end]);
    for ip in addrs {
        out.extend_from_slice(&0xC00Cu16.to_be_bytes());
        out.extend_from_slice(&TYPE_A.to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
        out.extend_from_slice(&0u32.to_be_bytes()); // TTL: membership changes on every deploy
        out.extend_from_slice(&4u16.to_be_bytes());
        out.extend_from_slice(&ip.octets());
    }
    Some(out)
}

/// UDP responder thread; stops when dropped.
pub struct DnsResponder {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl DnsResponder {
    pub fn bind(addr: &str, fabric: Arc<Fabric>) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        Self::from_socket(socket, fabric)
    }

    pub fn from_socket(socket: UdpSocket, fabric: Arc<Fabric>) -> io::Result<Self> {
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        let local_addr = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("fabric-dns".into())
            .spawn(move || {
                let mut buf = [0u8; 1500];
                while !flag.load(Ordering::Relaxed) {
                    let (n, peer) = match socket.recv_from(&mut buf) {
                        Ok(x) => x,
                        Err(_) => continue,
                    };
                    if let Some(reply) = answer(&fabric, &buf[..n]) {
                        if let Err(e) = socket.send_to(&reply, peer) {
                            log::debug!("dns reply to {peer} failed: {e}");
                        }
                    }
                }
            })?;
        Ok(DnsResponder {
            local_addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }
}

impl Drop for DnsResponder {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Sends one A query and waits up to `timeout` for the reply.
pub fn query_a(server: SocketAddr, name: &str, timeout: Duration) -> io::Result<DnsReply> {
    let socket = UdpSocket::bind("127.0.0.1:0")?;
    socket.set_read_timeout(Some(timeout))?;
    let id = rand::random::<u16>();
    socket.send_to(&build_query(id, name), server)?;
    let mut buf = [0u8; 1500];
    loop {
        let (n, from) = socket.recv_from(&mut buf)?;
        if from != server {
            continue;
        }
        let reply = parse_response(&buf[..n])?;
        if reply.id == id {
            return Ok(reply);
        }
    }
}
