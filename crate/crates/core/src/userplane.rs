//! The EPC's GTP-U socket: decapsulates uplink datagrams, answers Echo
//! Requests on the path, reassembles request streams per UE and proxies them
//! to the edge endpoint picked by the fabric. Responses are segmented,
//! encapsulated with the UE's downlink TEID and sent back to the peer the
//! uplink came from.

use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use crate::bench::{parse_request, response_head};
use crate::epc::{Core, CoreError};
use crate::fabric::Fabric;
use crate::inner::{segment, Reassembler, Segment};

const UPSTREAM_TIMEOUT: Duration = Duration::from_secs(120);
/// Downlink bursts are spread out slightly so a large response does not
/// overrun the peer's socket buffer on loopback.
const BURST: usize = 64;
const BURST_GAP: Duration = Duration::from_micros(500);

pub struct UserPlane {
    local: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl UserPlane {
    pub fn bind(addr: SocketAddr, core: Arc<Core>, fabric: Arc<Fabric>) -> io::Result<UserPlane> {
        Self::from_socket(UdpSocket::bind(addr)?, core, fabric)
    }

    pub fn from_socket(
        socket: UdpSocket,
        core: Arc<Core>,
        fabric: Arc<Fabric>,
    ) -> io::Result<UserPlane> {
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        let local = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::Builder::new()
            .name("gtpu".into())
            .spawn(move || serve(socket, core, fabric, flag))?;
        Ok(UserPlane {
            local,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }
}

impl Drop for UserPlane {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(socket: UdpSocket, core: Arc<Core>, fabric: Arc<Fabric>, stop: Arc<AtomicBool>) {
    let socket = Arc::new(socket);
    let mut streams: HashMap<Ipv4Addr, Reassembler> = HashMap::new();
    let mut buf = vec![0u8; 65_536];
    while !stop.load(Ordering::Relaxed) {
        let (n, peer) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                continue
            }
            Err(e) => {
                warn!("gtp-u receive failed: {e}");
                continue;
            }
        };
        let (session, inner) = match core.demux_uplink(&buf[..n]) {
            Ok(r) => r,
            Err(CoreError::EchoShortCircuit { response }) => {
                if let Some(reply) = response {
                    let _ = socket.send_to(&reply, peer);
                }
                continue;
            }
            Err(e) => {
                debug!("dropping uplink datagram from {peer}: {e}");
                continue;
            }
        };
        let Some(ue_ip) = session.ue_ip() else {
            continue;
        };
        let Ok(seg) = Segment::decode(&inner) else {
            continue;
        };
        let stream = seg.stream_id;
        let Some(request) = streams.entry(ue_ip).or_default().push(seg) else {
            continue;
        };
        let (socket, core, fabric) = (socket.clone(), core.clone(), fabric.clone());
        thread::spawn(move || {
            let response = proxy(&fabric, &request);
            let gateway = core.gateway();
            for (k, inner) in segment(gateway, ue_ip, stream, &response)
                .into_iter()
                .enumerate()
            {
                let datagram = match core.encap_downlink(ue_ip, &inner) {
                    Ok(d) => d,
                    Err(e) => {
                        debug!("downlink for {ue_ip} dropped: {e}");
                        return;
                    }
                };
                if k > 0 && k % BURST == 0 {
                    thread::sleep(BURST_GAP);
                }
                let _ = socket.send_to(&datagram, peer);
            }
        });
    }
}

/// Forwards one HTTP request to a ready endpoint of the addressed service
/// and returns the full response bytes.
fn proxy(fabric: &Fabric, request: &[u8]) -> Vec<u8> {
    let error = |status| response_head(status, 0);
    let Some(head) = parse_request(request) else {
        return error(400);
    };
    let Ok(endpoint) = fabric.pick_endpoint(&head.host) else {
        return error(503);
    };
    let agent = ureq::AgentBuilder::new().timeout(UPSTREAM_TIMEOUT).build();
    let url = format!("http://{}{}", endpoint.address, head.path);
    let resp = match agent.get(&url).call() {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => {
            debug!("upstream {url} failed: {e}");
            return error(502);
        }
    };
    let status = resp.status();
    let mut body = Vec::new();
    if resp.into_reader().read_to_end(&mut body).is_err() {
        return error(502);
    }
    let mut out = response_head(status, body.len());
    out.extend_from_slice(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtp::{self, EchoKind, MessageType};

    fn plane() -> (UserPlane, Arc<Core>) {
        let core = Arc::new(Core::default());
        let up = UserPlane::bind(
            "127.0.0.1:0".parse().unwrap(),
            core.clone(),
            Arc::new(Fabric::new()),
        )
        .unwrap();
        (up, core)
    }

    #[test]
    fn answers_echo_requests() {
        let (up, _core) = plane();
        let enb = UdpSocket::bind("127.0.0.1:0").unwrap();
        enb.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        enb.send_to(&gtp::make_echo(EchoKind::Request, 41), up.local_addr())
            .unwrap();
        let mut buf = [0u8; 64];
        let n = enb.recv(&mut buf).unwrap();
        let pkt = gtp::decode(&buf[..n]).unwrap();
        assert_eq!(pkt.header.message_type, MessageType::EchoResponse);
        assert_eq!(pkt.header.sequence(), Some(41));
    }

    #[test]
    fn unknown_service_gets_503_downlink() {
        let (up, core) = plane();
        core.register_subscriber("001010000000009").unwrap();
        let s = core.attach("001010000000009").unwrap();
        let b = s.bearer.unwrap();
        let enb = UdpSocket::bind("127.0.0.1:0").unwrap();
        enb.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let req = crate::bench::build_request("ghost.edge.local", "/");
        for inner in segment(b.ue_ip, core.gateway(), 3, &req) {
            enb.send_to(
                &gtp::encode_gpdu(b.uplink_teid, &inner).unwrap(),
                up.local_addr(),
            )
            .unwrap();
        }
        let mut buf = [0u8; 2048];
        let n = enb.recv(&mut buf).unwrap();
        let pkt = gtp::decode(&buf[..n]).unwrap();
        assert_eq!(pkt.header.teid, b.downlink_teid);
        let seg = Segment::decode(&pkt.payload).unwrap();
        assert_eq!(seg.stream_id, 3);
        assert!(seg.data.starts_with(b"HTTP/1.1 503"));
    }
}
