use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use super::corpus::BlobCorpus;
use super::engine::{BENCH_SUBSCRIBER, BLOB_SERVER};
use super::http::{build_request, parse_response_head};
use super::report::RequestSample;
use super::scenario::BenchScenario;
use super::server::{serve_blobs, BlobServer};
use super::{BenchError, ConnectionPolicy, RunOptions};
use crate::epc::{Core, CoreError};
use crate::fabric::{Fabric, FabricError};
use crate::gtp;
use crate::inner::{segment, Reassembler, Segment};
use crate::radio::{Direction, LinkProfile, Shaper};
use crate::userplane::UserPlane;

/// Everything a wall-clock run talks to: the EPC with its GTP-U socket, the
/// fabric and (for a standalone stack) an in-process blob server.
pub struct LiveStack {
    pub core: Arc<Core>,
    pub fabric: Arc<Fabric>,
    pub subscriber: String,
    gtpu: SocketAddr,
    _userplane: Option<UserPlane>,
    _blobs: Option<BlobServer>,
}

impl LiveStack {
    /// Uses an already running EPC user plane at `gtpu`.
    pub fn connect(
        core: Arc<Core>,
        fabric: Arc<Fabric>,
        subscriber: &str,
        gtpu: SocketAddr,
    ) -> LiveStack {
        LiveStack {
            core,
            fabric,
            subscriber: subscriber.to_string(),
            gtpu,
            _userplane: None,
            _blobs: None,
        }
    }

    /// Starts a private EPC user plane and blob server on loopback, with the
    /// benchmark UE attached and the blob server registered and ready.
    pub fn standalone(corpus: Arc<BlobCorpus>) -> Result<LiveStack, BenchError> {
        let core = Arc::new(Core::default());
        core.register_subscriber(BENCH_SUBSCRIBER)?;
        core.attach(BENCH_SUBSCRIBER)?;
        let fabric = Arc::new(Fabric::new());
        let blobs = serve_blobs(corpus, SocketAddr::from(([127, 0, 0, 1], 0)))?;
        let SocketAddr::V4(addr) = blobs.local_addr() else {
            unreachable!("bound to an IPv4 address")
        };
        fabric.register_instance(BLOB_SERVER, addr, "v1")?;
        fabric.set_ready(BLOB_SERVER, addr, true)?;
        let userplane = UserPlane::bind(
            SocketAddr::from(([127, 0, 0, 1], 0)),
            core.clone(),
            fabric.clone(),
        )?;
        Ok(LiveStack {
            gtpu: userplane.local_addr(),
            core,
            fabric,
            subscriber: BENCH_SUBSCRIBER.to_string(),
            _userplane: Some(userplane),
            _blobs: Some(blobs),
        })
    }

    pub fn gtpu_addr(&self) -> SocketAddr {
        self.gtpu
    }
}

struct Done {
    index: usize,
    at: Instant,
    status: u16,
    bytes: u64,
}

/// Runs a scenario in real time. The pacer issues requests on the chunk
/// schedule; each request is segmented, GTP-U encapsulated and sent through
/// an uplink shaper to the EPC, and the responses come back through a
/// downlink shaper. Only [`ConnectionPolicy::Shared`] is supported here.
pub fn run_wall(
    scenario: &BenchScenario,
    profile: &LinkProfile,
    stack: &LiveStack,
    opts: RunOptions,
) -> Result<Vec<RequestSample>, BenchError> {
    scenario.validate()?;
    if opts.policy != ConnectionPolicy::Shared {
        return Err(BenchError::UnsupportedPolicy(opts.policy));
    }
    let (host, path) = scenario.target()?;
    match stack.fabric.resolve(&host) {
        Ok(_) | Err(FabricError::NoReadyEndpoints(_)) => {}
        Err(_) => return Err(BenchError::UnresolvableTarget(scenario.target_url.clone())),
    }
    let bearer = stack
        .core
        .session(&stack.subscriber)
        .and_then(|s| s.bearer)
        .ok_or_else(|| CoreError::NotAttached(stack.subscriber.clone()))?;

    let enb = UdpSocket::bind(SocketAddrV4::new(Ipv4Addr::LOCALHOST, 0))?;
    enb.connect(stack.gtpu)?;
    enb.set_read_timeout(Some(Duration::from_millis(50)))?;
    let enb_rx = enb.try_clone()?;

    let n = scenario.total_requests();
    // stream ids are offset per run so leftovers of an earlier run on the
    // same UE can never complete a stream of this one
    let base = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0)
        & 0x7FFF_FFFF;
    let (done_tx, done_rx) = mpsc::channel::<Done>();
    let downlink_teid = bearer.downlink_teid;
    let mut reassembler = Reassembler::new();
    let downlink = Shaper::spawn(*profile, Direction::Downlink, move |datagram| {
        let Ok(pkt) = gtp::decode(&datagram) else {
            return;
        };
        if pkt.header.teid != downlink_teid {
            return;
        }
        let Ok(seg) = Segment::decode(&pkt.payload) else {
            return;
        };
        let stream = seg.stream_id;
        let Some(response) = reassembler.push(seg) else {
            return;
        };
        let index = stream.wrapping_sub(base) as usize;
        if index >= n {
            return;
        }
        let (status, bytes) = match parse_response_head(&response) {
            Some(h) => (h.status, (response.len() - h.head_len) as u64),
            None => (0, 0),
        };
        let _ = done_tx.send(Done {
            index,
            at: Instant::now(),
            status,
            bytes,
        });
    });
    let to_downlink = downlink.sender();
    let stop = Arc::new(AtomicBool::new(false));
    let rx_stop = stop.clone();
    let receiver = thread::spawn(move || {
        let mut buf = vec![0u8; 65_536];
        while !rx_stop.load(Ordering::Relaxed) {
            if let Ok(len) = enb_rx.recv(&mut buf) {
                to_downlink.send(buf[..len].to_vec());
            }
        }
    });
    let uplink = Shaper::spawn(*profile, Direction::Uplink, move |datagram| {
        let _ = enb.send(&datagram);
    });

    // The sender holds each request until the radio connection is up; send
    // times are non-decreasing so one FIFO thread is enough.
    let (send_tx, send_rx) = mpsc::channel::<(usize, Instant)>();
    let to_uplink = uplink.sender();
    let (ue_ip, gateway, teid) = (bearer.ue_ip, stack.core.gateway(), bearer.uplink_teid);
    let request = build_request(&host, &path);
    let sender = thread::spawn(move || {
        for (i, at) in send_rx {
            if let Some(wait) = at.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
            for inner in segment(ue_ip, gateway, base.wrapping_add(i as u32), &request) {
                if let Ok(datagram) = gtp::encode_gpdu(teid, &inner) {
                    to_uplink.send(datagram);
                }
            }
        }
    });

    let start = Instant::now();
    let mut issued = vec![start; n];
    let mut connected_at: Option<Instant> = None;
    for (i, slot) in issued.iter_mut().enumerate() {
        let due = start + scenario.issue_offset(i);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        let now = Instant::now();
        *slot = now;
        let ready = *connected_at.get_or_insert(now + profile.setup_duration());
        let _ = send_tx.send((i, ready.max(now)));
    }
    drop(send_tx);

    let mut done: HashMap<usize, Done> = HashMap::with_capacity(n);
    let deadline = issued.last().copied().unwrap_or(start) + opts.timeout;
    while done.len() < n {
        let Some(left) = deadline.checked_duration_since(Instant::now()) else {
            break;
        };
        match done_rx.recv_timeout(left) {
            Ok(d) => {
                done.insert(d.index, d);
            }
            Err(_) => break,
        }
    }
    stop.store(true, Ordering::Relaxed);
    let _ = sender.join();
    let _ = receiver.join();
    drop(uplink);
    drop(downlink);

    let timeout_ms = opts.timeout.as_secs_f64() * 1e3;
    Ok((0..n)
        .map(|index| {
            let issued_at_ms = (issued[index] - start).as_secs_f64() * 1e3;
            match done.get(&index) {
                Some(d) if d.at - issued[index] <= opts.timeout => RequestSample {
                    index,
                    issued_at_ms,
                    latency_ms: (d.at - issued[index]).as_secs_f64() * 1e3,
                    status: d.status,
                    bytes: d.bytes,
                },
                _ => RequestSample {
                    index,
                    issued_at_ms,
                    latency_ms: timeout_ms,
                    status: 0,
                    bytes: 0,
                },
            }
        })
        .collect())
}
