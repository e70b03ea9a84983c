use std::net::{Ipv4Addr, SocketAddrV4};

use super::corpus::route_body_len;
use super::http::{build_request, parse_request, response_head};
use super::report::RequestSample;
use super::scenario::BenchScenario;
use super::{BenchError, ConnectionPolicy, RunOptions};
use crate::epc::{Core, CoreError};
use crate::fabric::{Fabric, FabricError};
use crate::gtp::{self, TunnelEndpointId};
use crate::inner::{segment, segment_sizes, Reassembler, Segment};
use crate::radio::{Direction, Link, LinkProfile, SimTime, Simulator};

/// Subscriber the benchmark UE attaches as.
pub const BENCH_SUBSCRIBER: &str = "001010000000001";
/// Service name the blob server is registered under.
pub const BLOB_SERVER: &str = "blob-server";

/// A self-contained core and fabric for virtual-clock runs: one attached
/// benchmark UE and a ready two-instance blob-server service one hop from
/// the EPC egress.
pub struct VirtualStack {
    pub core: Core,
    pub fabric: Fabric,
    pub subscriber: String,
}

impl VirtualStack {
    pub fn standard() -> VirtualStack {
        let core = Core::default();
        core.register_subscriber(BENCH_SUBSCRIBER)
            .expect("valid subscriber id");
        core.attach(BENCH_SUBSCRIBER).expect("fresh core has room");
        let fabric = Fabric::new();
        for host in [2, 3] {
            let addr = SocketAddrV4::new(Ipv4Addr::new(10, 45, 1, host), 8080);
            fabric
                .register_instance(BLOB_SERVER, addr, "v1")
                .expect("valid service");
            fabric
                .set_ready(BLOB_SERVER, addr, true)
                .expect("just registered");
        }
        VirtualStack {
            core,
            fabric,
            subscriber: BENCH_SUBSCRIBER.to_string(),
        }
    }
}

enum Event {
    Issue(usize),
    Send(usize),
    /// A GTP-U datagram reaching the EPC from the radio side.
    Uplink(Vec<u8>),
    Complete(usize),
    Deadline(usize),
}

#[derive(Debug, Clone, Copy, Default)]
struct Pending {
    issued_at: SimTime,
    slot: Option<usize>,
    /// (completion time, status, body bytes) once the last response packet
    /// has been delivered.
    completed: Option<(SimTime, u16, u64)>,
    closed: bool,
}

struct Engine<'a> {
    stack: &'a VirtualStack,
    opts: RunOptions,
    setup: std::time::Duration,
    sim: Simulator<Event>,
    up: Link,
    down: Link,
    reassembler: Reassembler,
    requests: Vec<Pending>,
    ue_ip: Ipv4Addr,
    uplink_teid: TunnelEndpointId,
    gateway: Ipv4Addr,
    request_bytes: Vec<u8>,
    connected_at: Option<SimTime>,
    idle_slots: Vec<usize>,
    slots_opened: usize,
}

/// Runs a scenario on the virtual clock. Every request is real HTTP framing
/// carried in inner packets through the GTP-U tunnel: uplink datagrams are
/// demultiplexed by the EPC, reassembled, routed to an endpoint picked by the
/// fabric, and the response is segmented and encapsulated back down the
/// downlink. A request any of whose packets is lost is never answered (no
/// retransmission) and is recorded as a timeout.
pub fn run_virtual(
    scenario: &BenchScenario,
    profile: &LinkProfile,
    stack: &VirtualStack,
    opts: RunOptions,
) -> Result<Vec<RequestSample>, BenchError> {
    scenario.validate()?;
    let (host, path) = scenario.target()?;
    match stack.fabric.resolve(&host) {
        Ok(_) | Err(FabricError::NoReadyEndpoints(_)) => {}
        Err(_) => return Err(BenchError::UnresolvableTarget(scenario.target_url.clone())),
    }
    let session = stack
        .core
        .session(&stack.subscriber)
        .filter(|s| s.bearer.is_some())
        .ok_or_else(|| CoreError::NotAttached(stack.subscriber.clone()))?;
    let bearer = session.bearer.expect("filtered above");

    let n = scenario.total_requests();
    let mut engine = Engine {
        stack,
        opts,
        setup: profile.setup_duration(),
        sim: Simulator::new(),
        up: Link::new(*profile, Direction::Uplink),
        down: Link::new(*profile, Direction::Downlink),
        reassembler: Reassembler::new(),
        requests: vec![Pending::default(); n],
        ue_ip: bearer.ue_ip,
        uplink_teid: bearer.uplink_teid,
        gateway: stack.core.gateway(),
        request_bytes: build_request(&host, &path),
        connected_at: None,
        idle_slots: Vec::new(),
        slots_opened: 0,
    };
    for i in 0..n {
        let at = SimTime::ZERO + scenario.issue_offset(i);
        engine.requests[i].issued_at = at;
        engine.sim.schedule(at, Event::Issue(i));
    }
    while let Some((now, ev)) = engine.sim.pop_next() {
        engine.handle(now, ev)?;
    }
    Ok(engine.samples())
}

impl Engine<'_> {
    fn handle(&mut self, now: SimTime, ev: Event) -> Result<(), BenchError> {
        match ev {
            Event::Issue(i) => {
                self.sim
                    .schedule(now + self.opts.timeout, Event::Deadline(i));
                let ready = match self.opts.policy {
                    ConnectionPolicy::Shared => *self.connected_at.get_or_insert(now + self.setup),
                    ConnectionPolicy::PerSlot => match self.idle_slots.pop() {
                        Some(slot) => {
                            self.requests[i].slot = Some(slot);
                            now
                        }
                        None => {
                            self.requests[i].slot = Some(self.slots_opened);
                            self.slots_opened += 1;
                            now + self.setup
                        }
                    },
                };
                self.sim.schedule(ready.max(now), Event::Send(i));
            }
            Event::Send(i) => {
                let packets = segment(self.ue_ip, self.gateway, i as u32, &self.request_bytes);
                for inner in packets {
                    let datagram =
                        gtp::encode_gpdu(self.uplink_teid, &inner).map_err(CoreError::from)?;
                    let d = self.up.transmit(datagram.len(), now);
                    if !d.dropped {
                        self.sim.schedule(d.deliver_at, Event::Uplink(datagram));
                    }
                }
            }
            Event::Uplink(datagram) => {
                let (session, inner) = self.stack.core.demux_uplink(&datagram)?;
                let Some(ue_ip) = session.ue_ip() else {
                    return Ok(());
                };
                let Ok(seg) = Segment::decode(&inner) else {
                    return Ok(());
                };
                let stream = seg.stream_id;
                if let Some(request) = self.reassembler.push(seg) {
                    self.respond(now, ue_ip, stream as usize, &request)?;
                }
            }
            Event::Complete(i) | Event::Deadline(i) => {
                let req = &mut self.requests[i];
                if !req.closed {
                    req.closed = true;
                    if let Some(slot) = req.slot {
                        self.idle_slots.push(slot);
                    }
                }
            }
        }
        Ok(())
    }

    /// Serves a reassembled request at the EPC egress (the edge endpoint is
    /// one hop away and answers immediately) and sends the response down.
    fn respond(
        &mut self,
        now: SimTime,
        ue_ip: Ipv4Addr,
        i: usize,
        request: &[u8],
    ) -> Result<(), BenchError> {
        if i >= self.requests.len() {
            return Ok(());
        }
        let (status, body_len) = match parse_request(request) {
            None => (400, 0),
            Some(head) => match self.stack.fabric.pick_endpoint(&head.host) {
                Err(_) => (503, 0),
                Ok(_endpoint) => match route_body_len(&head.path) {
                    Some(len) => (200, len),
                    None => (404, 0),
                },
            },
        };
        let head = response_head(status, body_len);
        let total = head.len() + body_len;

        // The first packet is built and encapsulated for real to exercise the
        // downlink TEID mapping; the rest only need their on-air sizes.
        let first_len = segment_sizes(total).next().expect("at least one packet");
        let mut first_payload = head.clone();
        first_payload.resize(first_len - crate::inner::SEGMENT_OVERHEAD, 0);
        let first_inner = segment(self.gateway, ue_ip, i as u32, &first_payload)
            .into_iter()
            .next()
            .expect("one segment");
        let first = self.stack.core.encap_downlink(ue_ip, &first_inner)?;

        let mut lost = false;
        let mut last = now;
        for (k, size) in segment_sizes(total).enumerate() {
            let on_air = if k == 0 {
                first.len()
            } else {
                gtp::gpdu_len(size)
            };
            let d = self.down.transmit(on_air, now);
            lost |= d.dropped;
            last = last.max(d.deliver_at);
        }
        if !lost {
            self.requests[i].completed = Some((last, status, body_len as u64));
            self.sim.schedule(last, Event::Complete(i));
        }
        Ok(())
    }

    fn samples(&self) -> Vec<RequestSample> {
        let timeout_ms = self.opts.timeout.as_secs_f64() * 1e3;
        self.requests
            .iter()
            .enumerate()
            .map(|(index, req)| {
                let issued_at_ms = req.issued_at.as_millis_f64();
                match req.completed {
                    Some((at, status, bytes))
                        if at.saturating_sub(req.issued_at) <= self.opts.timeout =>
                    {
                        RequestSample {
                            index,
                            issued_at_ms,
                            latency_ms: (at - req.issued_at).as_secs_f64() * 1e3,
                            status,
                            bytes,
                        }
                    }
                    _ => RequestSample {
                        index,
                        issued_at_ms,
                        latency_ms: timeout_ms,
                        status: 0,
                        bytes: 0,
                    },
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn quiet(delay: f64, bandwidth: f64) -> LinkProfile {
        LinkProfile {
            one_way_delay: delay,
            bandwidth,
            ..Default::default()
        }
    }

    fn tiny(path: &str, rate: u32, duration: u32) -> BenchScenario {
        BenchScenario {
            name: "t".into(),
            target_url: format!("http://blob-server.edge.local{path}"),
            rate,
            duration,
            expected_body_bytes: route_body_len(path).unwrap() as u64,
            profile: None,
        }
    }

    #[test]
    fn single_request_takes_one_round_trip() {
        let stack = VirtualStack::standard();
        let p = quiet(10.0, 1e6);
        let s = run_virtual(&tiny("/empty", 1, 1), &p, &stack, RunOptions::default()).unwrap();
        assert_eq!(s.len(), 1);
        // hand oracle: request and response each serialize once at 1 MB/s
        // and cross the 10 ms path once
        let req = gtp::gpdu_len(
            crate::inner::SEGMENT_OVERHEAD
                + build_request("blob-server.edge.local", "/empty").len(),
        );
        let resp = gtp::gpdu_len(crate::inner::SEGMENT_OVERHEAD + response_head(200, 0).len());
        let expect = 20.0 + (req + resp) as f64 / 1e6 * 1e3;
        assert!(
            (s[0].latency_ms - expect).abs() < 1e-6,
            "{} vs {expect}",
            s[0].latency_ms
        );
        assert_eq!(s[0].status, 200);
    }

    #[test]
    fn unknown_service_is_unresolvable() {
        let stack = VirtualStack::standard();
        let mut sc = tiny("/empty", 1, 1);
        sc.target_url = "http://nope.edge.local/empty".into();
        let err = run_virtual(&sc, &quiet(1.0, 1e6), &stack, RunOptions::default()).unwrap_err();
        assert!(matches!(err, BenchError::UnresolvableTarget(_)));
    }

    #[test]
    fn detached_ue_cannot_run() {
        let stack = VirtualStack::standard();
        stack.core.detach(BENCH_SUBSCRIBER).unwrap();
        let err = run_virtual(
            &tiny("/empty", 1, 1),
            &quiet(1.0, 1e6),
            &stack,
            RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, BenchError::Core(CoreError::NotAttached(_))));
    }

    #[test]
    fn total_loss_times_out_every_request() {
        let stack = VirtualStack::standard();
        let p = LinkProfile {
            loss_prob: 1.0,
            ..quiet(1.0, 1e6)
        };
        let opts = RunOptions {
            timeout: Duration::from_secs(2),
            ..Default::default()
        };
        let s = run_virtual(&tiny("/empty", 5, 1), &p, &stack, opts).unwrap();
        assert!(s
            .iter()
            .all(|x| x.status == 0 && x.latency_ms == 2000.0 && x.bytes == 0));
    }

    #[test]
    fn per_slot_reuses_idle_connections() {
        let stack = VirtualStack::standard();
        let p = LinkProfile {
            setup_cost: 50.0,
            ..quiet(1.0, 1e7)
        };
        let opts = RunOptions {
            policy: ConnectionPolicy::PerSlot,
            ..Default::default()
        };
        // 10 requests 100 ms apart, each done in ~2 ms: only the first opens
        // a connection
        let s = run_virtual(&tiny("/empty", 10, 1), &p, &stack, opts).unwrap();
        assert!(s[0].latency_ms > 50.0);
        assert!(s[1..].iter().all(|x| x.latency_ms < 5.0));
    }

    #[test]
    fn missing_route_is_404() {
        let stack = VirtualStack::standard();
        let mut sc = tiny("/empty", 1, 1);
        sc.target_url = "http://blob-server/missing".into();
        let s = run_virtual(&sc, &quiet(1.0, 1e6), &stack, RunOptions::default()).unwrap();
        assert_eq!(s[0].status, 404);
    }
}
