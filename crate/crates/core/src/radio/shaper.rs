//! Wall-clock link shaping for live mode: one actor thread per direction
//! that holds each packet until the link model says it arrives.

use std::collections::VecDeque;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{Direction, Link, LinkProfile, SimTime};

pub struct Shaper {
    tx: Option<mpsc::Sender<Vec<u8>>>,
    handle: Option<JoinHandle<()>>,
}

impl Shaper {
    /// Spawns the actor. `deliver` is called from the actor thread for every
    /// packet that survives the link, at (or just after) its delivery time.
    pub fn spawn<F>(profile: LinkProfile, direction: Direction, mut deliver: F) -> Shaper
    where
        F: FnMut(Vec<u8>) + Send + 'static,
    {
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let handle = thread::Builder::new()
            .name(format!("shaper-{direction:?}").to_lowercase())
            .spawn(move || {
                let epoch = Instant::now();
                let now = || SimTime(epoch.elapsed().as_nanos() as u64);
                let mut link = Link::new(profile, direction);
                let mut queue: VecDeque<(SimTime, Vec<u8>)> = VecDeque::new();
                let mut open = true;
                while open || !queue.is_empty() {
                    while queue.front().is_some_and(|(at, _)| *at <= now()) {
                        let (_, pkt) = queue.pop_front().expect("checked");
                        deliver(pkt);
                    }
                    let wait = match queue.front() {
                        Some((at, _)) => at.saturating_sub(now()),
                        None => Duration::from_millis(50),
                    };
                    if !open {
                        thread::sleep(wait);
                        continue;
                    }
                    match rx.recv_timeout(wait) {
                        Ok(pkt) => {
                            let d = link.transmit(pkt.len(), now());
                            if !d.dropped {
                                queue.push_back((d.deliver_at, pkt));
                            }
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => open = false,
                    }
                }
            })
            .expect("spawn shaper thread");
        Shaper {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    /// Hands a packet to the link. Returns false once the actor is gone.
    pub fn send(&self, packet: Vec<u8>) -> bool {
        self.tx.as_ref().is_some_and(|tx| tx.send(packet).is_ok())
    }

    pub fn sender(&self) -> ShaperHandle {
        ShaperHandle(self.tx.clone().expect("shaper running"))
    }
}

/// Cloneable input side of a [`Shaper`].
#[derive(Clone)]
pub struct ShaperHandle(mpsc::Sender<Vec<u8>>);

impl ShaperHandle {
    pub fn send(&self, packet: Vec<u8>) -> bool {
        self.0.send(packet).is_ok()
    }
}

impl Drop for Shaper {
    /// Drains packets already in flight, then stops the actor.
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
