use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LinkProfile, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    fn stream(self) -> u64 {
        match self {
            Direction::Uplink => 1,
            Direction::Downlink => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledDelivery {
    pub submitted_at: SimTime,
    /// Arrival time at the far end; for a dropped packet, the time it left
    /// the transmitter.
    pub deliver_at: SimTime,
    pub dropped: bool,
    pub size: usize,
}

/// One direction of an emulated radio link: a single-server FIFO queue that
/// serializes at `bandwidth`, then adds propagation delay with Gaussian
/// jitter truncated so the delay is never negative. Deliveries never
/// overtake earlier ones.
#[derive(Debug, Clone)]
pub struct Link {
    profile: LinkProfile,
    rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
    link_free_at: SimTime,
    last_delivery: SimTime,
}

impl Link {
    pub fn new(profile: LinkProfile, direction: Direction) -> Link {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        rng.set_stream(direction.stream());
        let jitter = (profile.jitter_stddev > 0.0)
            .then(|| Normal::new(0.0, profile.jitter_stddev).expect("validated stddev"));
        Link {
            profile,
            rng,
            jitter,
            link_free_at: SimTime::ZERO,
            last_delivery: SimTime::ZERO,
        }
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn link_free_at(&self) -> SimTime {
        self.link_free_at
    }

    /// Queues a packet of `size` bytes submitted at `now`.
    pub fn transmit(&mut self, size: usize, now: SimTime) -> ScheduledDelivery {
        let start = now.max(self.link_free_at);
        let sent = start + self.profile.serialization(size);
        self.link_free_at = sent;

        let lost = self.profile.loss_prob > 0.0 && self.rng.gen::<f64>() < self.profile.loss_prob;
        if lost {
            return ScheduledDelivery {
                submitted_at: now,
                deliver_at: sent,
                dropped: true,
                size,
            };
        }

        let delay_ms = match &self.jitter {
            Some(n) => (self.profile.one_way_delay + n.sample(&mut self.rng)).max(0.0),
            None => self.profile.one_way_delay,
        };
        let deliver_at = SimTime(sent.0 + (delay_ms * 1e6).round() as u64).max(self.last_delivery);
        self.last_delivery = deliver_at;
        ScheduledDelivery {
            submitted_at: now,
            deliver_at,
            dropped: false,
            size,
        }
    }
}
