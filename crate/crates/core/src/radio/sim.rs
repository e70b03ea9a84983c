use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::SimTime;

struct Entry<T> {
    at: SimTime,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Deterministic single-threaded event queue on a virtual clock. Events fire
/// in timestamp order; ties fire in submission order.
pub struct Simulator<T> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Entry<T>>>,
}

impl<T> Default for Simulator<T> {
    fn default() -> Self {
        Simulator {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }
}

impl<T> Simulator<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Events in the past are scheduled at the current time.
    pub fn schedule(&mut self, at: SimTime, item: T) {
        debug_assert!(
            at >= self.now,
            "scheduling into the past: {at} < {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Entry {
            at: at.max(self.now),
            seq,
            item,
        }));
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.at)
    }

    /// Pops the next event and moves the clock to its timestamp.
    pub fn pop_next(&mut self) -> Option<(SimTime, T)> {
        let Reverse(e) = self.queue.pop()?;
        self.now = e.at;
        Some((e.at, e.item))
    }

    /// Fires every event due at or before `until`, then sets the clock to
    /// `until`. Never moves the clock backwards.
    pub fn advance_clock(&mut self, until: SimTime) -> Vec<(SimTime, T)> {
        let mut fired = Vec::new();
        while self.peek_time().is_some_and(|t| t <= until) {
            fired.extend(self.pop_next());
        }
        self.now = self.now.max(until);
        fired
    }
}
