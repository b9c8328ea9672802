//! Per-endpoint client-side throttling: a sliding-window request-rate
//! limiter and a bounded in-flight gate.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

use super::clock::Clock;

const WINDOW_MS: u64 = 60_000;

/// Sliding-window limiter: at most `capacity` departures in any 60s window.
pub struct RateLimiter {
    capacity: usize,
    departures: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32) -> Self {
        Self {
            capacity: requests_per_minute.max(1) as usize,
            departures: Mutex::new(VecDeque::new()),
        }
    }

    /// Block (via the clock) until a request may depart, then record it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let now = clock.now_ms();
                let mut departures = self.departures.lock().unwrap();
                while departures
                    .front()
                    .is_some_and(|&t| t + WINDOW_MS <= now)
                {
                    departures.pop_front();
                }
                if departures.len() < self.capacity {
                    departures.push_back(now);
                    return;
                }
                departures.front().unwrap() + WINDOW_MS - now
            };
            clock.sleep_ms(wait.max(1));
        }
    }
}

/// Caps the number of requests simultaneously in flight. Dropping the
/// returned permit releases the slot.
pub struct InFlightGate {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            max: max_in_flight.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightPermit { gate: self }
    }

    #[cfg(test)]
    fn active(&self) -> usize {
        *self.active.lock().unwrap()
    }
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap();
        *active -= 1;
        self.gate.freed.notify_one();
    }
}
