//! Bottleneck link: FIFO tail-drop byte queue feeding a fixed-rate server.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::RangeError;
use crate::time::SimTime;
use crate::transport::{Segment, MSS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub rate_bps: u64,
    /// Round-trip propagation delay, split evenly between directions.
    pub rtt_ms: f64,
    pub queue_bytes: u64,
    pub loss_prob: f64,
    pub seed: u64,
}

impl LinkConfig {
    /// 12 Mbps, 80 ms RTT, 120000-byte tail-drop queue, no random loss.
    pub fn reference(seed: u64) -> Self {
        Self {
            rate_bps: 12_000_000,
            rtt_ms: 80.0,
            queue_bytes: 120_000,
            loss_prob: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), RangeError> {
        RangeError::check("rate_bps", self.rate_bps as f64, 1.0, f64::MAX)?;
        if !(self.rtt_ms > 0.0 && self.rtt_ms.is_finite()) {
            return Err(RangeError {
                name: "rtt_ms",
                value: self.rtt_ms,
                min: f64::MIN_POSITIVE,
                max: f64::MAX,
            });
        }
        RangeError::check(
            "queue_bytes",
            self.queue_bytes as f64,
            f64::from(MSS),
            f64::MAX,
        )?;
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(RangeError {
                name: "loss_prob",
                value: self.loss_prob,
                min: 0.0,
                max: 1.0 - f64::EPSILON,
            });
        }
        Ok(())
    }

    pub fn one_way_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.rtt_ms / 2000.0)
    }

    /// Bandwidth-delay product in bytes.
    pub fn bdp_bytes(&self) -> f64 {
        self.rate_bps as f64 * self.rtt_ms / 1000.0 / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TailDrop,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueued {
    /// Accepted; `Some(t)` when the link was idle and service finishes at `t`.
    Accepted(Option<SimTime>),
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    pub offered_bytes: u64,
    pub delivered_bytes: u64,
    pub drops_tail: u64,
    pub drops_random: u64,
}

impl LinkCounters {
    pub fn drops(&self) -> u64 {
        self.drops_tail + self.drops_random
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    config: LinkConfig,
    queue: VecDeque<Segment>,
    occupancy: u64,
    busy: bool,
    carry: u64,
    rng: Xoshiro256PlusPlus,
    pub counters: LinkCounters,
}

impl Link {
    pub fn new(config: LinkConfig) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(config.seed),
            config,
            queue: VecDeque::new(),
            occupancy: 0,
            busy: false,
            carry: 0,
            counters: LinkCounters::default(),
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    /// Bytes queued, including the segment being serialized.
    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn queued_segments(&self) -> usize {
        self.queue.len()
    }

    /// Serialization time of `len` bytes. The sub-microsecond remainder is
    /// carried into the next segment so the long-run rate is exact.
    fn service_time(&mut self, len: u32) -> SimTime {
        let bits_us = u64::from(len) * 8 * 1_000_000 + self.carry;
        self.carry = bits_us % self.config.rate_bps;
        SimTime(bits_us / self.config.rate_bps)
    }

    pub fn enqueue(&mut self, seg: Segment, now: SimTime) -> Enqueued {
        self.counters.offered_bytes += u64::from(seg.len);
        if self.occupancy + u64::from(seg.len) > self.config.queue_bytes {
            self.counters.drops_tail += 1;
            return Enqueued::Dropped(DropReason::TailDrop);
        }
        if self.config.loss_prob > 0.0 && self.rng.random::<f64>() < self.config.loss_prob {
            self.counters.drops_random += 1;
            return Enqueued::Dropped(DropReason::Random);
        }
        self.occupancy += u64::from(seg.len);
        self.queue.push_back(seg);
        if self.busy {
            Enqueued::Accepted(None)
        } else {
            self.busy = true;
            Enqueued::Accepted(Some(now + self.service_time(seg.len)))
        }
    }

    /// Completes service of the head segment. Returns it together with the
    /// completion time of the next one, if any.
    pub fn dequeue(&mut self, now: SimTime) -> Option<(Segment, Option<SimTime>)> {
        let seg = self.queue.pop_front()?;
        self.occupancy -= u64::from(seg.len);
        self.counters.delivered_bytes += u64::from(seg.len);
        let next = match self.queue.front() {
            Some(head) => {
                let len = head.len;
                Some(now + self.service_time(len))
            }
            None => {
                self.busy = false;
                None
            }
        };
        Some((seg, next))
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let queued: u64 = self.queue.iter().map(|s| u64::from(s.len)).sum();
        if queued != self.occupancy {
            return Err(format!(
                "queue occupancy {} != queued bytes {queued}",
                self.occupancy
            ));
        }
        if self.occupancy > self.config.queue_bytes {
            return Err(format!(
                "queue occupancy {} exceeds capacity {}",
                self.occupancy, self.config.queue_bytes
            ));
        }
        Ok(())
    }
}
