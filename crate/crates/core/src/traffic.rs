//! FTP Model 3 downlink traffic: fixed-size files with Poisson arrivals,
//! per-user FIFO queues and per-packet delay bookkeeping.
//!
//! Each user draws from its own random stream, one uniform per slot, and the
//! Poisson count comes from inverting the CDF. Runs that differ only in the
//! arrival rate therefore see coupled arrival processes.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Mean time between files per user, ms.
    pub mean_interarrival: f64,
    /// File size in MB (10^6 bytes).
    pub packet_size: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { mean_interarrival: 20.0, packet_size: 0.05 }
    }
}

impl TrafficConfig {
    pub fn packet_bits(&self) -> u64 {
        (self.packet_size * 8e6).round() as u64
    }

    /// Expected files per user in a slot of `slot_ms`.
    pub fn rate_per_slot(&self, slot_ms: f64) -> f64 {
        if self.mean_interarrival.is_infinite() {
            0.0
        } else {
            slot_ms / self.mean_interarrival
        }
    }

    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.mean_interarrival > 0.0) {
            return Err(("mean_interarrival", format!("must be > 0, got {}", self.mean_interarrival)));
        }
        if !(self.packet_size > 0.0) || !self.packet_size.is_finite() {
            return Err(("packet_size", format!("must be > 0, got {}", self.packet_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub user: usize,
    pub arrival_slot: u64,
    pub size: u64,
    pub remaining: u64,
    /// Set once the packet's delay has reached the threshold.
    pub violated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayRecord {
    pub packet_id: u64,
    pub user: usize,
    pub arrival_slot: u64,
    pub delay_ms: f64,
    /// The packet had already been flagged as late while queued.
    #[serde(skip)]
    pub flagged: bool,
}

/// Smallest `k` with `P(X ≤ k) ≥ u` for `X ~ Poisson(lambda)`.
pub fn poisson_inverse(lambda: f64, u: f64) -> u32 {
    if !(lambda > 0.0) {
        return 0;
    }
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while cdf < u && k < 10_000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            // Tail underflow; the remaining mass is below double precision.
            break;
        }
    }
    k
}

/// Per-user arrival streams.
#[derive(Debug, Clone)]
pub struct TrafficSource {
    config: TrafficConfig,
    slot_ms: f64,
    streams: Vec<ChaCha8Rng>,
    enabled: Vec<bool>,
    next_id: u64,
}

impl TrafficSource {
    /// `enabled[n] = false` keeps user `n` silent while still advancing its
    /// stream, so enabling a different subset does not reshuffle the others.
    pub fn new(config: TrafficConfig, slot_ms: f64, seed: u64, enabled: Vec<bool>) -> Self {
        let streams = (0..enabled.len())
            .map(|n| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1000 + n as u64);
                rng
            })
            .collect();
        Self { config, slot_ms, streams, enabled, next_id: 0 }
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    pub fn generate_arrivals(&mut self, slot: u64) -> Vec<Packet> {
        let lambda = self.config.rate_per_slot(self.slot_ms);
        let bits = self.config.packet_bits();
        let mut out = Vec::new();
        for (user, rng) in self.streams.iter_mut().enumerate() {
            let u: f64 = rng.random();
            if !self.enabled[user] {
                continue;
            }
            for _ in 0..poisson_inverse(lambda, u) {
                out.push(Packet {
                    id: self.next_id,
                    user,
                    arrival_slot: slot,
                    size: bits,
                    remaining: bits,
                    violated: false,
                });
                self.next_id += 1;
            }
        }
        out
    }
}

/// One-off arrivals for a single slot from an arbitrary stream, one uniform per user.
pub fn generate_arrivals<R: Rng + ?Sized>(
    config: &TrafficConfig,
    users: usize,
    slot_ms: f64,
    rng: &mut R,
    slot: u64,
    next_id: &mut u64,
) -> Vec<Packet> {
    let lambda = config.rate_per_slot(slot_ms);
    let bits = config.packet_bits();
    let mut out = Vec::new();
    for user in 0..users {
        let u: f64 = rng.random();
        for _ in 0..poisson_inverse(lambda, u) {
            out.push(Packet { id: *next_id, user, arrival_slot: slot, size: bits, remaining: bits, violated: false });
            *next_id += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct QueueState {
    pub queues: Vec<VecDeque<Packet>>,
    pub completed: Vec<DelayRecord>,
    /// Completions in the current slot.
    pub recent: Vec<DelayRecord>,
    pub arrived_bits: u64,
    pub drained_bits: u64,
    pub arrived_packets: u64,
    pub violated_packets: u64,
}

impl QueueState {
    pub fn new(users: usize) -> Self {
        Self { queues: vec![VecDeque::new(); users], ..Self::default() }
    }

    /// Forgets the previous slot's completions.
    pub fn begin_slot(&mut self) {
        self.recent.clear();
    }

    pub fn push(&mut self, packet: Packet) {
        self.arrived_bits += packet.size;
        self.arrived_packets += 1;
        self.queues[packet.user].push_back(packet);
    }

    pub fn has_backlog(&self, user: usize) -> bool {
        !self.queues[user].is_empty()
    }

    /// Drains the head of `user`'s queue for `budget_ms` at `rate` bits/s.
    /// A packet finishing `t` ms into slot `now` records
    /// `(now − arrival_slot)·slot_ms + t` as its delay.
    pub fn serve(&mut self, user: usize, rate: f64, budget_ms: f64, slot_ms: f64, now: u64) -> (u64, Vec<DelayRecord>) {
        let capacity = (rate * budget_ms * 1e-3).floor();
        if !(capacity >= 1.0) {
            return (0, Vec::new());
        }
        let mut left = capacity as u64;
        let mut drained = 0u64;
        let mut done = Vec::new();
        let queue = &mut self.queues[user];
        while left > 0 {
            let Some(head) = queue.front_mut() else { break };
            let take = head.remaining.min(left);
            head.remaining -= take;
            left -= take;
            drained += take;
            if head.remaining == 0 {
                let p = queue.pop_front().expect("front exists");
                let in_slot_ms = drained as f64 / rate * 1e3;
                let record = DelayRecord {
                    packet_id: p.id,
                    user,
                    arrival_slot: p.arrival_slot,
                    delay_ms: (now - p.arrival_slot) as f64 * slot_ms + in_slot_ms,
                    flagged: p.violated,
                };
                done.push(record);
            }
        }
        self.drained_bits += drained;
        self.completed.extend_from_slice(&done);
        self.recent.extend_from_slice(&done);
        (drained, done)
    }

    pub fn pending_load(&self) -> u64 {
        pending_load(&self.queues)
    }

    /// Worst age among queued packets at `now` and this slot's completions.
    pub fn max_outstanding_delay(&self, now: u64, slot_ms: f64) -> f64 {
        let queued = self
            .queues
            .iter()
            .flat_map(|q| q.front())
            .map(|p| now.saturating_sub(p.arrival_slot) as f64 * slot_ms)
            .fold(0.0, f64::max);
        self.recent.iter().map(|r| r.delay_ms).fold(queued, f64::max)
    }

    /// Flags packets whose delay reached `d_max` for the first time; returns
    /// how many were newly flagged.
    pub fn mark_violations(&mut self, now: u64, slot_ms: f64, d_max: f64) -> u64 {
        let mut count = 0;
        for q in &mut self.queues {
            for p in q.iter_mut() {
                if !p.violated && now.saturating_sub(p.arrival_slot) as f64 * slot_ms >= d_max {
                    p.violated = true;
                    count += 1;
                }
            }
        }
        for r in &mut self.recent {
            if r.delay_ms >= d_max && !r.flagged {
                r.flagged = true;
                count += 1;
            }
        }
        self.violated_packets += count;
        count
    }
}

pub fn pending_load(queues: &[VecDeque<Packet>]) -> u64 {
    queues.iter().flatten().map(|p| p.remaining).sum()
}
