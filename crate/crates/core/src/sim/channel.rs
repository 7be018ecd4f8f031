//! Simulated links. Times are virtual microseconds.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{decode_pointer, POINTER_FRAME_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub latency_mean_ms: f64,
    /// Per-message latency is uniform in `mean ± jitter`.
    pub latency_jitter_ms: f64,
    /// Probability that a datagram is lost. The reliable channel never
    /// loses frames; a lost segment costs it one retransmission delay.
    pub loss_rate: f64,
    /// Probability that a message is held to the maximum latency, letting
    /// later messages overtake it on the unreliable channel.
    pub reorder_rate: f64,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { latency_mean_ms: 20.0, latency_jitter_ms: 0.0, loss_rate: 0.0, reorder_rate: 0.0, rng_seed: 0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.latency_mean_ms >= 0.0 && self.latency_jitter_ms >= 0.0) || !self.latency_mean_ms.is_finite() {
            return Err(format!("latency must be non-negative, got {} ± {}", self.latency_mean_ms, self.latency_jitter_ms));
        }
        if self.latency_jitter_ms > self.latency_mean_ms {
            return Err("latency jitter exceeds the mean".into());
        }
        if !prob(self.loss_rate) || !prob(self.reorder_rate) {
            return Err(format!("rates must lie in [0, 1], got loss {} reorder {}", self.loss_rate, self.reorder_rate));
        }
        Ok(())
    }

    fn min_us(&self) -> u64 {
        ms_to_us(self.latency_mean_ms - self.latency_jitter_ms)
    }

    fn max_us(&self) -> u64 {
        ms_to_us(self.latency_mean_ms + self.latency_jitter_ms)
    }

    fn sample_latency(&self, rng: &mut ChaCha8Rng) -> u64 {
        let (lo, hi) = (self.min_us(), self.max_us());
        if self.reorder_rate > 0.0 && rng.random_bool(self.reorder_rate) {
            hi
        } else if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms.max(0.0) * 1000.0).round() as u64
}

/// Deterministic, explicit drop decisions layered over random loss.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum DropRule {
    #[default]
    None,
    All,
    /// Zero-based datagram indices on this channel.
    Indices { indices: BTreeSet<u64> },
    /// Every datagram whose drawing flag equals `drawing`.
    DrawingFlag { drawing: bool },
}

impl DropRule {
    fn drops(&self, index: u64, bytes: &[u8]) -> bool {
        match self {
            DropRule::None => false,
            DropRule::All => true,
            DropRule::Indices { indices } => indices.contains(&index),
            DropRule::DrawingFlag { drawing } => decode_pointer(bytes).is_ok_and(|d| d.drawing == *drawing),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatagramFate {
    DeliverAt(u64),
    LostRandom,
    LostByRule,
}

/// Datagram link: may lose or reorder, never duplicates or corrupts.
#[derive(Debug, Clone)]
pub struct UnreliableChannel {
    config: ChannelConfig,
    rule: DropRule,
    rng: ChaCha8Rng,
    sent: u64,
}

impl UnreliableChannel {
    pub fn new(config: ChannelConfig) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(config.rng_seed), config, rule: DropRule::None, sent: 0 }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    /// Decides the fate of the next datagram. `exempt_random` skips random
    /// loss; explicit rules still apply.
    pub fn send(&mut self, now_us: u64, bytes: &[u8; POINTER_FRAME_LEN], exempt_random: bool) -> DatagramFate {
        let index = self.sent;
        self.sent += 1;
        // Draw every random number regardless of outcome so rule changes
        // do not shift the stream.
        let lost = self.config.loss_rate > 0.0 && self.rng.random_bool(self.config.loss_rate);
        let latency = self.config.sample_latency(&mut self.rng);
        if self.rule.drops(index, bytes) {
            DatagramFate::LostByRule
        } else if lost && !exempt_random {
            DatagramFate::LostRandom
        } else {
            DatagramFate::DeliverAt(now_us + latency)
        }
    }
}

/// Replaces the channel's explicit drop rule.
pub fn inject_loss_pattern(channel: UnreliableChannel, rule: DropRule) -> UnreliableChannel {
    UnreliableChannel { rule, ..channel }
}

/// Stream link: every byte arrives exactly once and in order. A frame is
/// delivered in two segments split at a random point so the receiver's
/// reassembly is exercised.
#[derive(Debug, Clone)]
pub struct ReliableChannel {
    config: ChannelConfig,
    rng: ChaCha8Rng,
    last_delivery_us: u64,
}

impl ReliableChannel {
    pub fn new(config: ChannelConfig) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(config.rng_seed), config, last_delivery_us: 0 }
    }

    /// Returns the segments with their delivery times, in send order.
    pub fn send(&mut self, now_us: u64, frame: &[u8]) -> Vec<(u64, Vec<u8>)> {
        let mut at = now_us + self.config.sample_latency(&mut self.rng);
        if self.config.loss_rate > 0.0 && self.rng.random_bool(self.config.loss_rate) {
            at += 2 * ms_to_us(self.config.latency_mean_ms);
        }
        let at = at.max(self.last_delivery_us);
        self.last_delivery_us = at;
        if frame.len() < 2 {
            return vec![(at, frame.to_vec())];
        }
        let split = self.rng.random_range(1..frame.len());
        vec![(at, frame[..split].to_vec()), (at, frame[split..].to_vec())]
    }
}
