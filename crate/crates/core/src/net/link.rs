//! Simulated datagram link with latency, jitter, loss and optional reordering.
//!
//! The link is a logical event queue keyed on simulation time in
//! microseconds; nothing here reads the wall clock.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub one_way_latency_ms: f64,
    /// Half-width of the uniform jitter distribution.
    pub jitter_ms: f64,
    pub loss_rate: f64,
    pub allow_reorder: bool,
    pub rng_seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            one_way_latency_ms: 0.0,
            jitter_ms: 0.0,
            loss_rate: 0.0,
            allow_reorder: false,
            rng_seed: 0,
        }
    }
}

impl LinkModel {
    pub fn with_latency_ms(latency: f64) -> Self {
        Self {
            one_way_latency_ms: latency,
            ..Self::default()
        }
    }

    /// `loss_rate == 1.0` is accepted so tests can model a dead link.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.one_way_latency_ms >= 0.0 && self.one_way_latency_ms.is_finite()) {
            return Err(format!("latency {} ms must be >= 0", self.one_way_latency_ms));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(format!("jitter {} ms must be >= 0", self.jitter_ms));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(format!("loss rate {} must be in [0, 1]", self.loss_rate));
        }
        Ok(())
    }

    /// Earliest possible delivery delay, µs.
    pub fn min_delay_us(&self) -> u64 {
        ms_to_us((self.one_way_latency_ms - self.jitter_ms).max(0.0))
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub sender: String,
    pub bytes: Vec<u8>,
    pub sent_us: u64,
    pub deliver_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct SimLink {
    model: LinkModel,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), Datagram>,
    last_delivery_us: BTreeMap<String, u64>,
    next_order: u64,
    stats: LinkStats,
}

impl SimLink {
    pub fn new(model: LinkModel) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(model.rng_seed),
            model,
            queue: BTreeMap::new(),
            last_delivery_us: BTreeMap::new(),
            next_order: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Changes latency/jitter/loss for future sends; the RNG stream continues.
    pub fn set_model(&mut self, model: LinkModel) {
        self.model = LinkModel {
            rng_seed: self.model.rng_seed,
            ..model
        };
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Schedules `bytes` for delivery. Returns the delivery time, or `None`
    /// if the datagram was dropped.
    pub fn link_send(&mut self, sender: &str, bytes: Vec<u8>, now_us: u64) -> Option<u64> {
        self.stats.sent += 1;
        if self.model.loss_rate > 0.0 && self.rng.gen::<f64>() < self.model.loss_rate {
            self.stats.dropped += 1;
            return None;
        }
        let latency_us = ms_to_us(self.model.one_way_latency_ms) as i64;
        let jitter_us = ms_to_us(self.model.jitter_ms) as i64;
        let offset = if jitter_us > 0 {
            self.rng.gen_range(-jitter_us..=jitter_us)
        } else {
            0
        };
        let mut deliver_us = now_us + (latency_us + offset).max(0) as u64;
        if !self.model.allow_reorder {
            let last = self.last_delivery_us.entry(sender.to_string()).or_insert(0);
            deliver_us = deliver_us.max(*last);
            *last = deliver_us;
        }
        let order = self.next_order;
        self.next_order += 1;
        self.queue.insert(
            (deliver_us, order),
            Datagram {
                sender: sender.to_string(),
                bytes,
                sent_us: now_us,
                deliver_us,
            },
        );
        Some(deliver_us)
    }

    /// Removes and returns every datagram due at or before `now_us`, in
    /// delivery order (ties broken by send order).
    pub fn link_poll(&mut self, now_us: u64) -> Vec<Datagram> {
        let rest = self.queue.split_off(&(now_us + 1, 0));
        let due = std::mem::replace(&mut self.queue, rest);
        self.stats.delivered += due.len() as u64;
        due.into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_latency_delivery() {
        let mut link = SimLink::new(LinkModel::with_latency_ms(100.0));
        assert_eq!(link.link_send("a", vec![1], 1_000_000), Some(1_100_000));
        assert!(link.link_poll(1_099_999).is_empty());
        let got = link.link_poll(1_100_000);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].bytes, vec![1]);
        assert!(link.link_poll(2_000_000).is_empty());
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut link = SimLink::new(LinkModel {
            loss_rate: 1.0,
            ..LinkModel::default()
        });
        for i in 0..100 {
            assert_eq!(link.link_send("a", vec![i], i as u64), None);
        }
        assert!(link.link_poll(u64::MAX - 1).is_empty());
        assert_eq!(link.stats().dropped, 100);
    }

    #[test]
    fn fifo_without_reorder() {
        let mut link = SimLink::new(LinkModel {
            one_way_latency_ms: 20.0,
            jitter_ms: 15.0,
            rng_seed: 3,
            ..LinkModel::default()
        });
        for i in 0..500u32 {
            link.link_send("a", i.to_le_bytes().to_vec(), i as u64 * 1000);
        }
        let order: Vec<u32> = link
            .link_poll(10_000_000)
            .iter()
            .map(|d| u32::from_le_bytes(d.bytes.clone().try_into().unwrap()))
            .collect();
        assert_eq!(order, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn reorder_happens_when_allowed() {
        let mut link = SimLink::new(LinkModel {
            one_way_latency_ms: 20.0,
            jitter_ms: 15.0,
            allow_reorder: true,
            rng_seed: 3,
            ..LinkModel::default()
        });
        for i in 0..500u32 {
            let t = i as u64 * 1000;
            let at = link.link_send("a", i.to_le_bytes().to_vec(), t).unwrap();
            assert!(at >= t + link.model().min_delay_us());
        }
        let order: Vec<u32> = link
            .link_poll(10_000_000)
            .iter()
            .map(|d| u32::from_le_bytes(d.bytes.clone().try_into().unwrap()))
            .collect();
        assert_eq!(order.len(), 500);
        assert!(order.windows(2).any(|w| w[0] > w[1]));
    }
}
