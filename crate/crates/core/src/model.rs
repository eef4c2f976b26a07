//! Domain types shared by the simulator: positions, packets, device queues,
//! RSUs and link bandwidths.
//!
//! Sizes are megabits, bandwidths megabits/second, time is an integer step
//! index. Transmission times are fractional seconds and are converted to
//! fractional steps only when a packet reaches the server.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Planar position in meters (x east, y north).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

pub type DeviceId = usize;
pub type RsuId = usize;
pub type PacketId = u64;

/// A unit of measured data travelling towards the server.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub origin_device: DeviceId,
    pub created_at: u64,
    pub size: f64,
    pub hop_count: u32,
    /// Seconds already spent on relay hops.
    pub transit_seconds: f64,
    /// First step at which the holder may act on this packet. Relayed
    /// packets only become actionable on the step after they arrive.
    pub actionable_from: u64,
}

impl Packet {
    pub fn new(id: PacketId, origin_device: DeviceId, created_at: u64, size: f64) -> Self {
        Self {
            id,
            origin_device,
            created_at,
            size,
            hop_count: 0,
            transit_seconds: 0.0,
            actionable_from: created_at,
        }
    }

    pub fn age(&self, t: u64) -> u64 {
        t.saturating_sub(self.created_at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

/// Queue and radio state of one monitoring device.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: DeviceId,
    /// Queue storage in megabits.
    pub capacity: f64,
    /// Wi-Fi range in meters.
    pub range: f64,
    queue: VecDeque<Packet>,
    queued_size: f64,
}

impl DeviceState {
    pub fn new(id: DeviceId, capacity: f64, range: f64) -> Self {
        Self {
            id,
            capacity,
            range,
            queue: VecDeque::new(),
            queued_size: 0.0,
        }
    }

    pub fn queue(&self) -> &VecDeque<Packet> {
        &self.queue
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn queued_size(&self) -> f64 {
        self.queued_size
    }

    /// Free storage, `capacity - sum(queued sizes)`, clamped to `[0, capacity]`.
    pub fn remaining_capacity(&self) -> f64 {
        (self.capacity - self.queued_size).clamp(0.0, self.capacity)
    }

    pub fn can_hold(&self, size: f64) -> bool {
        self.remaining_capacity() >= size
    }

    /// Appends a freshly generated packet at the tail, or rejects it when the
    /// queue cannot hold it. A rejected packet leaves the device untouched.
    pub fn enqueue(&mut self, packet: Packet) -> EnqueueOutcome {
        debug_assert!(packet.size > 0.0);
        if !self.can_hold(packet.size) {
            return EnqueueOutcome::Dropped;
        }
        self.insert_ordered(packet);
        EnqueueOutcome::Accepted
    }

    /// Inserts a packet behind every queued packet with the same or an
    /// earlier creation step, which keeps the queue sorted by `created_at`
    /// even when relayed (older) packets arrive.
    pub(crate) fn insert_ordered(&mut self, packet: Packet) {
        let at = self
            .queue
            .iter()
            .rposition(|p| p.created_at <= packet.created_at)
            .map_or(0, |i| i + 1);
        self.queued_size += packet.size;
        self.queue.insert(at, packet);
    }

    /// Index of the oldest packet the device may act on at step `t`.
    pub fn actionable_index(&self, t: u64) -> Option<usize> {
        self.queue.iter().position(|p| p.actionable_from <= t)
    }

    pub fn actionable_count(&self, t: u64) -> usize {
        self.queue.iter().filter(|p| p.actionable_from <= t).count()
    }

    /// Removes the packet at `index`.
    pub fn take(&mut self, index: usize) -> Option<Packet> {
        let packet = self.queue.remove(index)?;
        self.queued_size -= packet.size;
        if self.queue.is_empty() {
            // Drop accumulated rounding so an empty queue reports full capacity.
            self.queued_size = 0.0;
        }
        Some(packet)
    }

    pub(crate) fn drain_all(&mut self) -> Vec<Packet> {
        self.queued_size = 0.0;
        self.queue.drain(..).collect()
    }
}

/// A fixed road-side unit with Wi-Fi coverage and a wired backhaul.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsu {
    pub id: RsuId,
    pub position: Position,
    pub range: f64,
    pub backhaul_bandwidth: f64,
}

impl Rsu {
    pub fn new(id: RsuId, position: Position, range: f64, backhaul_bandwidth: f64) -> Result<Self, ModelError> {
        if range.is_nan() || range <= 0.0 {
            return Err(ModelError::NonPositive("rsu range", range));
        }
        if backhaul_bandwidth.is_nan() || backhaul_bandwidth <= 0.0 {
            return Err(ModelError::NonPositive("rsu backhaul bandwidth", backhaul_bandwidth));
        }
        if !position.is_finite() {
            return Err(ModelError::NonFinitePosition);
        }
        Ok(Self {
            id,
            position,
            range,
            backhaul_bandwidth,
        })
    }
}

/// Link bandwidths in megabits/second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    /// Device to server over 4G.
    pub sensor_server_mbps: f64,
    /// Device to RSU over Wi-Fi.
    pub sensor_rsu_mbps: f64,
    /// Device to device over Wi-Fi.
    pub sensor_sensor_mbps: f64,
    /// RSU to server, wired.
    pub rsu_server_mbps: f64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            sensor_server_mbps: 500.0,
            sensor_rsu_mbps: 1_000.0,
            sensor_sensor_mbps: 1_000.0,
            rsu_server_mbps: 10_000.0,
        }
    }
}

/// Seconds needed to push `size` megabits through a `bandwidth` Mb/s link.
pub fn transmission_latency(size: f64, bandwidth: f64) -> Result<f64, ModelError> {
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(ModelError::NonPositive("bandwidth", bandwidth));
    }
    Ok(size / bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device_with(n: usize, size: f64, capacity: f64) -> DeviceState {
        let mut d = DeviceState::new(0, capacity, 120.0);
        for i in 0..n {
            assert_eq!(
                d.enqueue(Packet::new(i as u64, 0, i as u64, size)),
                EnqueueOutcome::Accepted
            );
        }
        d
    }

    #[test]
    fn remaining_capacity_examples() {
        assert_eq!(device_with(0, 1.0, 25.0).remaining_capacity(), 25.0);
        assert_eq!(device_with(25, 1.0, 25.0).remaining_capacity(), 0.0);
        assert_eq!(device_with(3, 1.0, 25.0).remaining_capacity(), 22.0);
    }

    #[test]
    fn enqueue_respects_capacity() {
        let mut d = device_with(3, 1.0, 25.0);
        assert_eq!(d.enqueue(Packet::new(99, 0, 5, 1.0)), EnqueueOutcome::Accepted);

        let mut full = device_with(25, 1.0, 25.0);
        assert_eq!(full.enqueue(Packet::new(99, 0, 30, 1.0)), EnqueueOutcome::Dropped);
        assert_eq!(full.queue_len(), 25);

        let mut half = device_with(0, 1.0, 0.5);
        assert_eq!(half.remaining_capacity(), 0.5);
        assert_eq!(half.enqueue(Packet::new(1, 0, 0, 1.0)), EnqueueOutcome::Dropped);
        assert!(half.is_empty());
    }

    #[test]
    fn relayed_packets_keep_queue_sorted() {
        let mut d = device_with(0, 1.0, 25.0);
        d.enqueue(Packet::new(0, 0, 4, 1.0));
        d.enqueue(Packet::new(1, 0, 6, 1.0));
        d.insert_ordered(Packet::new(7, 3, 5, 1.0));
        d.insert_ordered(Packet::new(8, 3, 1, 1.0));
        d.insert_ordered(Packet::new(9, 3, 6, 1.0));
        let created: Vec<u64> = d.queue().iter().map(|p| p.created_at).collect();
        assert_eq!(created, vec![1, 4, 5, 6, 6]);
        // Equal creation steps keep arrival order.
        assert_eq!(d.queue()[3].id, 1);
        assert_eq!(d.queue()[4].id, 9);
    }

    #[test]
    fn transmission_latency_examples() {
        assert!((transmission_latency(1.0, 500.0).unwrap() - 0.002).abs() < 1e-15);
        assert!((transmission_latency(1.0, 10_000.0).unwrap() - 0.0001).abs() < 1e-15);
        assert_eq!(transmission_latency(0.0, 42.0).unwrap(), 0.0);
        assert!(transmission_latency(1.0, 0.0).is_err());
        assert!(transmission_latency(1.0, -3.0).is_err());
    }

    #[test]
    fn rsu_rejects_bad_parameters() {
        let p = Position::new(0.0, 0.0);
        assert!(Rsu::new(0, p, 0.0, 1.0).is_err());
        assert!(Rsu::new(0, p, 350.0, 0.0).is_err());
        assert!(Rsu::new(0, Position::new(f64::NAN, 0.0), 350.0, 1.0).is_err());
        assert!(Rsu::new(0, p, 350.0, 10_000.0).is_ok());
    }

    #[test]
    fn take_restores_capacity() {
        let mut d = device_with(3, 0.1, 1.0);
        while !d.is_empty() {
            d.take(0);
        }
        assert_eq!(d.remaining_capacity(), 1.0);
    }
}
