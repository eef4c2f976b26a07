//! Packet accounting and the four evaluation ratios.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::SimError;
use crate::model::{DeviceId, PacketId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryRoute {
    #[serde(rename = "direct_4g")]
    Direct4G,
    ViaRsu,
    #[serde(rename = "via_relay_then_4g")]
    ViaRelayThen4G,
    ViaRelayThenRsu,
    Dropped,
    /// Still queued when the run ended.
    InFlight,
}

impl DeliveryRoute {
    pub fn is_delivered(self) -> bool {
        !matches!(self, DeliveryRoute::Dropped | DeliveryRoute::InFlight)
    }

    pub fn is_4g(self) -> bool {
        matches!(self, DeliveryRoute::Direct4G | DeliveryRoute::ViaRelayThen4G)
    }

    pub fn is_rsu(self) -> bool {
        matches!(self, DeliveryRoute::ViaRsu | DeliveryRoute::ViaRelayThenRsu)
    }

    pub fn is_relayed(self) -> bool {
        matches!(self, DeliveryRoute::ViaRelayThen4G | DeliveryRoute::ViaRelayThenRsu)
    }
}

/// Fate of one packet. Delivered packets carry a delivery time and latency
/// in (fractional) steps; dropped and in-flight packets carry neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub packet_id: PacketId,
    pub origin_device: DeviceId,
    pub route: DeliveryRoute,
    pub created_at: u64,
    pub delivered_at: Option<f64>,
    #[serde(rename = "latency_steps")]
    pub latency: Option<f64>,
    pub hop_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub generated: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub via_4g: u64,
    pub via_rsu: u64,
    pub via_relay: u64,
    /// Delivered packets whose latency exceeds `delta`.
    pub delayed: u64,
    pub delta: u64,
    /// `latency_histogram[k]` counts delivered latencies in `[k, k + 1)` steps.
    pub latency_histogram: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub r_drop: f64,
    pub r_delay: f64,
    pub r_server: f64,
    pub r_rsu: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no packets were generated")]
    NoPackets,
    #[error("no delivered packets")]
    NoDeliveries,
    #[error("percentile must be in [0, 1]")]
    BadQuantile,
}

impl RunMetrics {
    pub fn new(delta: u64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    /// Counts one more generated packet. Its fate is recorded separately.
    pub fn count_generated(&mut self) {
        self.generated += 1;
    }

    pub fn record(&mut self, r: &DeliveryRecord) {
        match r.route {
            DeliveryRoute::Dropped => self.dropped += 1,
            DeliveryRoute::InFlight => self.in_flight += 1,
            route => {
                self.delivered += 1;
                if route.is_4g() {
                    self.via_4g += 1;
                } else {
                    self.via_rsu += 1;
                }
                if route.is_relayed() {
                    self.via_relay += 1;
                }
                let latency = r.latency.unwrap_or(0.0);
                if latency > self.delta as f64 {
                    self.delayed += 1;
                }
                let bucket = latency.max(0.0).floor() as usize;
                if self.latency_histogram.len() <= bucket {
                    self.latency_histogram.resize(bucket + 1, 0);
                }
                self.latency_histogram[bucket] += 1;
            }
        }
    }

    /// Rebuilds the counters from a complete record list (one record per
    /// generated packet, in-flight packets included).
    pub fn from_records(records: &[DeliveryRecord], delta: u64) -> Self {
        let mut m = Self::new(delta);
        for r in records {
            m.count_generated();
            m.record(r);
        }
        m
    }

    /// Packets whose fate is settled: dropped or delivered.
    pub fn resolved(&self) -> u64 {
        self.generated - self.in_flight
    }

    /// `r_drop` is over all generated packets. The delivery ratios exclude
    /// packets still queued at the end of the run.
    pub fn rates(&self) -> Result<Rates, MetricsError> {
        if self.generated == 0 {
            return Err(MetricsError::NoPackets);
        }
        let resolved = self.resolved();
        let over_resolved = |x: u64| {
            if resolved == 0 {
                0.0
            } else {
                x as f64 / resolved as f64
            }
        };
        Ok(Rates {
            r_drop: self.dropped as f64 / self.generated as f64,
            r_delay: over_resolved(self.delayed),
            r_server: over_resolved(self.via_4g),
            r_rsu: over_resolved(self.via_rsu),
        })
    }
}

/// Nearest-rank percentile of delivered latencies, `q` in `[0, 1]`.
pub fn latency_percentile(records: &[DeliveryRecord], q: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(MetricsError::BadQuantile);
    }
    let mut latencies: Vec<f64> = records
        .iter()
        .filter(|r| r.route.is_delivered())
        .filter_map(|r| r.latency)
        .collect();
    if latencies.is_empty() {
        return Err(MetricsError::NoDeliveries);
    }
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(latencies[rank - 1])
}

/// The metrics JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub generated: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub via_4g: u64,
    pub via_rsu: u64,
    pub via_relay: u64,
    pub delayed: u64,
    pub r_drop: f64,
    pub r_delay: f64,
    pub r_server: f64,
    pub r_rsu: f64,
    pub p995_latency_steps: Option<f64>,
}

impl MetricsReport {
    pub fn new(m: &RunMetrics, records: &[DeliveryRecord]) -> Self {
        let rates = m.rates().unwrap_or(Rates {
            r_drop: 0.0,
            r_delay: 0.0,
            r_server: 0.0,
            r_rsu: 0.0,
        });
        Self {
            generated: m.generated,
            dropped: m.dropped,
            delivered: m.delivered,
            in_flight: m.in_flight,
            via_4g: m.via_4g,
            via_rsu: m.via_rsu,
            via_relay: m.via_relay,
            delayed: m.delayed,
            r_drop: rates.r_drop,
            r_delay: rates.r_delay,
            r_server: rates.r_server,
            r_rsu: rates.r_rsu,
            p995_latency_steps: latency_percentile(records, 0.995).ok(),
        }
    }
}

pub fn write_records(path: &Path, records: &[DeliveryRecord]) -> Result<(), SimError> {
    let csv_err = |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DeliveryRecord>, SimError> {
    let csv_err = |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, route: DeliveryRoute, latency: Option<f64>) -> DeliveryRecord {
        DeliveryRecord {
            packet_id: id,
            origin_device: 0,
            route,
            created_at: 0,
            delivered_at: latency,
            latency,
            hop_count: route.is_relayed() as u32,
        }
    }

    #[test]
    fn all_on_time_via_rsu() {
        let records: Vec<_> = (0..10).map(|i| rec(i, DeliveryRoute::ViaRsu, Some(0.5))).collect();
        let r = RunMetrics::from_records(&records, 5).rates().unwrap();
        assert_eq!(
            r,
            Rates {
                r_drop: 0.0,
                r_delay: 0.0,
                r_server: 0.0,
                r_rsu: 1.0
            }
        );
    }

    #[test]
    fn arithmetic_example() {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(rec(i, DeliveryRoute::Dropped, None));
        }
        for i in 10..50 {
            records.push(rec(i, DeliveryRoute::Direct4G, Some(0.01)));
        }
        for i in 50..100 {
            records.push(rec(i, DeliveryRoute::ViaRsu, Some(1.0)));
        }
        let m = RunMetrics::from_records(&records, 5);
        let r = m.rates().unwrap();
        assert!((r.r_drop - 0.10).abs() < 1e-15);
        assert!((r.r_server - 0.40).abs() < 1e-15);
        assert!((r.r_rsu - 0.50).abs() < 1e-15);
        assert_eq!(m.generated, m.dropped + m.delivered + m.in_flight);
    }

    #[test]
    fn relay_and_delay_accounting() {
        let records = vec![
            rec(0, DeliveryRoute::ViaRelayThen4G, Some(6.0)),
            rec(1, DeliveryRoute::ViaRelayThenRsu, Some(5.0)),
            rec(2, DeliveryRoute::InFlight, None),
            rec(3, DeliveryRoute::Direct4G, Some(5.0001)),
        ];
        let m = RunMetrics::from_records(&records, 5);
        assert_eq!((m.via_4g, m.via_rsu, m.via_relay), (2, 1, 2));
        assert_eq!(m.delayed, 2);
        assert_eq!(m.in_flight, 1);
        assert_eq!(m.latency_histogram, vec![0, 0, 0, 0, 0, 2, 1]);
        let r = m.rates().unwrap();
        assert!((r.r_delay - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rates_need_packets() {
        assert_eq!(RunMetrics::new(5).rates(), Err(MetricsError::NoPackets));
    }

    #[test]
    fn percentile_examples() {
        let one = vec![rec(0, DeliveryRoute::ViaRsu, Some(3.0))];
        for q in [0.0, 0.3, 0.995, 1.0] {
            assert_eq!(latency_percentile(&one, q).unwrap(), 3.0);
        }
        let hundred: Vec<_> = (1..=100)
            .rev()
            .map(|i| rec(i, DeliveryRoute::Direct4G, Some(i as f64)))
            .collect();
        assert_eq!(latency_percentile(&hundred, 0.5).unwrap(), 50.0);
        assert_eq!(latency_percentile(&hundred, 1.0).unwrap(), 100.0);
        assert_eq!(latency_percentile(&hundred, 0.995).unwrap(), 100.0);
        assert_eq!(latency_percentile(&[], 0.5), Err(MetricsError::NoDeliveries));
        let dropped = vec![rec(0, DeliveryRoute::Dropped, None)];
        assert_eq!(latency_percentile(&dropped, 0.5), Err(MetricsError::NoDeliveries));
    }

    #[test]
    fn records_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let records = vec![
            DeliveryRecord {
                packet_id: 7,
                origin_device: 2,
                route: DeliveryRoute::ViaRelayThenRsu,
                created_at: 3,
                delivered_at: Some(5.25),
                latency: Some(2.25),
                hop_count: 1,
            },
            rec(8, DeliveryRoute::Dropped, None),
        ];
        write_records(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "packet_id,origin_device,route,created_at,delivered_at,latency_steps,hop_count\n\
             7,2,via_relay_then_rsu,3,5.25,2.25,1\n\
             8,0,dropped,0,,,0\n"
        );
        assert_eq!(read_records(&path).unwrap(), records);
    }
}
