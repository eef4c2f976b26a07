use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TraceError;
use crate::model::{DeviceId, Position};

/// Time-stamped positions of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub device_id: DeviceId,
    samples: Vec<(u64, Position)>,
}

impl Trace {
    pub fn new(device_id: DeviceId, samples: Vec<(u64, Position)>) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::Empty(device_id));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(TraceError::NotIncreasing {
                    device: device_id,
                    prev: w[0].0,
                    next: w[1].0,
                });
            }
        }
        if samples.iter().any(|(_, p)| !p.is_finite()) {
            return Err(TraceError::NonFinite(device_id));
        }
        Ok(Self { device_id, samples })
    }

    pub fn samples(&self) -> &[(u64, Position)] {
        &self.samples
    }

    /// Linear interpolation between the bracketing samples, clamped to the
    /// first and last sample outside the sampled interval.
    pub fn position_at(&self, t: u64) -> Position {
        let idx = self.samples.partition_point(|(ts, _)| *ts <= t);
        if idx == 0 {
            return self.samples[0].1;
        }
        let (t0, p0) = self.samples[idx - 1];
        if t0 == t || idx == self.samples.len() {
            return p0;
        }
        let (t1, p1) = self.samples[idx];
        let f = (t - t0) as f64 / (t1 - t0) as f64;
        Position::new(p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    device_id: usize,
    time_step: u64,
    x_m: f64,
    y_m: f64,
}

/// Reads a trace CSV (`device_id,time_step,x_m,y_m`, sorted by device then
/// step). Device ids must be `0..n`.
pub fn read_traces(path: &Path) -> Result<Vec<Trace>, TraceError> {
    let csv_err = |source| TraceError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut grouped: Vec<Vec<(u64, Position)>> = Vec::new();
    for row in reader.deserialize::<TraceRow>() {
        let row = row.map_err(csv_err)?;
        if row.device_id == grouped.len() {
            grouped.push(Vec::new());
        } else if row.device_id + 1 != grouped.len() {
            return Err(TraceError::BadIds {
                what: "device",
                expected: grouped.len(),
                found: row.device_id,
            });
        }
        grouped[row.device_id].push((row.time_step, Position::new(row.x_m, row.y_m)));
    }
    grouped
        .into_iter()
        .enumerate()
        .map(|(id, samples)| Trace::new(id, samples))
        .collect()
}

pub fn write_traces(path: &Path, traces: &[Trace]) -> Result<(), TraceError> {
    let csv_err = |source| TraceError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    for trace in traces {
        for &(time_step, p) in trace.samples() {
            writer
                .serialize(TraceRow {
                    device_id: trace.device_id,
                    time_step,
                    x_m: p.x,
                    y_m: p.y,
                })
                .map_err(csv_err)?;
        }
    }
    writer.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}
