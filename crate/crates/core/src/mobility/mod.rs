//! Device movement, RSU placement and radio-range queries.

mod coverage;
mod synthetic;
mod trace;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use coverage::CoverageIndex;
pub use synthetic::{generate_synthetic_traces, synthetic_routes, Route, RouteShape, SyntheticTraceSpec};
pub use trace::{read_traces, write_traces, Trace};

use crate::error::TraceError;
use crate::model::{Position, Rsu};

#[derive(Debug, Serialize, Deserialize)]
struct RsuRow {
    rsu_id: usize,
    x_m: f64,
    y_m: f64,
    range_m: f64,
}

/// Reads an RSU placement CSV (`rsu_id,x_m,y_m,range_m`). Ids must be `0..m`
/// in order. The backhaul bandwidth is not part of the file.
pub fn read_rsus(path: &Path, backhaul_mbps: f64) -> Result<Vec<Rsu>, TraceError> {
    let csv_err = |source| TraceError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rsus = Vec::new();
    for row in reader.deserialize::<RsuRow>() {
        let row = row.map_err(csv_err)?;
        if row.rsu_id != rsus.len() {
            return Err(TraceError::BadIds {
                what: "rsu",
                expected: rsus.len(),
                found: row.rsu_id,
            });
        }
        rsus.push(Rsu::new(
            row.rsu_id,
            Position::new(row.x_m, row.y_m),
            row.range_m,
            backhaul_mbps,
        )?);
    }
    Ok(rsus)
}

pub fn write_rsus(path: &Path, rsus: &[Rsu]) -> Result<(), TraceError> {
    let csv_err = |source| TraceError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    for r in rsus {
        writer
            .serialize(RsuRow {
                rsu_id: r.id,
                x_m: r.position.x,
                y_m: r.position.y,
                range_m: r.range,
            })
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}
