use std::collections::HashMap;

use crate::model::{DeviceId, Position, Rsu, RsuId};

/// Uniform grid over device and RSU positions.
///
/// The effective cell size is never smaller than the largest radio range in
/// the world, so every in-range candidate lies in the 3x3 block of cells
/// around the query point.
#[derive(Debug, Clone)]
pub struct CoverageIndex {
    cell_size: f64,
    device_cells: HashMap<(i64, i64), Vec<DeviceId>>,
    devices: Vec<(Position, f64)>,
    rsu_cells: HashMap<(i64, i64), Vec<RsuId>>,
    rsus: Vec<(Position, f64)>,
}

impl CoverageIndex {
    pub const DEFAULT_CELL_SIZE: f64 = 350.0;

    /// Builds the RSU part of the index. `max_device_range` widens the cells
    /// when devices reach further than any RSU.
    pub fn new(cell_size: f64, rsus: &[Rsu], max_device_range: f64) -> Self {
        let max_rsu = rsus.iter().map(|r| r.range).fold(0.0, f64::max);
        let cell_size = cell_size.max(max_rsu).max(max_device_range).max(f64::MIN_POSITIVE);
        let mut index = Self {
            cell_size,
            device_cells: HashMap::new(),
            devices: Vec::new(),
            rsu_cells: HashMap::new(),
            rsus: rsus.iter().map(|r| (r.position, r.range)).collect(),
        };
        for (id, (pos, _)) in index.rsus.iter().enumerate() {
            let cell = index.cell_of(pos);
            index.rsu_cells.entry(cell).or_default().push(id);
        }
        index
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn cell_of(&self, p: &Position) -> (i64, i64) {
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
        )
    }

    /// Replaces all device entries. `devices[i]` is `(position, range)` of
    /// device `i`.
    pub fn rebuild_devices(&mut self, devices: &[(Position, f64)]) {
        for cell in self.device_cells.values_mut() {
            cell.clear();
        }
        self.devices.clear();
        self.devices.extend_from_slice(devices);
        debug_assert!(
            devices.iter().all(|(_, r)| *r <= self.cell_size),
            "device range exceeds cell size"
        );
        for (id, (pos, _)) in devices.iter().enumerate() {
            let cell = self.cell_of(pos);
            self.device_cells.entry(cell).or_default().push(id);
        }
    }

    pub fn device_position(&self, id: DeviceId) -> Position {
        self.devices[id].0
    }

    fn neighborhood(&self, p: &Position) -> impl Iterator<Item = (i64, i64)> {
        let (cx, cy) = self.cell_of(p);
        (-1..=1).flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
    }

    /// Nearest other device within `min(range_me, range_other)`; ties go to
    /// the smaller id.
    pub fn nearest_device_in_range(&self, me: DeviceId) -> Option<(DeviceId, f64)> {
        let (pos, my_range) = self.devices[me];
        let mut best: Option<(DeviceId, f64)> = None;
        for cell in self.neighborhood(&pos) {
            let Some(ids) = self.device_cells.get(&cell) else {
                continue;
            };
            for &j in ids {
                if j == me {
                    continue;
                }
                let (other, other_range) = self.devices[j];
                let d = pos.distance(&other);
                if d <= my_range.min(other_range) && is_better(d, j, best) {
                    best = Some((j, d));
                }
            }
        }
        best
    }

    /// Nearest RSU whose own range covers `pos`; ties go to the smaller id.
    pub fn nearest_rsu_at(&self, pos: &Position) -> Option<(RsuId, f64)> {
        let mut best: Option<(RsuId, f64)> = None;
        for cell in self.neighborhood(pos) {
            let Some(ids) = self.rsu_cells.get(&cell) else {
                continue;
            };
            for &j in ids {
                let (rsu_pos, range) = self.rsus[j];
                let d = pos.distance(&rsu_pos);
                if d <= range && is_better(d, j, best) {
                    best = Some((j, d));
                }
            }
        }
        best
    }

    pub fn nearest_rsu_in_range(&self, me: DeviceId) -> Option<(RsuId, f64)> {
        self.nearest_rsu_at(&self.devices[me].0)
    }
}

fn is_better(d: f64, id: usize, best: Option<(usize, f64)>) -> bool {
    match best {
        None => true,
        Some((bid, bd)) => d < bd || (d == bd && id < bid),
    }
}
