//! Tabular Q-learning for a single device: state discretisation, the
//! priority factor θ, the reward function, ε-greedy selection and the
//! Bellman update.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LearnError, SimError};

/// The four things a device can do with the packet at the head of its queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    SendServer,
    SendRsu,
    SendDevice,
}

impl Action {
    /// Fixed order, also used to break greedy ties.
    pub const ALL: [Action; 4] = [Action::Keep, Action::SendServer, Action::SendRsu, Action::SendDevice];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborClass {
    NoNeighbor,
    NeighborLowerCap,
    NeighborEqualCap,
    NeighborHigherCap,
}

impl NeighborClass {
    pub const ALL: [NeighborClass; 4] = [
        NeighborClass::NoNeighbor,
        NeighborClass::NeighborLowerCap,
        NeighborClass::NeighborEqualCap,
        NeighborClass::NeighborHigherCap,
    ];

    pub fn classify(c_i: f64, neighbor: Option<f64>) -> Self {
        match neighbor {
            None => NeighborClass::NoNeighbor,
            Some(c_n) if c_n < c_i => NeighborClass::NeighborLowerCap,
            Some(c_n) if c_n > c_i => NeighborClass::NeighborHigherCap,
            Some(_) => NeighborClass::NeighborEqualCap,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscreteState {
    /// Head-packet age in steps, with `delta_threshold + 1` meaning "exceeded".
    pub delay_bucket: u32,
    pub occupancy_bucket: u32,
    pub neighbor_class: NeighborClass,
    pub rsu_in_range: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Queue capacity C* in megabits.
    pub capacity: f64,
    /// Latency threshold δ in steps.
    pub delta_threshold: u64,
    pub penalty: f64,
    /// (w_cap, w_delay) used by θ.
    pub theta_weights: (f64, f64),
    /// Number of queue-occupancy buckets L.
    pub occupancy_levels: u32,
}

impl RewardParams {
    pub fn delay_buckets(&self) -> usize {
        self.delta_threshold as usize + 2
    }

    pub fn state_count(&self) -> usize {
        self.delay_buckets() * self.occupancy_levels as usize * NeighborClass::ALL.len() * 2
    }

    pub fn state_index(&self, s: &DiscreteState) -> usize {
        let levels = self.occupancy_levels as usize;
        ((s.delay_bucket as usize * levels + s.occupancy_bucket as usize) * 4 + s.neighbor_class.index()) * 2
            + s.rsu_in_range as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which ε decays linearly from start to end.
    pub epsilon_decay_steps: u64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: 0,
        }
    }
}

impl LearnerParams {
    pub fn epsilon_at(&self, t: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || t >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let f = t as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }
}

pub fn discretize(
    delta: u64,
    c_i: f64,
    neighbor: Option<f64>,
    rsu: bool,
    params: &RewardParams,
) -> Result<DiscreteState, LearnError> {
    let capacity = params.capacity;
    if !(0.0..=capacity).contains(&c_i) {
        return Err(LearnError::CapacityOutOfRange { c: c_i, capacity });
    }
    let levels = params.occupancy_levels;
    let fill = 1.0 - c_i / capacity;
    let occupancy = ((levels as f64 * fill).floor() as u32).min(levels - 1);
    Ok(DiscreteState {
        delay_bucket: delta.min(params.delta_threshold + 1) as u32,
        occupancy_bucket: occupancy,
        neighbor_class: NeighborClass::classify(c_i, neighbor),
        rsu_in_range: rsu,
    })
}

/// Priority factor: grows towards 1 as the queue fills and the head packet
/// ages, and is 0 for an empty queue holding fresh data.
pub fn theta(c_i: f64, delta: u64, params: &RewardParams) -> f64 {
    let (w_cap, w_delay) = params.theta_weights;
    let fill = 1.0 - c_i / params.capacity;
    let age = (delta as f64 / params.delta_threshold as f64).min(1.0);
    (w_cap * fill + w_delay * age).clamp(0.0, 1.0)
}

/// Reward for the action that was actually executed.
///
/// A violation (a dropped packet, or a decision that leaves a packet past
/// its deadline) yields `-penalty` whatever the action. A relay between equally loaded devices scores 0.
pub fn reward(
    action: Action,
    c_i: f64,
    c_n: Option<f64>,
    delta: u64,
    violated: bool,
    params: &RewardParams,
) -> Result<f64, LearnError> {
    if action == Action::SendDevice && c_n.is_none() {
        return Err(LearnError::MissingNeighbor);
    }
    if violated {
        return Ok(-params.penalty);
    }
    let age_discount = 1.0 + delta as f64;
    let cap = params.capacity;
    Ok(match action {
        Action::Keep => 0.0,
        Action::SendServer => (theta(c_i, delta, params) * cap - c_i) / age_discount,
        Action::SendRsu => (cap - theta(c_i, delta, params) * c_i) / age_discount,
        Action::SendDevice => {
            let diff = c_n.expect("checked above") - c_i;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            sign / age_discount
        }
    })
}

/// Dense action-value table over the discretised state space.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    params: RewardParams,
    values: Vec<[f64; 4]>,
}

impl QTable {
    pub fn new(params: RewardParams) -> Self {
        Self {
            params,
            values: vec![[0.0; 4]; params.state_count()],
        }
    }

    pub fn params(&self) -> &RewardParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.values.len() * 4
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, s: &DiscreteState) -> &[f64; 4] {
        &self.values[self.params.state_index(s)]
    }

    pub fn row_mut(&mut self, s: &DiscreteState) -> &mut [f64; 4] {
        let i = self.params.state_index(s);
        &mut self.values[i]
    }

    pub fn get(&self, s: &DiscreteState, a: Action) -> f64 {
        self.row(s)[a.index()]
    }

    pub fn set(&mut self, s: &DiscreteState, a: Action, q: f64) {
        self.row_mut(s)[a.index()] = q;
    }

    pub fn max_q(&self, s: &DiscreteState) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, s: &DiscreteState) -> Action {
        let row = self.row(s);
        let mut best = 0;
        for i in 1..4 {
            if row[i] > row[best] {
                best = i;
            }
        }
        Action::from_index(best)
    }

    pub fn states(&self) -> impl Iterator<Item = DiscreteState> + '_ {
        let p = self.params;
        (0..p.delay_buckets() as u32).flat_map(move |d| {
            (0..p.occupancy_levels).flat_map(move |o| {
                NeighborClass::ALL.into_iter().flat_map(move |n| {
                    [false, true].into_iter().map(move |r| DiscreteState {
                        delay_bucket: d,
                        occupancy_bucket: o,
                        neighbor_class: n,
                        rsu_in_range: r,
                    })
                })
            })
        })
    }
}

/// ε-greedy choice. One uniform draw decides whether to explore; exploring
/// draws a second uniform index.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: &DiscreteState, epsilon: f64, rng: &mut R) -> Action {
    if rng.gen::<f64>() < epsilon {
        Action::from_index(rng.gen_range(0..4))
    } else {
        q.greedy(s)
    }
}

/// `Q(s,a) <- (1 - α) Q(s,a) + α (r + γ max_a' Q(s',a'))`
pub fn update(q: &mut QTable, s: &DiscreteState, a: Action, r: f64, s_next: &DiscreteState, params: &LearnerParams) {
    let target = r + params.gamma * q.max_q(s_next);
    let old = q.get(s, a);
    q.set(s, a, (1.0 - params.alpha) * old + params.alpha * target);
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRow {
    delay_bucket: u32,
    occupancy_bucket: u32,
    neighbor_class: NeighborClass,
    rsu_in_range: bool,
    action: Action,
    q_value: f64,
}

impl QTable {
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let csv_err = |source| SimError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(csv_err)?;
        for s in self.states() {
            for a in Action::ALL {
                w.serialize(SnapshotRow {
                    delay_bucket: s.delay_bucket,
                    occupancy_bucket: s.occupancy_bucket,
                    neighbor_class: s.neighbor_class,
                    rsu_in_range: s.rsu_in_range,
                    action: a,
                    q_value: self.get(&s, a),
                })
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| csv_err(e.into()))?;
        Ok(())
    }

    /// Loads a snapshot into a zeroed table for `params`. Entries missing
    /// from the file stay 0.
    pub fn read_csv(path: &Path, params: RewardParams) -> Result<QTable, SimError> {
        let csv_err = |source| SimError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut table = QTable::new(params);
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        for row in reader.deserialize::<SnapshotRow>() {
            let row = row.map_err(csv_err)?;
            if row.delay_bucket as usize >= params.delay_buckets() || row.occupancy_bucket >= params.occupancy_levels {
                return Err(LearnError::Snapshot(format!(
                    "state ({}, {}) outside the table",
                    row.delay_bucket, row.occupancy_bucket
                ))
                .into());
            }
            if !row.q_value.is_finite() {
                return Err(LearnError::Snapshot("non-finite q_value".into()).into());
            }
            let s = DiscreteState {
                delay_bucket: row.delay_bucket,
                occupancy_bucket: row.occupancy_bucket,
                neighbor_class: row.neighbor_class,
                rsu_in_range: row.rsu_in_range,
            };
            table.set(&s, row.action, row.q_value);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn params() -> RewardParams {
        RewardParams {
            capacity: 25.0,
            delta_threshold: 5,
            penalty: 100.0,
            theta_weights: (0.5, 0.5),
            occupancy_levels: 5,
        }
    }

    fn state(d: u32) -> DiscreteState {
        DiscreteState {
            delay_bucket: d,
            occupancy_bucket: 0,
            neighbor_class: NeighborClass::NoNeighbor,
            rsu_in_range: false,
        }
    }

    #[test]
    fn discretize_examples() {
        let p = params();
        assert_eq!(discretize(0, 25.0, None, false, &p).unwrap(), state(0));
        assert_eq!(discretize(10, 25.0, None, false, &p).unwrap().delay_bucket, 6);
        assert_eq!(discretize(3, 12.5, None, false, &p).unwrap().occupancy_bucket, 2);
        assert_eq!(discretize(3, 0.0, None, false, &p).unwrap().occupancy_bucket, 4);
        let s = discretize(0, 10.0, Some(10.0), true, &p).unwrap();
        assert_eq!(s.neighbor_class, NeighborClass::NeighborEqualCap);
        assert!(s.rsu_in_range);
        assert_eq!(
            discretize(0, 10.0, Some(11.0), true, &p).unwrap().neighbor_class,
            NeighborClass::NeighborHigherCap
        );
        assert_eq!(
            discretize(0, 10.0, Some(9.0), true, &p).unwrap().neighbor_class,
            NeighborClass::NeighborLowerCap
        );
        assert!(discretize(0, 25.5, None, false, &p).is_err());
        assert!(discretize(0, -0.1, None, false, &p).is_err());
    }

    #[test]
    fn state_index_is_a_bijection() {
        let p = params();
        assert_eq!(p.state_count(), 7 * 5 * 4 * 2);
        let table = QTable::new(p);
        let mut seen: Vec<usize> = table.states().map(|s| p.state_index(&s)).collect();
        assert_eq!(seen.len(), p.state_count());
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, (0..p.state_count()).collect::<Vec<_>>());
    }

    #[test]
    fn theta_examples() {
        let p = params();
        assert_eq!(theta(25.0, 0, &p), 0.0);
        assert_eq!(theta(0.0, 5, &p), 1.0);
        assert_eq!(theta(0.0, 50, &p), 1.0);
        assert!((theta(12.5, 2, &p) - (0.25 + 0.2)).abs() < 1e-15);
        let mut p10 = p;
        p10.delta_threshold = 10;
        assert!((theta(12.5, 5, &p10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reward_examples() {
        let p = params();
        assert_eq!(reward(Action::Keep, 10.0, None, 0, false, &p).unwrap(), 0.0);
        for a in Action::ALL {
            assert_eq!(reward(a, 10.0, Some(3.0), 6, true, &p).unwrap(), -100.0);
        }
        // θ = 1 at c_i = 0 and Δ = δ.
        assert_eq!(reward(Action::SendServer, 0.0, None, 5, false, &p).unwrap(), 25.0 / 6.0);
        // θ = 0 at c_i = C*, Δ = 0.
        assert_eq!(reward(Action::SendRsu, 25.0, None, 0, false, &p).unwrap(), 25.0);
        assert_eq!(reward(Action::SendDevice, 5.0, Some(9.0), 0, false, &p).unwrap(), 1.0);
        assert_eq!(reward(Action::SendDevice, 9.0, Some(5.0), 1, false, &p).unwrap(), -0.5);
        assert_eq!(reward(Action::SendDevice, 9.0, Some(9.0), 1, false, &p).unwrap(), 0.0);
        assert_eq!(
            reward(Action::SendDevice, 9.0, None, 1, false, &p),
            Err(LearnError::MissingNeighbor)
        );
    }

    #[test]
    fn greedy_and_tie_break() {
        let p = params();
        let mut q = QTable::new(p);
        let s = state(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&q, &s, 0.0, &mut rng), Action::Keep);
        *q.row_mut(&s) = [0.0, 5.0, 3.0, 1.0];
        assert_eq!(select_action(&q, &s, 0.0, &mut rng), Action::SendServer);
        *q.row_mut(&s) = [-1.0, 2.0, 2.0, 2.0];
        assert_eq!(select_action(&q, &s, 0.0, &mut rng), Action::SendServer);
    }

    #[test]
    fn update_examples() {
        let p = params();
        let lp = |alpha, gamma| LearnerParams {
            alpha,
            gamma,
            ..LearnerParams::default()
        };
        let s = state(1);
        let next = state(2);
        let mut q = QTable::new(p);
        q.set(&s, Action::SendRsu, 2.0);
        q.set(&next, Action::SendServer, 4.0);

        let mut a0 = q.clone();
        update(&mut a0, &s, Action::SendRsu, 7.0, &next, &lp(0.0, 0.9));
        assert_eq!(a0.get(&s, Action::SendRsu), 2.0);

        let mut a1 = q.clone();
        update(&mut a1, &s, Action::SendRsu, 7.0, &next, &lp(1.0, 0.0));
        assert_eq!(a1.get(&s, Action::SendRsu), 7.0);

        update(&mut q, &s, Action::SendRsu, 1.0, &next, &lp(0.1, 0.9));
        assert!((q.get(&s, Action::SendRsu) - 2.26).abs() < 1e-12);
        // Only one entry changed.
        assert_eq!(q.get(&next, Action::SendServer), 4.0);
        assert_eq!(q.get(&s, Action::Keep), 0.0);
    }

    #[test]
    fn epsilon_schedule() {
        let lp = LearnerParams {
            epsilon_start: 1.0,
            epsilon_end: 0.0,
            epsilon_decay_steps: 10,
            ..LearnerParams::default()
        };
        assert_eq!(lp.epsilon_at(0), 1.0);
        assert!((lp.epsilon_at(5) - 0.5).abs() < 1e-15);
        assert_eq!(lp.epsilon_at(10), 0.0);
        assert_eq!(lp.epsilon_at(1000), 0.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let p = params();
        let mut q = QTable::new(p);
        let s = DiscreteState {
            delay_bucket: 6,
            occupancy_bucket: 4,
            neighbor_class: NeighborClass::NeighborHigherCap,
            rsu_in_range: true,
        };
        q.set(&s, Action::SendDevice, -12.75);
        q.set(&state(0), Action::Keep, 0.1 + 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        q.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("delay_bucket,occupancy_bucket,neighbor_class,rsu_in_range,action,q_value\n"));
        assert!(text.contains("6,4,neighbor_higher_cap,true,send_device,-12.75\n"));
        assert_eq!(QTable::read_csv(&path, p).unwrap(), q);

        let mut smaller = p;
        smaller.delta_threshold = 3;
        assert!(QTable::read_csv(&path, smaller).is_err());
    }
}
