//! Decision policies. The engine talks to every policy through [`Policy`],
//! handing it the full observation whether or not the policy uses it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::qlearning::{self, Action, DiscreteState, LearnerParams, QTable, RewardParams};

/// What a device can see when deciding about its head packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: u64,
    /// Age Δ of the reference packet in steps.
    pub delta: u64,
    /// Remaining queue capacity c_i.
    pub remaining: f64,
    /// Remaining capacity of the nearest in-range device, if any.
    pub neighbor_remaining: Option<f64>,
    pub rsu_in_range: bool,
}

pub trait Policy: Send {
    fn select_action(&mut self, obs: &Observation, rng: &mut ChaCha8Rng) -> Action;

    /// Outcome of the last selected action. `effective` is what the engine
    /// actually did after offload-hit/offload-missed substitution.
    fn feedback(&mut self, _obs: &Observation, _selected: Action, _effective: Action, _violated: bool) {}

    /// A packet generated by this device was dropped for lack of space.
    fn penalize_drop(&mut self) {}

    fn q_table(&self) -> Option<&QTable> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedProbabilityPolicy {
    pub p_keep: f64,
    pub p_server: f64,
    pub p_rsu: f64,
    pub p_sensor: f64,
}

impl FixedProbabilityPolicy {
    pub const FP1: Self = Self::from_array([0.2, 0.3, 0.3, 0.2]);
    pub const FP2: Self = Self::from_array([0.1, 0.3, 0.5, 0.1]);
    pub const FP3: Self = Self::from_array([0.1, 0.5, 0.3, 0.1]);

    const fn from_array(p: [f64; 4]) -> Self {
        Self {
            p_keep: p[0],
            p_server: p[1],
            p_rsu: p[2],
            p_sensor: p[3],
        }
    }

    pub fn new(p_keep: f64, p_server: f64, p_rsu: f64, p_sensor: f64) -> Result<Self, PolicyError> {
        let p = Self {
            p_keep,
            p_server,
            p_rsu,
            p_sensor,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn probabilities(&self) -> [f64; 4] {
        [self.p_keep, self.p_server, self.p_rsu, self.p_sensor]
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let p = self.probabilities();
        let in_range = p.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PolicyError::InvalidProbabilities(p));
        }
        Ok(())
    }
}

/// Categorical draw over the four actions using one uniform sample.
pub fn fp_select<R: Rng + ?Sized>(policy: &FixedProbabilityPolicy, rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let p = policy.probabilities();
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return Action::from_index(i);
        }
    }
    // Rounding can leave `acc` a hair under 1; fall back to the last action
    // with non-zero mass.
    let last = p.iter().rposition(|&v| v > 0.0).unwrap_or(0);
    Action::from_index(last)
}

impl Policy for FixedProbabilityPolicy {
    fn select_action(&mut self, _obs: &Observation, rng: &mut ChaCha8Rng) -> Action {
        fp_select(self, rng)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlwaysServer;

pub fn always_server() -> AlwaysServer {
    AlwaysServer
}

impl Policy for AlwaysServer {
    fn select_action(&mut self, _obs: &Observation, _rng: &mut ChaCha8Rng) -> Action {
        Action::SendServer
    }
}

/// Which Q entry receives the reward of a substituted action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateTarget {
    /// The action the agent chose, so an infeasible choice learns the value
    /// of what it turned into.
    #[default]
    Selected,
    /// The action the engine executed.
    Effective,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    state: DiscreteState,
    action: Action,
    reward: f64,
}

/// Independent tabular learner owned by one device.
///
/// Updates are applied one decision late: the transition from a decision is
/// closed when the device next observes a state, which for a kept packet is
/// the following step.
#[derive(Debug, Clone)]
pub struct QLearningPolicy {
    table: QTable,
    learner: LearnerParams,
    target: UpdateTarget,
    current: Option<DiscreteState>,
    pending: Option<Pending>,
}

impl QLearningPolicy {
    pub fn new(reward: RewardParams, learner: LearnerParams, target: UpdateTarget) -> Self {
        Self::with_table(QTable::new(reward), learner, target)
    }

    pub fn with_table(table: QTable, learner: LearnerParams, target: UpdateTarget) -> Self {
        Self {
            table,
            learner,
            target,
            current: None,
            pending: None,
        }
    }

    fn discretize(&self, obs: &Observation) -> DiscreteState {
        qlearning::discretize(
            obs.delta,
            obs.remaining,
            obs.neighbor_remaining,
            obs.rsu_in_range,
            self.table.params(),
        )
        .expect("observed remaining capacity lies within [0, capacity]")
    }
}

impl Policy for QLearningPolicy {
    fn select_action(&mut self, obs: &Observation, rng: &mut ChaCha8Rng) -> Action {
        let state = self.discretize(obs);
        if let Some(p) = self.pending.take() {
            qlearning::update(&mut self.table, &p.state, p.action, p.reward, &state, &self.learner);
        }
        self.current = Some(state);
        qlearning::select_action(&self.table, &state, self.learner.epsilon_at(obs.t), rng)
    }

    fn feedback(&mut self, obs: &Observation, selected: Action, effective: Action, violated: bool) {
        let state = self.current.take().expect("feedback follows select_action");
        let c_n = if effective == Action::SendDevice {
            obs.neighbor_remaining
        } else {
            None
        };
        let reward = qlearning::reward(effective, obs.remaining, c_n, obs.delta, violated, self.table.params())
            .expect("relay executes only with a neighbour present");
        let action = match self.target {
            UpdateTarget::Selected => selected,
            UpdateTarget::Effective => effective,
        };
        self.pending = Some(Pending { state, action, reward });
    }

    fn penalize_drop(&mut self) {
        let penalty = self.table.params().penalty;
        if let Some(p) = self.pending.as_mut() {
            p.reward = -penalty;
        }
    }

    fn q_table(&self) -> Option<&QTable> {
        Some(&self.table)
    }
}
