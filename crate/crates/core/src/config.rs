//! JSON run configuration and its validation.
//!
//! Every optional field defaults to the reference simulation parameters
//! (1 Mb packets, 25 Mb queues, 120 m device range, one-minute steps).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FieldError};
use crate::mobility::{CoverageIndex, RouteShape, SyntheticTraceSpec};
use crate::model::LinkSpec;
use crate::policy::{FixedProbabilityPolicy, UpdateTarget};
use crate::qlearning::{LearnerParams, RewardParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Qlearning,
    Fp(FixedProbabilityPolicy),
    AlwaysServer,
}

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            PolicySpec::Qlearning => "qlearning",
            PolicySpec::Fp(_) => "fp",
            PolicySpec::AlwaysServer => "always_server",
        }
    }

    pub fn is_learning(&self) -> bool {
        matches!(self, PolicySpec::Qlearning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilitySource {
    Synthetic {
        n_devices: usize,
        shape: RouteShape,
        speed_mps: f64,
    },
    TraceFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RsuSource {
    /// Placed along the synthetic route shape.
    Synthetic {
        count: usize,
        range_m: f64,
    },
    File {
        path: PathBuf,
    },
}

/// How many decisions a device makes per step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMode {
    /// One decision per step, on the head packet.
    HeadOnly,
    /// Decide packet after packet, oldest first, until one is kept or every
    /// packet that was actionable at the start of the phase has been handled.
    #[default]
    Drain,
}

/// Which packet's age is used as Δ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayReference {
    /// Age of the packet being decided (the queue head).
    #[default]
    OldestQueued,
    /// Time since the device last generated a packet.
    NewestGenerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Defaults to half the run when absent.
    pub epsilon_decay_steps: Option<u64>,
    pub update_target: UpdateTarget,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: None,
            update_target: UpdateTarget::Selected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub penalty: f64,
    pub theta_weights: (f64, f64),
    pub occupancy_levels: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            penalty: 100.0,
            theta_weights: (0.5, 0.5),
            occupancy_levels: 5,
        }
    }
}

fn default_lambda_d() -> u64 {
    1
}
fn default_delta() -> u64 {
    5
}
fn default_packet_size() -> f64 {
    1.0
}
fn default_capacity() -> f64 {
    25.0
}
fn default_device_range() -> f64 {
    120.0
}
fn default_step_seconds() -> f64 {
    60.0
}
fn default_cell_size() -> f64 {
    CoverageIndex::DEFAULT_CELL_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of steps T.
    pub duration: u64,
    /// Packet generation interval in steps.
    #[serde(default = "default_lambda_d")]
    pub lambda_d: u64,
    /// Latency threshold δ in steps.
    #[serde(default = "default_delta")]
    pub delta: u64,
    #[serde(default = "default_packet_size")]
    pub packet_size_mb: f64,
    #[serde(default = "default_capacity")]
    pub capacity_mb: f64,
    #[serde(default = "default_device_range")]
    pub device_range_m: f64,
    #[serde(default = "default_step_seconds")]
    pub step_seconds: f64,
    #[serde(default)]
    pub links: LinkSpec,
    #[serde(default)]
    pub seed: u64,
    pub policy: PolicySpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    pub mobility: MobilitySource,
    pub rsus: RsuSource,
    #[serde(default)]
    pub service: ServiceMode,
    #[serde(default)]
    pub action_before_generation: bool,
    #[serde(default)]
    pub delay_reference: DelayReference,
    #[serde(default = "default_cell_size")]
    pub cell_size_m: f64,
    /// Directory of per-device Q-table snapshots (`device_<i>.csv`) to start from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start_dir: Option<PathBuf>,
}

impl SimConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads, parses and validates a config file. Relative file paths inside
    /// it are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg = Self::from_json(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        let errors = cfg.validate();
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MobilitySource::TraceFile { path } = &mut self.mobility {
            fix(path);
        }
        if let RsuSource::File { path } = &mut self.rsus {
            fix(path);
        }
        if let Some(dir) = &mut self.warm_start_dir {
            fix(dir);
        }
    }

    pub fn reward_params(&self) -> RewardParams {
        RewardParams {
            capacity: self.capacity_mb,
            delta_threshold: self.delta,
            penalty: self.reward.penalty,
            theta_weights: self.reward.theta_weights,
            occupancy_levels: self.reward.occupancy_levels,
        }
    }

    pub fn learner_params(&self) -> LearnerParams {
        LearnerParams {
            alpha: self.learner.alpha,
            gamma: self.learner.gamma,
            epsilon_start: self.learner.epsilon_start,
            epsilon_end: self.learner.epsilon_end,
            epsilon_decay_steps: self.learner.epsilon_decay_steps.unwrap_or(self.duration / 2),
        }
    }

    pub fn synthetic_trace_spec(&self) -> Option<SyntheticTraceSpec> {
        match self.mobility {
            MobilitySource::Synthetic {
                n_devices,
                shape,
                speed_mps,
            } => Some(SyntheticTraceSpec {
                n_devices,
                shape,
                speed_mps,
                duration: self.duration.max(1),
                step_seconds: self.step_seconds,
                seed: self.seed,
            }),
            MobilitySource::TraceFile { .. } => None,
        }
    }

    /// Every violated constraint, each addressed by its field path.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut v = Validator::default();
        v.check(self.duration >= 1, "duration", "duration ≥ 1");
        v.check(self.lambda_d >= 1, "lambda_d", "lambda_d ≥ 1");
        v.check(self.delta >= 1, "delta", "delta ≥ 1");
        v.positive(self.packet_size_mb, "packet_size_mb");
        v.positive(self.capacity_mb, "capacity_mb");
        v.check(
            self.packet_size_mb.is_nan() || self.packet_size_mb <= self.capacity_mb,
            "packet_size_mb",
            "packet_size_mb must not exceed capacity_mb",
        );
        v.positive(self.device_range_m, "device_range_m");
        v.positive(self.step_seconds, "step_seconds");
        v.positive(self.cell_size_m, "cell_size_m");
        v.positive(self.links.sensor_server_mbps, "links.sensor_server_mbps");
        v.positive(self.links.sensor_rsu_mbps, "links.sensor_rsu_mbps");
        v.positive(self.links.sensor_sensor_mbps, "links.sensor_sensor_mbps");
        v.positive(self.links.rsu_server_mbps, "links.rsu_server_mbps");

        if let PolicySpec::Fp(fp) = &self.policy {
            validate_fp(fp, "policy", &mut v);
        }

        let l = &self.learner;
        v.unit(l.alpha, "learner.alpha");
        v.unit(l.gamma, "learner.gamma");
        v.unit(l.epsilon_start, "learner.epsilon_start");
        v.unit(l.epsilon_end, "learner.epsilon_end");
        v.check(
            l.epsilon_end <= l.epsilon_start,
            "learner.epsilon_end",
            "epsilon_end must not exceed epsilon_start",
        );

        let r = &self.reward;
        v.positive(r.penalty, "reward.penalty");
        let (wc, wd) = r.theta_weights;
        v.check(
            wc >= 0.0 && wd >= 0.0 && ((wc + wd) - 1.0).abs() <= 1e-9,
            "reward.theta_weights",
            format!("weights must be non-negative and sum to 1, got ({wc}, {wd})"),
        );
        v.check(
            r.occupancy_levels >= 1,
            "reward.occupancy_levels",
            "occupancy_levels ≥ 1",
        );

        match &self.mobility {
            MobilitySource::Synthetic {
                n_devices,
                shape,
                speed_mps,
            } => {
                v.check(*n_devices >= 1, "mobility.n_devices", "n_devices ≥ 1");
                v.positive(*speed_mps, "mobility.speed_mps");
                match *shape {
                    RouteShape::Loop { perimeter_m } => v.positive(perimeter_m, "mobility.shape.perimeter_m"),
                    RouteShape::Grid { blocks, block_m } => {
                        v.check(blocks >= 1, "mobility.shape.blocks", "blocks ≥ 1");
                        v.positive(block_m, "mobility.shape.block_m");
                    }
                }
            }
            MobilitySource::TraceFile { path } => {
                v.check(
                    path.exists(),
                    "mobility.path",
                    format!("{} does not exist", path.display()),
                );
            }
        }
        match &self.rsus {
            RsuSource::Synthetic { count, range_m } => {
                v.positive(*range_m, "rsus.range_m");
                match &self.mobility {
                    MobilitySource::Synthetic {
                        shape: RouteShape::Grid { blocks, .. },
                        ..
                    } => {
                        let sites = (*blocks as usize + 1).pow(2);
                        v.check(
                            *count <= sites,
                            "rsus.count",
                            format!("at most {sites} RSUs fit on the grid"),
                        );
                    }
                    MobilitySource::Synthetic { .. } => {}
                    MobilitySource::TraceFile { .. } => v.push(
                        "rsus",
                        "synthetic RSU placement needs synthetic mobility; use an RSU file",
                    ),
                }
            }
            RsuSource::File { path } => {
                v.check(path.exists(), "rsus.path", format!("{} does not exist", path.display()));
            }
        }
        if let Some(dir) = &self.warm_start_dir {
            v.check(
                dir.is_dir(),
                "warm_start_dir",
                format!("{} is not a directory", dir.display()),
            );
        }
        v.errors
    }
}

pub(crate) fn validate_fp(fp: &FixedProbabilityPolicy, path: &str, v: &mut Validator) {
    let p = fp.probabilities();
    let sum: f64 = p.iter().sum();
    let names = ["p_keep", "p_server", "p_rsu", "p_sensor"];
    for (value, name) in p.iter().zip(names) {
        v.unit(*value, &format!("{path}.{name}"));
    }
    v.check(
        (sum - 1.0).abs() <= 1e-9,
        path,
        format!("FP probabilities must sum to 1, got {sum}"),
    );
}

#[derive(Debug, Default)]
pub(crate) struct Validator {
    pub errors: Vec<FieldError>,
}

impl Validator {
    pub fn push(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.errors.push(FieldError::new(path, msg));
    }

    pub fn check(&mut self, ok: bool, path: &str, msg: impl Into<String>) {
        if !ok {
            self.push(path, msg);
        }
    }

    pub fn positive(&mut self, value: f64, path: &str) {
        self.check(
            value > 0.0 && value.is_finite(),
            path,
            format!("must be > 0, got {value}"),
        );
    }

    pub fn unit(&mut self, value: f64, path: &str) {
        self.check(
            (0.0..=1.0).contains(&value),
            path,
            format!("must lie in [0, 1], got {value}"),
        );
    }

    /// Adds `errors` with their paths nested under `prefix`.
    pub fn nested(&mut self, prefix: &str, errors: Vec<FieldError>) {
        for e in errors {
            self.push(format!("{prefix}.{}", e.path), e.message);
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}
