//! Simulator for opportunistic offloading of air-quality measurements from
//! bus-mounted sensors.
//!
//! Each device queues the packets it measures and, every time step, decides
//! whether to keep the head packet, send it to the server over 4G, hand it to
//! a road-side unit over Wi-Fi, or relay it to a neighbouring device. Devices
//! are independent tabular Q-learners or fixed baseline policies.

pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mobility;
pub mod model;
pub mod policy;
pub mod qlearning;

pub use config::{PolicySpec, ServiceMode, SimConfig};
pub use engine::{run, RunOutput, World};
pub use error::SimError;
pub use metrics::{DeliveryRecord, DeliveryRoute, MetricsReport, Rates, RunMetrics};
pub use qlearning::Action;
