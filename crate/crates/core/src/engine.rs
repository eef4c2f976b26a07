//! The time-stepped simulation loop.
//!
//! Each step runs three phases in a fixed order: move devices and rebuild
//! the coverage index, generate packets, then let devices act in ascending
//! id order. With `action_before_generation` the last two phases swap.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DelayReference, MobilitySource, PolicySpec, RsuSource, ServiceMode, SimConfig};
use crate::error::{SimError, TraceError};
use crate::metrics::{DeliveryRecord, DeliveryRoute, RunMetrics};
use crate::mobility::{self, CoverageIndex, Trace};
use crate::model::{transmission_latency, DeviceId, DeviceState, EnqueueOutcome, Packet, Position, Rsu};
use crate::policy::{Observation, Policy, QLearningPolicy};
use crate::qlearning::{Action, QTable};

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// One record per generated packet: delivered, dropped, or in flight at
    /// the end. Delivered and dropped records appear in event order; in-flight
    /// records follow, by device then queue position.
    pub records: Vec<DeliveryRecord>,
    /// Final Q-tables of learning devices, indexed by device.
    pub q_tables: Vec<Option<QTable>>,
}

pub struct World {
    cfg: SimConfig,
    t: u64,
    devices: Vec<DeviceState>,
    traces: Vec<Trace>,
    rsus: Vec<Rsu>,
    index: CoverageIndex,
    policies: Vec<Box<dyn Policy>>,
    rngs: Vec<ChaCha8Rng>,
    phases: Vec<u64>,
    last_generated: Vec<Option<u64>>,
    next_packet_id: u64,
    records: Vec<DeliveryRecord>,
    metrics: RunMetrics,
}

impl World {
    /// Builds the world for a validated config, loading or generating
    /// traces and RSUs.
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        let (traces, rsus) = load_mobility(cfg)?;
        Self::from_parts(cfg, traces, rsus)
    }

    pub fn from_parts(cfg: &SimConfig, traces: Vec<Trace>, rsus: Vec<Rsu>) -> Result<Self, SimError> {
        let n = traces.len();
        if n == 0 {
            return Err(SimError::Input("world needs at least one device".into()));
        }
        let policies = build_policies(cfg, n)?;
        let rngs = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64 + 1);
                rng
            })
            .collect();
        let mut world_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let phases = (0..n).map(|_| world_rng.gen_range(0..cfg.lambda_d)).collect();
        Ok(Self {
            index: CoverageIndex::new(cfg.cell_size_m, &rsus, cfg.device_range_m),
            devices: (0..n)
                .map(|i| DeviceState::new(i, cfg.capacity_mb, cfg.device_range_m))
                .collect(),
            traces,
            rsus,
            policies,
            rngs,
            phases,
            last_generated: vec![None; n],
            next_packet_id: 0,
            records: Vec::new(),
            metrics: RunMetrics::new(cfg.delta),
            t: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn now(&self) -> u64 {
        self.t
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn rsus(&self) -> &[Rsu] {
        &self.rsus
    }

    pub fn records(&self) -> &[DeliveryRecord] {
        &self.records
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Replaces one device's policy, e.g. to script its actions in tests.
    pub fn set_policy(&mut self, device: DeviceId, policy: Box<dyn Policy>) {
        self.policies[device] = policy;
    }

    /// `device` generates a packet at every step with `t mod lambda_d`
    /// equal to this offset.
    pub fn generation_phase(&self, device: DeviceId) -> u64 {
        self.phases[device]
    }

    /// Executes step `now()` and advances the clock.
    pub fn step(&mut self) {
        let t = self.t;
        self.update_positions(t);
        if self.cfg.action_before_generation {
            self.action_phase(t);
            self.generation_phase_run(t);
        } else {
            self.generation_phase_run(t);
            self.action_phase(t);
        }
        self.t += 1;
    }

    pub fn run_steps(&mut self, steps: u64) {
        for _ in 0..steps {
            self.step();
        }
    }

    /// Closes the run: queued packets become in-flight records.
    pub fn finish(mut self) -> RunOutput {
        for d in &mut self.devices {
            for p in d.drain_all() {
                let r = DeliveryRecord {
                    packet_id: p.id,
                    origin_device: p.origin_device,
                    route: DeliveryRoute::InFlight,
                    created_at: p.created_at,
                    delivered_at: None,
                    latency: None,
                    hop_count: p.hop_count,
                };
                self.metrics.record(&r);
                self.records.push(r);
            }
        }
        RunOutput {
            metrics: self.metrics,
            records: self.records,
            q_tables: self.policies.iter().map(|p| p.q_table().cloned()).collect(),
        }
    }

    fn update_positions(&mut self, t: u64) {
        let entries: Vec<(Position, f64)> = self
            .traces
            .iter()
            .zip(&self.devices)
            .map(|(tr, d)| (tr.position_at(t), d.range))
            .collect();
        self.index.rebuild_devices(&entries);
    }

    fn generation_phase_run(&mut self, t: u64) {
        for i in 0..self.devices.len() {
            if t % self.cfg.lambda_d != self.phases[i] {
                continue;
            }
            let packet = Packet::new(self.next_packet_id, i, t, self.cfg.packet_size_mb);
            self.next_packet_id += 1;
            self.last_generated[i] = Some(t);
            self.metrics.count_generated();
            if self.devices[i].enqueue(packet.clone()) == EnqueueOutcome::Dropped {
                let r = DeliveryRecord {
                    packet_id: packet.id,
                    origin_device: i,
                    route: DeliveryRoute::Dropped,
                    created_at: t,
                    delivered_at: None,
                    latency: None,
                    hop_count: 0,
                };
                self.metrics.record(&r);
                self.records.push(r);
                self.policies[i].penalize_drop();
            }
        }
    }

    fn action_phase(&mut self, t: u64) {
        for i in 0..self.devices.len() {
            let budget = match self.cfg.service {
                ServiceMode::HeadOnly => 1,
                ServiceMode::Drain => self.devices[i].actionable_count(t),
            };
            for _ in 0..budget {
                let Some(k) = self.devices[i].actionable_index(t) else {
                    break;
                };
                let obs = self.observe(i, k, t);
                let age = self.devices[i].queue()[k].age(t);
                let selected = self.policies[i].select_action(&obs, &mut self.rngs[i]);
                let effective = self.execute_action(i, k, selected, t);
                let violated = misses_deadline(effective, age, self.cfg.delta);
                self.policies[i].feedback(&obs, selected, effective, violated);
                if effective == Action::Keep {
                    break;
                }
            }
        }
    }

    /// Observation of device `i` deciding about the packet at queue index `k`.
    pub fn observe(&self, i: DeviceId, k: usize, t: u64) -> Observation {
        let device = &self.devices[i];
        let delta = match self.cfg.delay_reference {
            DelayReference::OldestQueued => device.queue()[k].age(t),
            DelayReference::NewestGenerated => self.last_generated[i].map_or(0, |g| t - g),
        };
        Observation {
            t,
            delta,
            remaining: device.remaining_capacity(),
            neighbor_remaining: self
                .index
                .nearest_device_in_range(i)
                .map(|(j, _)| self.devices[j].remaining_capacity()),
            rsu_in_range: self.index.nearest_rsu_in_range(i).is_some(),
        }
    }

    /// Carries out `action` on packet `k` of device `i` and returns the action
    /// that actually took place. An RSU or relay send with no usable target
    /// keeps the packet (offload-hit), unless the queue could not absorb
    /// another packet, in which case it goes out over 4G (offload-missed).
    pub fn execute_action(&mut self, i: DeviceId, k: usize, action: Action, t: u64) -> Action {
        match action {
            Action::Keep => Action::Keep,
            Action::SendServer => {
                self.send_4g(i, k, t);
                Action::SendServer
            }
            Action::SendRsu => match self.index.nearest_rsu_in_range(i) {
                Some((r, _)) => {
                    self.send_rsu(i, k, r, t);
                    Action::SendRsu
                }
                None => self.offload_fallback(i, k, t),
            },
            Action::SendDevice => {
                let size = self.devices[i].queue()[k].size;
                match self.index.nearest_device_in_range(i) {
                    Some((j, _)) if self.devices[j].can_hold(size) => {
                        self.relay(i, k, j, t);
                        Action::SendDevice
                    }
                    _ => self.offload_fallback(i, k, t),
                }
            }
        }
    }

    fn offload_fallback(&mut self, i: DeviceId, k: usize, t: u64) -> Action {
        if self.devices[i].remaining_capacity() < self.cfg.packet_size_mb {
            self.send_4g(i, k, t);
            Action::SendServer
        } else {
            Action::Keep
        }
    }

    fn send_4g(&mut self, i: DeviceId, k: usize, t: u64) {
        let p = self.devices[i].take(k).expect("packet index in range");
        let secs = latency(p.size, self.cfg.links.sensor_server_mbps);
        let route = if p.hop_count == 0 {
            DeliveryRoute::Direct4G
        } else {
            DeliveryRoute::ViaRelayThen4G
        };
        self.deliver(p, t, secs, route);
    }

    fn send_rsu(&mut self, i: DeviceId, k: usize, r: usize, t: u64) {
        let p = self.devices[i].take(k).expect("packet index in range");
        let secs = latency(p.size, self.cfg.links.sensor_rsu_mbps) + latency(p.size, self.rsus[r].backhaul_bandwidth);
        let route = if p.hop_count == 0 {
            DeliveryRoute::ViaRsu
        } else {
            DeliveryRoute::ViaRelayThenRsu
        };
        self.deliver(p, t, secs, route);
    }

    fn relay(&mut self, i: DeviceId, k: usize, j: DeviceId, t: u64) {
        let mut p = self.devices[i].take(k).expect("packet index in range");
        p.hop_count += 1;
        p.transit_seconds += latency(p.size, self.cfg.links.sensor_sensor_mbps);
        p.actionable_from = t + 1;
        self.devices[j].insert_ordered(p);
    }

    fn deliver(&mut self, p: Packet, t: u64, final_hop_seconds: f64, route: DeliveryRoute) {
        let delivered_at = t as f64 + (p.transit_seconds + final_hop_seconds) / self.cfg.step_seconds;
        let r = DeliveryRecord {
            packet_id: p.id,
            origin_device: p.origin_device,
            route,
            created_at: p.created_at,
            delivered_at: Some(delivered_at),
            latency: Some(delivered_at - p.created_at as f64),
            hop_count: p.hop_count,
        };
        self.metrics.record(&r);
        self.records.push(r);
    }

    /// Checks packet conservation, capacity, queue order and uniqueness of
    /// every packet id across queues and records.
    pub fn audit(&self) -> Result<(), SimError> {
        let fail = |message: String| Err(SimError::Invariant { step: self.t, message });
        let queued: u64 = self.devices.iter().map(|d| d.queue_len() as u64).sum();
        let m = &self.metrics;
        if m.generated != queued + m.dropped + m.delivered {
            return fail(format!(
                "generated {} != queued {queued} + dropped {} + delivered {}",
                m.generated, m.dropped, m.delivered
            ));
        }
        let mut seen = HashSet::with_capacity(m.generated as usize);
        for d in &self.devices {
            if d.queued_size() > d.capacity + 1e-9 {
                return fail(format!("device {} holds {} > {}", d.id, d.queued_size(), d.capacity));
            }
            let q = d.queue();
            if q.iter().zip(q.iter().skip(1)).any(|(a, b)| a.created_at > b.created_at) {
                return fail(format!("device {} queue out of order", d.id));
            }
            for p in q {
                if !seen.insert(p.id) {
                    return fail(format!("packet {} queued twice", p.id));
                }
            }
        }
        for r in &self.records {
            if !seen.insert(r.packet_id) {
                return fail(format!("packet {} recorded twice or still queued", r.packet_id));
            }
            if let Some(l) = r.latency {
                if l < 0.0 {
                    return fail(format!("packet {} has negative latency", r.packet_id));
                }
            }
        }
        if seen.len() as u64 != m.generated || seen.iter().any(|&id| id >= self.next_packet_id) {
            return fail("packet ids do not match generation count".into());
        }
        Ok(())
    }
}

/// Whether `effective` is the decision that makes a packet of age `age`
/// late. A packet that stays queued (kept, or handed to a neighbour) can
/// leave at the earliest next step, at age `age + 1` plus a positive
/// transmission time, which exceeds `delta` once `age + 1 >= delta`. Sends
/// to the server or an RSU are never charged: they end the lateness rather
/// than cause it.
pub fn misses_deadline(effective: Action, age: u64, delta: u64) -> bool {
    matches!(effective, Action::Keep | Action::SendDevice) && age + 1 >= delta
}

fn latency(size: f64, bandwidth: f64) -> f64 {
    transmission_latency(size, bandwidth).expect("validated bandwidth")
}

fn build_policies(cfg: &SimConfig, n: usize) -> Result<Vec<Box<dyn Policy>>, SimError> {
    let mut out: Vec<Box<dyn Policy>> = Vec::with_capacity(n);
    for i in 0..n {
        out.push(match &cfg.policy {
            PolicySpec::Qlearning => {
                let table = match &cfg.warm_start_dir {
                    Some(dir) => {
                        let path = dir.join(format!("device_{i}.csv"));
                        if path.exists() {
                            QTable::read_csv(&path, cfg.reward_params())?
                        } else {
                            QTable::new(cfg.reward_params())
                        }
                    }
                    None => QTable::new(cfg.reward_params()),
                };
                Box::new(QLearningPolicy::with_table(
                    table,
                    cfg.learner_params(),
                    cfg.learner.update_target,
                ))
            }
            PolicySpec::Fp(fp) => Box::new(*fp),
            PolicySpec::AlwaysServer => Box::new(crate::policy::always_server()),
        });
    }
    Ok(out)
}

/// Traces and RSUs described by the config.
pub fn load_mobility(cfg: &SimConfig) -> Result<(Vec<Trace>, Vec<Rsu>), SimError> {
    let traces = match &cfg.mobility {
        MobilitySource::Synthetic { .. } => {
            let spec = cfg.synthetic_trace_spec().expect("synthetic mobility");
            mobility::generate_synthetic_traces(&spec)?
        }
        MobilitySource::TraceFile { path } => mobility::read_traces(path)?,
    };
    let rsus = match &cfg.rsus {
        RsuSource::Synthetic { count, range_m } => {
            let MobilitySource::Synthetic { shape, .. } = &cfg.mobility else {
                return Err(TraceError::BadSpec("synthetic RSUs need synthetic mobility".into()).into());
            };
            shape
                .rsu_sites(*count, cfg.seed)?
                .into_iter()
                .enumerate()
                .map(|(id, pos)| Rsu::new(id, pos, *range_m, cfg.links.rsu_server_mbps))
                .collect::<Result<Vec<_>, _>>()?
        }
        RsuSource::File { path } => mobility::read_rsus(path, cfg.links.rsu_server_mbps)?,
    };
    Ok((traces, rsus))
}

/// Validates `cfg`, runs it to completion and returns metrics and records.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(crate::error::ConfigError::Invalid(errors).into());
    }
    let mut world = World::new(cfg)?;
    world.run_steps(cfg.duration);
    Ok(world.finish())
}

/// Writes every learning device's Q-table as `device_<i>.csv` under `dir`.
pub fn write_q_tables(dir: &Path, tables: &[Option<QTable>]) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, table) in tables.iter().enumerate() {
        if let Some(table) = table {
            table.write_csv(&dir.join(format!("device_{i}.csv")))?;
        }
    }
    Ok(())
}
