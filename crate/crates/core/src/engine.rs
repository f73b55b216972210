//! The slot loop: mobility, arrivals, policy decision, flow application, completions.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Bits, NodeId, ServiceId};
use crate::network::{build_vr_scenario, CapacitySnapshot, NetworkError, NetworkState, ScenarioConfig, ScenarioKnobs};
use crate::policies::{decide, repair_routes, CongestionMetric, PolicyContext, PolicyError, PolicyKind, RouteError, RouteTable};
use crate::queueing::{Completion, DeliveryRecord, FlowReport, MoveKind, QueueError, QueueTable};
use crate::rng::{self, Stream};
use crate::service::{sample_requests, Catalog, Request, ServiceError, ServiceRegistry, VrProfile};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("slot {slot}: policy failed: {source}")]
    Policy { slot: u64, source: PolicyError },
    #[error("slot {slot}: policy produced an infeasible action: {source}")]
    Flow { slot: u64, source: QueueError },
    #[error("slot {slot}: route bookkeeping failed: {source}")]
    Route { slot: u64, source: RouteError },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub horizon_slots: u64,
    /// Defaults to a fifth of the horizon.
    pub warmup_slots: Option<u64>,
    pub slot_duration_s: f64,
    pub lambda_fps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Request popularity skew.
    pub gamma_pop: f64,
    /// Caching distribution skew.
    pub gamma_cache: f64,
    pub policy: PolicyKind,
    pub v_param: f64,
    pub seed: u64,
    /// Full ledger audit every this many slots; 0 audits only at the end.
    pub audit_every: u64,
    /// Total-backlog sample spacing in slots.
    pub series_every: u64,
    /// Per-queue trajectory spacing in slots; 0 disables it.
    pub trajectory_every: u64,
    pub scenario: ScenarioConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_slots: 30_000,
            warmup_slots: None,
            slot_duration_s: 1e-3,
            lambda_fps: 60.0,
            beta1: 1.0,
            beta2: 1.0,
            beta3: 0.3,
            gamma_pop: 1.0,
            gamma_cache: 1.0,
            policy: PolicyKind::Centralized,
            v_param: 0.0,
            seed: 0,
            audit_every: 0,
            series_every: 10,
            trajectory_every: 0,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn warmup(&self) -> u64 {
        self.warmup_slots.unwrap_or(self.horizon_slots / 5)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.warmup() > self.horizon_slots {
            return bad(format!(
                "warmup {} exceeds horizon {}",
                self.warmup(),
                self.horizon_slots
            ));
        }
        if !(self.slot_duration_s > 0.0 && self.slot_duration_s.is_finite()) {
            return bad("slot_duration_s must be > 0".into());
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("lambda_fps", self.lambda_fps),
            ("gamma_pop", self.gamma_pop),
            ("gamma_cache", self.gamma_cache),
            ("v_param", self.v_param),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        self.scenario.validate()?;
        Ok(())
    }

    pub fn knobs(&self) -> ScenarioKnobs {
        ScenarioKnobs {
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
            gamma_cache: self.gamma_cache,
            slot_duration_s: self.slot_duration_s,
        }
    }
}

/// Invariant checks accumulated over a run. Every counter is zero in a correct run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub slots: u64,
    pub ledger_checks: u64,
    pub ledger_violations: u64,
    pub chaining_violations: u64,
    pub capacity_violations: u64,
    pub provenance_violations: u64,
    pub causality_violations: u64,
    /// Delivered output exceeding created output, or a shortfall with nothing in flight.
    pub conservation_violations: u64,
}

impl AuditReport {
    pub fn total_violations(&self) -> u64 {
        self.ledger_violations
            + self.chaining_violations
            + self.capacity_violations
            + self.provenance_violations
            + self.causality_violations
            + self.conservation_violations
    }
}

/// Fraction of offered capacity used over the measurement window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub downlink: f64,
    pub bs_processors: f64,
    pub user_processors: f64,
    /// Mean D2D traffic, bits per slot.
    pub d2d_bits_per_slot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Frames completed after warmup, in completion order.
    pub deliveries: Vec<DeliveryRecord>,
    /// Frames that arrived after warmup.
    pub issued: u64,
    /// Frames still in flight at the horizon, excluded from delay statistics.
    pub in_flight: u64,
    pub delivered_before_window: u64,
    pub issued_total: u64,
    pub delivered_total: u64,
    pub window_slots: u64,
    pub slot_duration_s: f64,
    pub num_users: usize,
    pub lambda_fps: f64,
    /// `(slot, total backlog bits)` every `series_every` slots over the whole horizon.
    pub backlog_series: Vec<(u64, u128)>,
    /// `(slot, node, service, stage, bits)` rows when trajectory export is on.
    pub trajectory: Vec<(u64, NodeId, ServiceId, u8, Bits)>,
    pub utilization: Utilization,
    pub audit: AuditReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Performance {
    pub throughput_fps: f64,
    /// `None` when nothing was delivered.
    pub mean_delay_s: Option<f64>,
}

/// Per-user delivery rate and mean delay over a window.
pub fn attained_performance(m: &Metrics, window_s: f64, users: usize) -> Performance {
    let n = m.deliveries.len();
    let throughput_fps = if window_s > 0.0 && users > 0 {
        n as f64 / (window_s * users as f64)
    } else {
        0.0
    };
    let mean_delay_s = (n > 0).then(|| m.deliveries.iter().map(|d| d.delay_s).sum::<f64>() / n as f64);
    Performance {
        throughput_fps,
        mean_delay_s,
    }
}

impl Metrics {
    pub fn window_s(&self) -> f64 {
        self.window_slots as f64 * self.slot_duration_s
    }

    pub fn performance(&self) -> Performance {
        attained_performance(self, self.window_s(), self.num_users)
    }

    /// Mean delay within `delay_req_s` and throughput of at least 99% of the offered rate.
    pub fn meets(&self, delay_req_s: f64) -> bool {
        let p = self.performance();
        p.mean_delay_s.is_some_and(|d| d <= delay_req_s) && p.throughput_fps >= 0.99 * self.lambda_fps
    }

    /// Time-averaged total backlog over the middle and last thirds of the horizon.
    pub fn backlog_thirds(&self) -> (f64, f64) {
        let Some(&(last, _)) = self.backlog_series.last() else {
            return (0.0, 0.0);
        };
        let horizon = last + 1;
        let mean = |lo: u64, hi: u64| {
            let v: Vec<f64> = self
                .backlog_series
                .iter()
                .filter(|(t, _)| *t >= lo && *t < hi)
                .map(|(_, b)| *b as f64)
                .collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        (
            mean(horizon / 3, 2 * horizon / 3),
            mean(2 * horizon / 3, horizon),
        )
    }

    pub fn write_deliveries_csv<W: io::Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "request_id",
            "user",
            "object",
            "arrival_slot",
            "completion_slot",
            "delay_ms",
        ])?;
        for d in &self.deliveries {
            w.write_record([
                d.request.id.0.to_string(),
                d.request.user.0.to_string(),
                d.request.object.0.to_string(),
                d.request.arrival_slot.to_string(),
                d.completion_slot.to_string(),
                format!("{:.3}", d.delay_s * 1e3),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_trajectory_csv<W: io::Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "node", "service", "stage", "bits"])?;
        for (t, n, s, k, b) in &self.trajectory {
            w.write_record([
                t.to_string(),
                n.0.to_string(),
                s.0.to_string(),
                k.to_string(),
                b.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Check realised flows against the slot's capacities and the caches, independently of
/// the queue table's own validation.
fn audit_report(
    report: &FlowReport,
    caps: &CapacitySnapshot,
    net: &NetworkState,
    queues: &QueueTable,
    audit: &mut AuditReport,
) {
    for (&(i, j), &bits) in &report.link_bits {
        if bits > caps.link(i, j) {
            audit.capacity_violations += 1;
        }
    }
    for (&n, &cycles) in &report.cycles {
        if cycles > caps.cycles(n) {
            audit.capacity_violations += 1;
        }
    }
    for m in &report.moves {
        if let MoveKind::Replicate { node } = m.kind {
            let cached = m.commodity.object.is_some_and(|o| net.caches(node, o));
            let known = queues.frame(m.request).is_none_or(|f| Some(f.request.object) == m.commodity.object);
            if !cached || !known {
                audit.provenance_violations += 1;
            }
        }
    }
}

fn chaining_ok(queues: &QueueTable, services: &ServiceRegistry) -> bool {
    // With a common integral scaling factor the global totals must match exactly.
    let xis: Vec<f64> = services
        .iter()
        .filter_map(|(_, d)| d.function(0).map(|f| f.scaling_factor))
        .collect();
    let common = xis.first().copied().filter(|x| xis.iter().all(|y| y == x) && x.fract() == 0.0);
    let t = queues.totals();
    let frames_ok = queues.frames().all(|f| {
        f.processed.iter().zip(&f.produced).enumerate().all(|(k, (&p, &o))| {
            services
                .get(f.service)
                .and_then(|d| d.function(k as u8))
                .is_some_and(|fun| crate::service::scale_bits(p, fun.scaling_factor) == o)
        })
    });
    let totals_ok = match common {
        Some(xi) => t.created.first().copied().unwrap_or(0) == xi as u128 * t.processed.first().copied().unwrap_or(0),
        None => true,
    };
    frames_ok && totals_ok
}

/// Simulate one configuration.
pub fn run(config: &SimConfig) -> Result<Metrics, SimError> {
    config.validate()?;
    let sc = &config.scenario;
    let dt = config.slot_duration_s;
    let catalog = Catalog::zipf(sc.catalog_size, sc.object_bits, config.gamma_pop)?;
    let mut net = build_vr_scenario(sc, &catalog, &config.knobs(), config.seed)?;
    let profile = VrProfile {
        output_bits: sc.output_bits,
        workload_cycles: sc.workload_cycles,
    };
    let services = ServiceRegistry::vr(&profile, &catalog, net.user_ids().collect::<Vec<_>>());
    let requests = sample_requests(
        &net,
        config.lambda_fps,
        dt,
        config.horizon_slots,
        &catalog,
        &mut rng::stream(config.seed, Stream::Requests),
    )?;
    run_on(config, &mut net, &services, &requests)
}

/// Simulate `requests` on a prepared network.
pub fn run_on(
    config: &SimConfig,
    net: &mut NetworkState,
    services: &ServiceRegistry,
    requests: &[Request],
) -> Result<Metrics, SimError> {
    let dt = config.slot_duration_s;
    let warmup = config.warmup();
    let horizon = config.horizon_slots;
    let kind = config.policy;
    let mut queues = QueueTable::new();
    let mut routes = RouteTable::new();
    let mut pending: Vec<Request> = Vec::new();
    let mut audit = AuditReport::default();
    let mut deliveries = Vec::new();
    let mut delivered_total = 0u64;
    let mut delivered_before_window = 0u64;
    let mut backlog_series = Vec::new();
    let mut trajectory = Vec::new();
    let mut next_req = 0usize;

    let bs = net.base_station();
    let mut downlink_bits = 0u128;
    let mut d2d_bits = 0u128;
    let mut bs_cycles = 0u128;
    let mut user_cycles = 0u128;
    let bs_cap = net.processor_cycles(bs) as u128 * net.node(bs)?.num_processors as u128;
    let user_cap: u128 = net
        .user_ids()
        .map(|u| net.processor_cycles(u) as u128 * net.nodes()[u.index()].num_processors as u128)
        .sum();

    for t in 0..horizon {
        net.step_mobility(dt);
        while next_req < requests.len() && requests[next_req].arrival_slot <= t {
            let r = requests[next_req];
            next_req += 1;
            let dag = services
                .get(r.service())
                .ok_or(SimError::Policy {
                    slot: t,
                    source: PolicyError::UnknownService(r.service()),
                })?;
            queues
                .register(r, dag)
                .map_err(|source| SimError::Flow { slot: t, source })?;
            if kind.uses_routes() {
                pending.push(r);
            }
        }
        if kind == PolicyKind::Centralized {
            repair_routes(&mut routes, net, services, &CongestionMetric)
                .map_err(|source| SimError::Policy { slot: t, source })?;
        }
        let decision = {
            let ctx = PolicyContext {
                network: net,
                queues: &queues,
                services,
                routes: &routes,
                pending: &pending,
            };
            decide(kind, &ctx, config.v_param).map_err(|source| SimError::Policy { slot: t, source })?
        };
        for a in decision.routes {
            let sink = queues.frame(a.request).map_or(a.cache_node, |f| f.sink);
            routes
                .insert(a, sink)
                .map_err(|source| SimError::Route { slot: t, source })?;
        }
        pending = decision.deferred;
        let caps = net
            .capacities(&decision.action.alloc)
            .map_err(|e| SimError::Policy {
                slot: t,
                source: PolicyError::Network(e),
            })?;
        let report = queues
            .apply_flows(&decision.action.flows, &caps, services, net)
            .map_err(|source| SimError::Flow { slot: t, source })?;
        audit_report(&report, &caps, net, &queues, &mut audit);
        if kind.uses_routes() {
            routes
                .apply_report(&report)
                .map_err(|source| SimError::Route { slot: t, source })?;
        }
        for &r in &report.delivered {
            match queues
                .record_completion(r, t, dt)
                .map_err(|source| SimError::Flow { slot: t, source })?
            {
                Completion::Delivered(d) => {
                    routes.remove(r);
                    delivered_total += 1;
                    if d.completion_slot <= d.request.arrival_slot || d.delay_s <= 0.0 {
                        audit.causality_violations += 1;
                    }
                    if t >= warmup {
                        deliveries.push(d);
                    } else {
                        delivered_before_window += 1;
                    }
                }
                Completion::Pending => {}
            }
        }
        if t >= warmup {
            for (&(i, j), &b) in &report.link_bits {
                if i == bs {
                    downlink_bits += b as u128;
                } else if net.is_user(i) && net.is_user(j) {
                    d2d_bits += b as u128;
                }
            }
            for (&n, &c) in &report.cycles {
                if n == bs {
                    bs_cycles += c as u128;
                } else {
                    user_cycles += c as u128;
                }
            }
        }
        audit.slots += 1;
        if config.audit_every > 0 && (t + 1) % config.audit_every == 0 {
            audit.ledger_checks += 1;
            if queues.check_ledger().is_err() {
                audit.ledger_violations += 1;
            }
            if !chaining_ok(&queues, services) {
                audit.chaining_violations += 1;
            }
        }
        if config.series_every > 0 && t % config.series_every == 0 {
            backlog_series.push((t, queues.total_backlog()));
        }
        if config.trajectory_every > 0 && t % config.trajectory_every == 0 {
            trajectory.extend(queues.stage_rows().into_iter().map(|(n, s, k, b)| (t, n, s, k, b)));
        }
    }

    audit.ledger_checks += 1;
    if queues.check_ledger().is_err() {
        audit.ledger_violations += 1;
    }
    if !chaining_ok(&queues, services) {
        audit.chaining_violations += 1;
    }
    let totals = queues.totals();
    let created_final = totals.created.last().copied().unwrap_or(0);
    if totals.delivered > created_final || (queues.in_flight() == 0 && totals.delivered != created_final) {
        audit.conservation_violations += 1;
    }

    let issued = requests
        .iter()
        .filter(|r| r.arrival_slot >= warmup && r.arrival_slot < horizon)
        .count() as u64;
    let issued_total = requests.iter().filter(|r| r.arrival_slot < horizon).count() as u64;
    let window_slots = horizon - warmup;
    let slots = window_slots.max(1) as f64;
    let ratio = |used: u128, cap: u128| if cap == 0 { 0.0 } else { used as f64 / (cap as f64 * slots) };
    let downlink_cap = net.bs_link_bits() as u128 * net.params().bs_fanout as u128;
    Ok(Metrics {
        in_flight: queues.in_flight() as u64,
        delivered_before_window,
        deliveries,
        issued,
        issued_total,
        delivered_total,
        window_slots,
        slot_duration_s: dt,
        num_users: net.num_users(),
        lambda_fps: config.lambda_fps,
        backlog_series,
        trajectory,
        utilization: Utilization {
            downlink: ratio(downlink_bits, downlink_cap),
            bs_processors: ratio(bs_cycles, bs_cap),
            user_processors: ratio(user_cycles, user_cap),
            d2d_bits_per_slot: if window_slots == 0 { 0.0 } else { d2d_bits as f64 / slots },
        },
        audit,
    })
}

/// Whether `config` meets `delay_req_s` at its offered load.
pub fn is_feasible(config: &SimConfig, delay_req_s: f64) -> Result<bool, SimError> {
    Ok(run(config)?.meets(delay_req_s))
}
