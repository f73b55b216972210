//! Per-node, per-commodity backlogs and the application of flow decisions.
//!
//! Every queue keeps a FIFO ledger of which request its bits belong to, so frame
//! completion (and therefore delay) can be measured over fluid flows. Backlogs are
//! integral bit counts; for each `(node, commodity)` the ledger sums to the backlog.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::ids::{Bits, NodeId, RequestId, ServiceId};
use crate::network::{CapacitySnapshot, NetworkState};
use crate::service::{scale_bits, Commodity, Request, ServiceDag, ServiceFunction, ServiceRegistry};

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("capacity violation on {resource}: {requested} > {capacity}")]
    Capacity {
        resource: String,
        requested: u64,
        capacity: u64,
    },
    #[error("replication of {request} at {node}, which does not cache its object")]
    Provenance { request: RequestId, node: NodeId },
    #[error("replication of {request} exceeds the object size")]
    OverReplication { request: RequestId },
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} registered twice")]
    DuplicateRequest(RequestId),
    #[error("no service function for {0:?}")]
    UnknownStage(Commodity),
    #[error("request {0} completed twice")]
    DuplicateCompletion(RequestId),
    #[error("ledger inconsistency: {0}")]
    Ledger(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub request: RequestId,
    pub bits: Bits,
}

#[derive(Debug, Clone, Default)]
struct CommodityQueue {
    backlog: Bits,
    chunks: VecDeque<Chunk>,
}

/// Bookkeeping for one in-flight frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub request: Request,
    pub service: ServiceId,
    pub sink: NodeId,
    pub final_stage: u8,
    /// Bits of the static input still to be replicated into the network.
    pub static_bits: Bits,
    pub injected: Bits,
    /// Input bits processed per function.
    pub processed: Vec<Bits>,
    /// Output bits produced per function.
    pub produced: Vec<Bits>,
    pub delivered: Bits,
    pub expected: Bits,
}

impl FrameRecord {
    pub fn awaiting_injection(&self) -> Bits {
        self.static_bits - self.injected
    }
}

/// Run-long counters used by the invariant audits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTotals {
    /// Input bits processed, per stage.
    pub processed: Vec<u128>,
    /// Output bits created, per producing stage.
    pub created: Vec<u128>,
    pub replicated: u128,
    pub delivered: u128,
    pub transmitted: u128,
}

impl FlowTotals {
    fn bump(v: &mut Vec<u128>, stage: u8, bits: Bits) {
        let k = stage as usize;
        if v.len() <= k {
            v.resize(k + 1, 0);
        }
        v[k] += bits as u128;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransmitFlow {
    pub from: NodeId,
    pub to: NodeId,
    pub commodity: Commodity,
    /// Allocated bits; at most the available backlog actually moves.
    pub bits: Bits,
    /// Restrict the flow to one request's bits; `None` serves the queue FIFO.
    pub request: Option<RequestId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessFlow {
    pub node: NodeId,
    /// Input commodity; its stage selects the function.
    pub commodity: Commodity,
    /// Allocated input bits.
    pub bits: Bits,
    pub request: Option<RequestId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateFlow {
    pub node: NodeId,
    pub request: RequestId,
    pub bits: Bits,
}

/// Transmission, processing and replication amounts for one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowDecision {
    pub transmit: Vec<TransmitFlow>,
    pub process: Vec<ProcessFlow>,
    pub replicate: Vec<ReplicateFlow>,
}

impl FlowDecision {
    pub fn is_empty(&self) -> bool {
        self.transmit.is_empty() && self.process.is_empty() && self.replicate.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Transmit { from: NodeId, to: NodeId },
    Process { node: NodeId },
    Replicate { node: NodeId },
}

/// One realised piece of flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Movement {
    pub kind: MoveKind,
    pub request: RequestId,
    /// Commodity the bits left (the injected commodity for replication).
    pub commodity: Commodity,
    pub bits: Bits,
    /// For processing: output commodity and bits created.
    pub output: Option<(Commodity, Bits)>,
    /// Whether the resulting bits reached their sink and left the network.
    pub delivered: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowReport {
    pub moves: Vec<Movement>,
    /// Requests that received final-stage bits at their sink this slot.
    pub delivered: BTreeSet<RequestId>,
    /// Cycles spent per node.
    pub cycles: BTreeMap<NodeId, u64>,
    /// Bits carried per link.
    pub link_bits: BTreeMap<(NodeId, NodeId), Bits>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    pub request: Request,
    pub completion_slot: u64,
    pub delay_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Completion {
    Delivered(DeliveryRecord),
    Pending,
}

/// Cycles needed to process `bits` at `workload` cycles per bit.
pub fn cycles_for(bits: Bits, workload: f64) -> u64 {
    (bits as f64 * workload).ceil() as u64
}

/// Largest bit count whose processing fits in `cycles`.
pub fn bits_within(cycles: u64, workload: f64) -> Bits {
    if workload <= 0.0 {
        return Bits::MAX;
    }
    let mut bits = (cycles as f64 / workload).floor() as Bits;
    while bits > 0 && cycles_for(bits, workload) > cycles {
        bits -= 1;
    }
    bits
}

/// The per-node, per-commodity queue state `Q(t)` plus the frame ledger.
#[derive(Debug, Clone, Default)]
pub struct QueueTable {
    slot: u64,
    queues: BTreeMap<(NodeId, Commodity), CommodityQueue>,
    frames: BTreeMap<RequestId, FrameRecord>,
    awaiting: BTreeSet<RequestId>,
    completed: BTreeSet<RequestId>,
    totals: FlowTotals,
    total_backlog: u128,
}

fn stage_function<'a>(
    services: &'a ServiceRegistry,
    c: &Commodity,
) -> Result<(&'a ServiceDag, &'a ServiceFunction), QueueError> {
    let dag = services.get(c.service).ok_or(QueueError::UnknownStage(*c))?;
    let f = dag.function(c.stage).ok_or(QueueError::UnknownStage(*c))?;
    Ok((dag, f))
}

impl QueueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn totals(&self) -> &FlowTotals {
        &self.totals
    }

    /// Track a new request. Its static input becomes replicable and its output expected.
    pub fn register(&mut self, request: Request, dag: &ServiceDag) -> Result<(), QueueError> {
        if self.frames.contains_key(&request.id) || self.completed.contains(&request.id) {
            return Err(QueueError::DuplicateRequest(request.id));
        }
        let final_stage = dag.final_stage();
        let static_bits = dag.static_input().map(|s| s.unit_bits).unwrap_or(0);
        self.frames.insert(
            request.id,
            FrameRecord {
                request,
                service: request.service(),
                sink: dag.sink,
                final_stage,
                static_bits,
                injected: 0,
                processed: vec![0; final_stage as usize],
                produced: vec![0; final_stage as usize],
                delivered: 0,
                expected: dag.stage_bits(final_stage),
            },
        );
        if static_bits > 0 {
            self.awaiting.insert(request.id);
        }
        Ok(())
    }

    pub fn frame(&self, id: RequestId) -> Option<&FrameRecord> {
        self.frames.get(&id)
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.values()
    }

    /// Requests whose static input has not been fully replicated yet, by id.
    pub fn awaiting_injection(&self) -> impl Iterator<Item = &FrameRecord> + '_ {
        self.awaiting.iter().map(|id| &self.frames[id])
    }

    pub fn in_flight(&self) -> usize {
        self.frames.len()
    }

    pub fn backlog(&self, node: NodeId, c: &Commodity) -> Bits {
        self.queues.get(&(node, *c)).map_or(0, |q| q.backlog)
    }

    pub fn total_backlog(&self) -> u128 {
        self.total_backlog
    }

    /// Non-empty commodities queued at `node`.
    pub fn commodities_at(&self, node: NodeId) -> impl Iterator<Item = (Commodity, Bits)> + '_ {
        let lo = Commodity {
            service: ServiceId(0),
            stage: 0,
            object: None,
        };
        self.queues
            .range((node, lo)..)
            .take_while(move |((n, _), _)| *n == node)
            .map(|((_, c), q)| (*c, q.backlog))
    }

    /// Backlog of one service stage at a node, summed over objects.
    pub fn stage_backlog(&self, node: NodeId, service: ServiceId, stage: u8) -> Bits {
        let lo = Commodity {
            service,
            stage,
            object: None,
        };
        self.queues
            .range((node, lo)..)
            .take_while(|((n, c), _)| *n == node && c.service == service && c.stage == stage)
            .map(|(_, q)| q.backlog)
            .sum()
    }

    pub fn chunks(&self, node: NodeId, c: &Commodity) -> impl Iterator<Item = &Chunk> {
        self.queues.get(&(node, *c)).into_iter().flat_map(|q| q.chunks.iter())
    }

    /// Bits of `request` queued at `(node, c)`.
    pub fn request_bits(&self, node: NodeId, c: &Commodity, request: RequestId) -> Bits {
        self.chunks(node, c)
            .filter(|ch| ch.request == request)
            .map(|ch| ch.bits)
            .sum()
    }

    /// `Q_i(c) - Q_j(c)`; absent queues read as empty.
    pub fn differential_backlog(&self, i: NodeId, j: NodeId, c: &Commodity) -> i64 {
        self.backlog(i, c) as i64 - self.backlog(j, c) as i64
    }

    /// Max-weight processing differential `Q_i(k) - xi * Q_i(k+1)` for one service stage.
    pub fn processing_utility(&self, node: NodeId, service: ServiceId, stage: u8, xi: f64) -> f64 {
        let input = self.stage_backlog(node, service, stage) as f64;
        let output = self.stage_backlog(node, service, stage + 1) as f64;
        input - xi * output
    }

    /// Aggregated `(node, service, stage, bits)` rows, for trajectory export.
    pub fn stage_rows(&self) -> Vec<(NodeId, ServiceId, u8, Bits)> {
        let mut rows: BTreeMap<(NodeId, ServiceId, u8), Bits> = BTreeMap::new();
        for ((n, c), q) in &self.queues {
            *rows.entry((*n, c.service, c.stage)).or_default() += q.backlog;
        }
        rows.into_iter().map(|((n, s, k), b)| (n, s, k, b)).collect()
    }

    fn take(
        &mut self,
        key: (NodeId, Commodity),
        request: Option<RequestId>,
        max: Bits,
        per_request_cap: Bits,
    ) -> Vec<(RequestId, Bits)> {
        let mut out: Vec<(RequestId, Bits)> = Vec::new();
        let Some(q) = self.queues.get_mut(&key) else {
            return out;
        };
        let mut remaining = max;
        for ch in q.chunks.iter_mut() {
            if remaining == 0 {
                break;
            }
            if request.is_some_and(|r| r != ch.request) {
                continue;
            }
            let already = out
                .iter()
                .find(|(r, _)| *r == ch.request)
                .map_or(0, |(_, b)| *b);
            let amount = ch.bits.min(remaining).min(per_request_cap - already);
            if amount == 0 {
                continue;
            }
            ch.bits -= amount;
            remaining -= amount;
            match out.iter_mut().find(|(r, _)| *r == ch.request) {
                Some((_, b)) => *b += amount,
                None => out.push((ch.request, amount)),
            }
        }
        let taken: Bits = max - remaining;
        q.backlog -= taken;
        q.chunks.retain(|ch| ch.bits > 0);
        if q.backlog == 0 {
            self.queues.remove(&key);
        }
        self.total_backlog -= taken as u128;
        out
    }

    fn push(&mut self, node: NodeId, c: Commodity, request: RequestId, bits: Bits) {
        if bits == 0 {
            return;
        }
        let q = self.queues.entry((node, c)).or_default();
        q.backlog += bits;
        match q.chunks.back_mut() {
            Some(ch) if ch.request == request => ch.bits += bits,
            _ => q.chunks.push_back(Chunk { request, bits }),
        }
        self.total_backlog += bits as u128;
    }

    fn validate(
        &self,
        d: &FlowDecision,
        caps: &CapacitySnapshot,
        services: &ServiceRegistry,
        net: &NetworkState,
    ) -> Result<(), QueueError> {
        let mut per_link: BTreeMap<(NodeId, NodeId), Bits> = BTreeMap::new();
        for t in &d.transmit {
            *per_link.entry((t.from, t.to)).or_default() += t.bits;
        }
        for (&(from, to), &bits) in &per_link {
            let cap = caps.link(from, to);
            if bits > cap {
                return Err(QueueError::Capacity {
                    resource: format!("link {from}->{to}"),
                    requested: bits,
                    capacity: cap,
                });
            }
        }
        let mut per_node: BTreeMap<NodeId, u64> = BTreeMap::new();
        let mut per_frame: BTreeMap<(NodeId, RequestId), u64> = BTreeMap::new();
        for p in &d.process {
            let (_, f) = stage_function(services, &p.commodity)?;
            let cycles = cycles_for(p.bits, f.workload_cycles_per_bit);
            *per_node.entry(p.node).or_default() += cycles;
            if let Some(r) = p.request {
                *per_frame.entry((p.node, r)).or_default() += cycles;
            }
        }
        for (&node, &cycles) in &per_node {
            let cap = caps.cycles(node);
            if cycles > cap {
                return Err(QueueError::Capacity {
                    resource: format!("processors at {node}"),
                    requested: cycles,
                    capacity: cap,
                });
            }
        }
        for (&(node, r), &cycles) in &per_frame {
            let cap = caps.per_server_cycles(node);
            if cycles > cap {
                return Err(QueueError::Capacity {
                    resource: format!("one processor at {node} for {r}"),
                    requested: cycles,
                    capacity: cap,
                });
            }
        }
        let mut injected: BTreeMap<RequestId, Bits> = BTreeMap::new();
        for rep in &d.replicate {
            let frame = self
                .frames
                .get(&rep.request)
                .ok_or(QueueError::UnknownRequest(rep.request))?;
            if !net.caches(rep.node, frame.request.object) {
                return Err(QueueError::Provenance {
                    request: rep.request,
                    node: rep.node,
                });
            }
            let total = injected.entry(rep.request).or_default();
            *total += rep.bits;
            if *total > frame.awaiting_injection() {
                return Err(QueueError::OverReplication {
                    request: rep.request,
                });
            }
        }
        Ok(())
    }

    /// Apply one slot of flows.
    ///
    /// Departures are taken from the backlog at the start of the slot (an allocation
    /// larger than the backlog moves only what is there); arrivals, processing output and
    /// replicas are queued at the end of the slot. Final-stage bits reaching their sink
    /// leave the network. A decision violating capacities or replication provenance is
    /// rejected without touching the table.
    pub fn apply_flows(
        &mut self,
        d: &FlowDecision,
        caps: &CapacitySnapshot,
        services: &ServiceRegistry,
        net: &NetworkState,
    ) -> Result<FlowReport, QueueError> {
        self.validate(d, caps, services, net)?;
        let mut report = FlowReport::default();
        let mut arrivals: Vec<(NodeId, Commodity, RequestId, Bits)> = Vec::new();

        for t in &d.transmit {
            let key = (t.from, t.commodity);
            for (request, bits) in self.take(key, t.request, t.bits, Bits::MAX) {
                let frame = self.frames.get_mut(&request).expect("ledger entry without frame");
                let delivered = t.commodity.stage == frame.final_stage && t.to == frame.sink;
                if delivered {
                    frame.delivered += bits;
                    self.totals.delivered += bits as u128;
                    report.delivered.insert(request);
                } else {
                    arrivals.push((t.to, t.commodity, request, bits));
                }
                self.totals.transmitted += bits as u128;
                *report.link_bits.entry((t.from, t.to)).or_default() += bits;
                report.moves.push(Movement {
                    kind: MoveKind::Transmit {
                        from: t.from,
                        to: t.to,
                    },
                    request,
                    commodity: t.commodity,
                    bits,
                    output: None,
                    delivered,
                });
            }
        }

        for p in &d.process {
            let (_, f) = stage_function(services, &p.commodity)?;
            let (workload, xi) = (f.workload_cycles_per_bit, f.scaling_factor);
            let cap = match p.request {
                Some(_) => Bits::MAX,
                None => bits_within(caps.per_server_cycles(p.node), workload),
            };
            let stage = p.commodity.stage;
            let out_c = Commodity::stage(p.commodity.service, stage + 1);
            for (request, bits) in self.take((p.node, p.commodity), p.request, p.bits, cap) {
                let frame = self.frames.get_mut(&request).expect("ledger entry without frame");
                let k = stage as usize;
                frame.processed[k] += bits;
                let total_out = scale_bits(frame.processed[k], xi);
                let out = total_out - frame.produced[k];
                frame.produced[k] = total_out;
                FlowTotals::bump(&mut self.totals.processed, stage, bits);
                FlowTotals::bump(&mut self.totals.created, stage, out);
                *report.cycles.entry(p.node).or_default() += cycles_for(bits, workload);
                let delivered = stage + 1 == frame.final_stage && p.node == frame.sink;
                if delivered {
                    frame.delivered += out;
                    self.totals.delivered += out as u128;
                    report.delivered.insert(request);
                } else {
                    arrivals.push((p.node, out_c, request, out));
                }
                report.moves.push(Movement {
                    kind: MoveKind::Process { node: p.node },
                    request,
                    commodity: p.commodity,
                    bits,
                    output: Some((out_c, out)),
                    delivered,
                });
            }
        }

        for rep in &d.replicate {
            if rep.bits == 0 {
                continue;
            }
            let frame = self.frames.get_mut(&rep.request).expect("validated");
            frame.injected += rep.bits;
            if frame.awaiting_injection() == 0 {
                self.awaiting.remove(&rep.request);
            }
            let c = Commodity::input(frame.service, frame.request.object);
            self.totals.replicated += rep.bits as u128;
            arrivals.push((rep.node, c, rep.request, rep.bits));
            report.moves.push(Movement {
                kind: MoveKind::Replicate { node: rep.node },
                request: rep.request,
                commodity: c,
                bits: rep.bits,
                output: None,
                delivered: false,
            });
        }

        for (node, c, request, bits) in arrivals {
            self.push(node, c, request, bits);
        }
        self.slot += 1;
        Ok(report)
    }

    /// Emit a delivery record once every output bit of `request` has reached its sink.
    pub fn record_completion(
        &mut self,
        request: RequestId,
        slot: u64,
        slot_duration_s: f64,
    ) -> Result<Completion, QueueError> {
        if self.completed.contains(&request) {
            return Err(QueueError::DuplicateCompletion(request));
        }
        let frame = self
            .frames
            .get(&request)
            .ok_or(QueueError::UnknownRequest(request))?;
        if frame.delivered < frame.expected {
            return Ok(Completion::Pending);
        }
        let req = frame.request;
        self.frames.remove(&request);
        self.awaiting.remove(&request);
        self.completed.insert(request);
        Ok(Completion::Delivered(DeliveryRecord {
            request: req,
            completion_slot: slot,
            delay_s: slot.saturating_sub(req.arrival_slot) as f64 * slot_duration_s,
        }))
    }

    /// Full consistency audit: ledgers sum to backlogs, and every frame's bits are
    /// accounted for by injections, processing and deliveries.
    pub fn check_ledger(&self) -> Result<(), QueueError> {
        let mut total: u128 = 0;
        let mut per_frame: BTreeMap<(RequestId, u8), Bits> = BTreeMap::new();
        for ((node, c), q) in &self.queues {
            let sum: Bits = q.chunks.iter().map(|ch| ch.bits).sum();
            if sum != q.backlog {
                return Err(QueueError::Ledger(format!(
                    "{node} {c:?}: ledger {sum} != backlog {}",
                    q.backlog
                )));
            }
            total += q.backlog as u128;
            for ch in &q.chunks {
                *per_frame.entry((ch.request, c.stage)).or_default() += ch.bits;
            }
        }
        if total != self.total_backlog {
            return Err(QueueError::Ledger(format!(
                "total {total} != tracked {}",
                self.total_backlog
            )));
        }
        for ((r, stage), bits) in &per_frame {
            let f = self
                .frames
                .get(r)
                .ok_or_else(|| QueueError::Ledger(format!("bits queued for finished {r}")))?;
            let k = *stage as usize;
            let entered = if k == 0 { f.injected } else { f.produced[k - 1] };
            let left = if k < f.processed.len() {
                f.processed[k]
            } else {
                f.delivered
            };
            if entered < left || entered - left != *bits {
                return Err(QueueError::Ledger(format!(
                    "{r} stage {stage}: {bits} queued, {entered} in, {left} out"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkParams, NodeKind, NodeSpec, Position, ResourceAllocation};
    use crate::rng::{self, Stream};
    use crate::service::{CacheSet, Catalog, VrProfile};
    use crate::ObjectId;

    const MB: Bits = 1_000_000;

    struct Fixture {
        net: NetworkState,
        services: ServiceRegistry,
        catalog: Catalog,
    }

    fn fixture() -> Fixture {
        let catalog = Catalog::zipf(10, 3 * MB, 1.0).unwrap();
        let nodes = vec![
            NodeSpec {
                id: NodeId(0),
                kind: NodeKind::User,
                position: Position::new(10.0, 10.0),
                proc_capacity_hz: 3e9,
                num_processors: 1,
                storage_fraction: 0.3,
                cache: CacheSet::from_objects(10, [ObjectId(0)]),
            },
            NodeSpec {
                id: NodeId(1),
                kind: NodeKind::User,
                position: Position::new(15.0, 10.0),
                proc_capacity_hz: 3e9,
                num_processors: 1,
                storage_fraction: 0.0,
                cache: CacheSet::empty(10),
            },
            NodeSpec {
                id: NodeId(2),
                kind: NodeKind::BaseStation,
                position: Position::new(50.0, 50.0),
                proc_capacity_hz: 3e9,
                num_processors: 10,
                storage_fraction: 1.0,
                cache: CacheSet::full(10),
            },
        ];
        let net = NetworkState::new(nodes, NetworkParams::default(), rng::stream(0, Stream::Mobility))
            .unwrap();
        let services = ServiceRegistry::vr(&VrProfile::default(), &catalog, [NodeId(0), NodeId(1)]);
        Fixture {
            net,
            services,
            catalog,
        }
    }

    fn request(id: u64, user: u32, object: u32) -> Request {
        Request {
            id: RequestId(id),
            user: NodeId(user),
            object: ObjectId(object),
            arrival_slot: 0,
        }
    }

    fn big_caps(f: &Fixture) -> CapacitySnapshot {
        f.net
            .capacities(&ResourceAllocation {
                bs_users: vec![NodeId(0), NodeId(1)],
                d2d: vec![(NodeId(0), NodeId(1))],
                processors_on: vec![NodeId(0), NodeId(1), NodeId(2)],
            })
            .unwrap()
    }

    #[test]
    fn max_plus_dynamics() {
        let f = fixture();
        let mut q = QueueTable::new();
        let r = request(0, 1, 3);
        q.register(r, f.services.get(r.service()).unwrap()).unwrap();
        let c = Commodity::input(r.service(), r.object);
        q.push(NodeId(2), c, r.id, 5 * MB);
        q.push(NodeId(0), c, r.id, MB);
        let mut caps = CapacitySnapshot::default();
        caps.links.insert((NodeId(2), NodeId(0)), 7 * MB);
        caps.links.insert((NodeId(0), NodeId(2)), 7 * MB);
        // 7 Mb allocated out of a 5 Mb queue; 2 Mb arrive from elsewhere.
        q.frames.get_mut(&r.id).unwrap().injected = 6 * MB;
        let d = FlowDecision {
            transmit: vec![
                TransmitFlow {
                    from: NodeId(2),
                    to: NodeId(0),
                    commodity: c,
                    bits: 7 * MB,
                    request: None,
                },
                TransmitFlow {
                    from: NodeId(0),
                    to: NodeId(2),
                    commodity: c,
                    bits: 7 * MB,
                    request: None,
                },
            ],
            ..Default::default()
        };
        q.apply_flows(&d, &caps, &f.services, &f.net).unwrap();
        assert_eq!(q.backlog(NodeId(2), &c), MB);
        assert_eq!(q.backlog(NodeId(0), &c), 5 * MB);
        q.check_ledger().unwrap();
    }

    #[test]
    fn processing_doubles_into_next_stage() {
        let f = fixture();
        let mut q = QueueTable::new();
        let r = request(0, 1, 3);
        q.register(r, f.services.get(r.service()).unwrap()).unwrap();
        let c0 = Commodity::input(r.service(), r.object);
        let c1 = Commodity::stage(r.service(), 1);
        let caps = big_caps(&f);
        let inject = FlowDecision {
            replicate: vec![ReplicateFlow {
                node: NodeId(2),
                request: r.id,
                bits: 3 * MB,
            }],
            ..Default::default()
        };
        q.apply_flows(&inject, &caps, &f.services, &f.net).unwrap();
        assert_eq!(q.backlog(NodeId(2), &c0), 3 * MB);
        // 10 slots on one 3 GHz processor: 0.3 Mb of input per slot.
        for _ in 0..10 {
            let d = FlowDecision {
                process: vec![ProcessFlow {
                    node: NodeId(2),
                    commodity: c0,
                    bits: 300_000,
                    request: Some(r.id),
                }],
                ..Default::default()
            };
            q.apply_flows(&d, &caps, &f.services, &f.net).unwrap();
        }
        assert_eq!(q.backlog(NodeId(2), &c0), 0);
        assert_eq!(q.backlog(NodeId(2), &c1), 6 * MB);
        assert_eq!(q.totals().created[0], 2 * q.totals().processed[0]);
        q.check_ledger().unwrap();
    }

    #[test]
    fn zero_decision_only_advances_slot() {
        let f = fixture();
        let mut q = QueueTable::new();
        let r = request(0, 0, 0);
        q.register(r, f.services.get(r.service()).unwrap()).unwrap();
        q.push(NodeId(0), Commodity::input(r.service(), r.object), r.id, 42);
        let before = q.stage_rows();
        let rep = q
            .apply_flows(&FlowDecision::default(), &big_caps(&f), &f.services, &f.net)
            .unwrap();
        assert!(rep.moves.is_empty());
        assert_eq!(q.stage_rows(), before);
        assert_eq!(q.slot(), 1);
    }

    #[test]
    fn capacity_violation_rejected_untouched() {
        let f = fixture();
        let mut q = QueueTable::new();
        let r = request(0, 0, 0);
        q.register(r, f.services.get(r.service()).unwrap()).unwrap();
        let c0 = Commodity::input(r.service(), r.object);
        q.push(NodeId(0), c0, r.id, 3 * MB);
        let caps = big_caps(&f);
        let d = FlowDecision {
            process: vec![ProcessFlow {
                node: NodeId(0),
                commodity: c0,
                bits: 300_001,
                request: None,
            }],
            ..Default::default()
        };
        assert!(matches!(
            q.apply_flows(&d, &caps, &f.services, &f.net),
            Err(QueueError::Capacity { .. })
        ));
        assert_eq!(q.backlog(NodeId(0), &c0), 3 * MB);
        assert_eq!(q.slot(), 0);
    }

    #[test]
    fn replication_requires_cached_object() {
        let f = fixture();
        let mut q = QueueTable::new();
        let r = request(0, 0, 5);
        q.register(r, f.services.get(r.service()).unwrap()).unwrap();
        let d = FlowDecision {
            replicate: vec![ReplicateFlow {
                node: NodeId(0),
                request: r.id,
                bits: 3 * MB,
            }],
            ..Default::default()
        };
        assert_eq!(
            q.apply_flows(&d, &big_caps(&f), &f.services, &f.net),
            Err(QueueError::Provenance {
                request: r.id,
                node: NodeId(0)
            })
        );
        let twice = FlowDecision {
            replicate: vec![
                ReplicateFlow {
                    node: NodeId(2),
                    request: r.id,
                    bits: 3 * MB,
                },
                ReplicateFlow {
                    node: NodeId(2),
                    request: r.id,
                    bits: 1,
                },
            ],
            ..Default::default()
        };
        assert!(matches!(
            q.apply_flows(&twice, &big_caps(&f), &f.services, &f.net),
            Err(QueueError::OverReplication { .. })
        ));
        let _ = &f.catalog;
    }

    #[test]
    fn differentials() {
        let mut q = QueueTable::new();
        let c = Commodity::stage(ServiceId(0), 1);
        assert_eq!(q.differential_backlog(NodeId(0), NodeId(1), &c), 0);
        q.push(NodeId(0), c, RequestId(0), 10 * MB);
        q.push(NodeId(1), c, RequestId(0), 4 * MB);
        assert_eq!(q.differential_backlog(NodeId(0), NodeId(1), &c), 6 * MB as i64);
        assert_eq!(q.differential_backlog(NodeId(0), NodeId(0), &c), 0);
    }

    #[test]
    fn processing_utility_forms() {
        let mut q = QueueTable::new();
        let s = ServiceId(0);
        q.push(NodeId(0), Commodity::input(s, ObjectId(1)), RequestId(0), 6);
        q.push(NodeId(0), Commodity::input(s, ObjectId(2)), RequestId(1), 4);
        q.push(NodeId(0), Commodity::stage(s, 1), RequestId(2), 2);
        assert_eq!(q.processing_utility(NodeId(0), s, 0, 2.0), 6.0);
        assert_eq!(q.processing_utility(NodeId(0), s, 0, 1.0), 8.0);
        assert!(q.processing_utility(NodeId(1), s, 0, 2.0) <= 0.0);
    }

    #[test]
    fn completion_delay_and_duplicates() {
        let f = fixture();
        let mut q = QueueTable::new();
        let r = Request {
            arrival_slot: 5,
            ..request(0, 0, 0)
        };
        q.register(r, f.services.get(r.service()).unwrap()).unwrap();
        assert_eq!(q.record_completion(r.id, 10, 1e-3), Ok(Completion::Pending));
        q.frames.get_mut(&r.id).unwrap().delivered = 6 * MB;
        match q.record_completion(r.id, 25, 1e-3).unwrap() {
            Completion::Delivered(d) => assert!((d.delay_s - 0.020).abs() < 1e-15),
            Completion::Pending => panic!("should complete"),
        }
        assert_eq!(
            q.record_completion(r.id, 26, 1e-3),
            Err(QueueError::DuplicateCompletion(r.id))
        );
    }

    #[test]
    fn bits_within_never_exceeds_cycles() {
        for &w in &[10.0, 3.3, 0.7, 1.0 / 3.0] {
            for &c in &[0u64, 1, 9, 3_000_000, 1_950_000] {
                let b = bits_within(c, w);
                assert!(cycles_for(b, w) <= c);
                assert!(cycles_for(b + 1, w) > c);
            }
        }
    }
}
