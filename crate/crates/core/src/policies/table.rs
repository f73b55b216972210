//! Per-request next-hop tables and the index of bits waiting at each hop.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::{Bits, NodeId, RequestId};
use crate::queueing::{FlowReport, MoveKind};
use crate::service::Commodity;

use super::route::{Hop, RouteAssignment};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RouteError {
    #[error("{request} already has a route")]
    Duplicate { request: RequestId },
    #[error("{request} has no next hop for stage {stage} at {node}")]
    Gap {
        request: RequestId,
        stage: u8,
        node: NodeId,
    },
    #[error("{request}: hop index out of step with the queues")]
    Index { request: RequestId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Forward(NodeId),
    Process,
}

#[derive(Debug, Clone)]
struct Route {
    sink: NodeId,
    next: BTreeMap<(u8, NodeId), Step>,
}

/// Bits waiting at one hop, per `(request, stage)` in FIFO (request id) order.
#[derive(Debug, Clone, Default)]
pub struct HopQueue {
    pub total: Bits,
    pub entries: BTreeMap<(RequestId, u8), (Commodity, Bits)>,
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    routes: BTreeMap<RequestId, Route>,
    assignments: BTreeMap<RequestId, RouteAssignment>,
    ready: BTreeMap<Hop, HopQueue>,
}

fn hop_of(node: NodeId, step: Step) -> Hop {
    match step {
        Step::Forward(j) => Hop::Link(node, j),
        Step::Process => Hop::Process(node),
    }
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn assignment(&self, r: RequestId) -> Option<&RouteAssignment> {
        self.assignments.get(&r)
    }

    pub fn contains(&self, r: RequestId) -> bool {
        self.routes.contains_key(&r)
    }

    /// Install a route for a request whose output is delivered at `sink`.
    pub fn insert(&mut self, a: RouteAssignment, sink: NodeId) -> Result<(), RouteError> {
        if self.routes.contains_key(&a.request) {
            return Err(RouteError::Duplicate { request: a.request });
        }
        let mut next = BTreeMap::new();
        let mut at = a.cache_node;
        for &n in &a.static_path {
            next.insert((0, at), Step::Forward(n));
            at = n;
        }
        next.insert((0, at), Step::Process);
        for &n in &a.delivery_path {
            next.insert((1, at), Step::Forward(n));
            at = n;
        }
        self.routes.insert(a.request, Route { sink, next });
        self.assignments.insert(a.request, a);
        Ok(())
    }

    pub fn remove(&mut self, r: RequestId) {
        self.routes.remove(&r);
        self.assignments.remove(&r);
    }

    pub fn next_step(&self, r: RequestId, stage: u8, node: NodeId) -> Option<Step> {
        self.routes.get(&r)?.next.get(&(stage, node)).copied()
    }

    pub fn hop_total(&self, hop: &Hop) -> Bits {
        self.ready.get(hop).map_or(0, |q| q.total)
    }

    pub fn hop(&self, hop: &Hop) -> Option<&HopQueue> {
        self.ready.get(hop)
    }

    /// Non-empty hops in order.
    pub fn hops(&self) -> impl Iterator<Item = (&Hop, &HopQueue)> {
        self.ready.iter()
    }

    /// Non-empty hops leaving the links of `node`.
    pub fn links_from(&self, node: NodeId) -> impl Iterator<Item = (NodeId, &HopQueue)> {
        self.ready
            .range(Hop::Link(node, NodeId(0))..=Hop::Link(node, NodeId(u32::MAX)))
            .filter_map(|(h, q)| match h {
                Hop::Link(_, j) => Some((*j, q)),
                Hop::Process(_) => None,
            })
    }

    fn add(&mut self, hop: Hop, r: RequestId, c: Commodity, bits: Bits) {
        if bits == 0 {
            return;
        }
        let q = self.ready.entry(hop).or_default();
        q.total += bits;
        q.entries.entry((r, c.stage)).or_insert((c, 0)).1 += bits;
    }

    fn sub(&mut self, hop: Hop, r: RequestId, stage: u8, bits: Bits) -> Result<(), RouteError> {
        if bits == 0 {
            return Ok(());
        }
        let err = RouteError::Index { request: r };
        let q = self.ready.get_mut(&hop).ok_or_else(|| err.clone())?;
        let e = q.entries.get_mut(&(r, stage)).ok_or_else(|| err.clone())?;
        if e.1 < bits {
            return Err(err);
        }
        e.1 -= bits;
        q.total -= bits;
        if e.1 == 0 {
            q.entries.remove(&(r, stage));
        }
        if q.total == 0 {
            self.ready.remove(&hop);
        }
        Ok(())
    }

    /// Record `bits` of `r` arriving at `node` in commodity `c`, unless they are final
    /// output sitting at the sink.
    pub fn arrive(&mut self, r: RequestId, node: NodeId, c: Commodity, bits: Bits) -> Result<(), RouteError> {
        let route = self.routes.get(&r).ok_or(RouteError::Gap {
            request: r,
            stage: c.stage,
            node,
        })?;
        if c.stage == 1 && node == route.sink {
            return Ok(());
        }
        let step = route.next.get(&(c.stage, node)).copied().ok_or(RouteError::Gap {
            request: r,
            stage: c.stage,
            node,
        })?;
        self.add(hop_of(node, step), r, c, bits);
        Ok(())
    }

    /// Keep the index in step with one slot of realised flows.
    pub fn apply_report(&mut self, report: &FlowReport) -> Result<(), RouteError> {
        for m in &report.moves {
            if !self.routes.contains_key(&m.request) {
                continue;
            }
            match m.kind {
                MoveKind::Transmit { from, to } => {
                    self.sub(Hop::Link(from, to), m.request, m.commodity.stage, m.bits)?;
                    if !m.delivered {
                        self.arrive(m.request, to, m.commodity, m.bits)?;
                    }
                }
                MoveKind::Process { node } => {
                    self.sub(Hop::Process(node), m.request, m.commodity.stage, m.bits)?;
                    if let Some((c, out)) = m.output {
                        if !m.delivered {
                            self.arrive(m.request, node, c, out)?;
                        }
                    }
                }
                MoveKind::Replicate { node } => {
                    self.arrive(m.request, node, m.commodity, m.bits)?;
                }
            }
        }
        Ok(())
    }

    /// Point `r`'s bits of `stage` at `node` to a new step, moving whatever already waits
    /// at the old hop.
    pub fn set_next(&mut self, r: RequestId, stage: u8, node: NodeId, step: Step) -> Result<(), RouteError> {
        let Some(route) = self.routes.get_mut(&r) else {
            return Err(RouteError::Gap {
                request: r,
                stage,
                node,
            });
        };
        let old = route.next.insert((stage, node), step);
        if let Some(old) = old.filter(|&o| o != step) {
            let old_hop = hop_of(node, old);
            let moved = self
                .ready
                .get(&old_hop)
                .and_then(|q| q.entries.get(&(r, stage)).copied());
            if let Some((c, bits)) = moved {
                self.sub(old_hop, r, stage, bits)?;
                self.add(hop_of(node, step), r, c, bits);
            }
        }
        Ok(())
    }

    /// `(request, stage, commodity, bits)` waiting on a hop, in FIFO order.
    pub fn waiting(&self, hop: &Hop) -> Vec<(RequestId, u8, Commodity, Bits)> {
        self.ready.get(hop).map_or_else(Vec::new, |q| {
            q.entries
                .iter()
                .map(|(&(r, s), &(c, b))| (r, s, c, b))
                .collect()
        })
    }

    /// Total bits indexed over all hops.
    pub fn total_ready(&self) -> u128 {
        self.ready.values().map(|q| q.total as u128).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{ObjectId, ServiceId};
    use crate::queueing::Movement;

    fn assignment() -> RouteAssignment {
        RouteAssignment {
            request: RequestId(7),
            cache_node: NodeId(3),
            proc_node: NodeId(1),
            static_path: vec![NodeId(2), NodeId(1)],
            delivery_path: vec![NodeId(0)],
            cost: 0.0,
        }
    }

    #[test]
    fn follows_a_route_to_the_sink() {
        let mut t = RouteTable::new();
        t.insert(assignment(), NodeId(0)).unwrap();
        let r = RequestId(7);
        let c0 = Commodity::input(ServiceId(0), ObjectId(4));
        let c1 = Commodity::stage(ServiceId(0), 1);
        let mut rep = FlowReport::default();
        rep.moves.push(Movement {
            kind: MoveKind::Replicate { node: NodeId(3) },
            request: r,
            commodity: c0,
            bits: 30,
            output: None,
            delivered: false,
        });
        t.apply_report(&rep).unwrap();
        assert_eq!(t.hop_total(&Hop::Link(NodeId(3), NodeId(2))), 30);
        let mut rep = FlowReport::default();
        rep.moves.push(Movement {
            kind: MoveKind::Transmit {
                from: NodeId(3),
                to: NodeId(2),
            },
            request: r,
            commodity: c0,
            bits: 10,
            output: None,
            delivered: false,
        });
        t.apply_report(&rep).unwrap();
        assert_eq!(t.hop_total(&Hop::Link(NodeId(3), NodeId(2))), 20);
        assert_eq!(t.hop_total(&Hop::Link(NodeId(2), NodeId(1))), 10);
        t.arrive(r, NodeId(1), c0, 5).unwrap();
        assert_eq!(t.hop_total(&Hop::Process(NodeId(1))), 5);
        t.arrive(r, NodeId(1), c1, 10).unwrap();
        assert_eq!(t.hop_total(&Hop::Link(NodeId(1), NodeId(0))), 10);
        t.arrive(r, NodeId(0), c1, 10).unwrap();
        assert_eq!(t.total_ready(), 45);
    }

    #[test]
    fn rerouting_moves_waiting_bits() {
        let mut t = RouteTable::new();
        t.insert(assignment(), NodeId(0)).unwrap();
        let r = RequestId(7);
        let c0 = Commodity::input(ServiceId(0), ObjectId(4));
        t.arrive(r, NodeId(3), c0, 30).unwrap();
        t.set_next(r, 0, NodeId(3), Step::Process).unwrap();
        assert_eq!(t.hop_total(&Hop::Link(NodeId(3), NodeId(2))), 0);
        assert_eq!(t.hop_total(&Hop::Process(NodeId(3))), 30);
        assert_eq!(t.total_ready(), 30);
    }

    #[test]
    fn missing_hops_are_errors() {
        let mut t = RouteTable::new();
        t.insert(assignment(), NodeId(0)).unwrap();
        let c0 = Commodity::input(ServiceId(0), ObjectId(4));
        assert!(t.arrive(RequestId(7), NodeId(0), c0, 1).is_err());
        assert!(t.insert(assignment(), NodeId(0)).is_err());
    }
}
