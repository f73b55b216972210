//! Distributed max-weight control on differential backlogs.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{Bits, NodeId, RequestId, ServiceId};
use crate::network::ResourceAllocation;
use crate::queueing::{bits_within, FlowDecision, QueueTable, ReplicateFlow, TransmitFlow};
use crate::service::Commodity;

use super::schedule::{bs_schedule, fill_processors, greedy_matching};
use super::{Action, PolicyContext, PolicyError};

/// Commodities queued at each node, largest backlog first (ties by commodity).
fn sorted_backlogs(q: &QueueTable, nodes: impl Iterator<Item = NodeId>) -> BTreeMap<NodeId, Vec<(Commodity, Bits)>> {
    let mut out = BTreeMap::new();
    for n in nodes {
        let mut v: Vec<(Commodity, Bits)> = q.commodities_at(n).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out.insert(n, v);
    }
    out
}

/// Commodity with the largest positive `Q_i(c) - Q_j(c) - v`, ties to the lowest commodity.
/// `at_i` lists node `i`'s backlogs, largest first.
fn best_commodity(
    q: &QueueTable,
    at_i: &[(Commodity, Bits)],
    j: NodeId,
    v: f64,
) -> Option<(Commodity, f64)> {
    let mut best: Option<(Commodity, f64)> = None;
    for &(c, qi) in at_i {
        let upper = qi as f64 - v;
        if upper <= 0.0 || best.is_some_and(|b| upper < b.1) {
            break;
        }
        let w = upper - q.backlog(j, &c) as f64;
        let better = match best {
            None => w > 0.0,
            Some((bc, bw)) => w > bw || (w == bw && c < bc),
        };
        if better {
            best = Some((c, w));
        }
    }
    best
}

/// Max-weight processing candidates at a node, best first: `(service, stage, weight)`.
pub fn processing_candidates(
    ctx: &PolicyContext<'_>,
    node: NodeId,
    v: f64,
) -> Result<Vec<(ServiceId, u8, f64)>, PolicyError> {
    let q = ctx.queues;
    let stages: BTreeSet<(ServiceId, u8)> = q
        .commodities_at(node)
        .map(|(c, _)| (c.service, c.stage))
        .collect();
    let mut out = Vec::new();
    for (s, k) in stages {
        let dag = ctx.services.get(s).ok_or(PolicyError::UnknownService(s))?;
        let Some(f) = dag.function(k) else { continue };
        let w = q.processing_utility(node, s, k, f.scaling_factor) - v * f.workload_cycles_per_bit;
        if w > 0.0 {
            out.push((s, k, w));
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    Ok(out)
}

/// One slot of differential-backlog control.
///
/// Every scheduled link ships the commodity with the largest positive differential at
/// full capacity; D2D pairs are matched greedily by differential times capacity, the
/// downlink serves the users with the most base-station backlog for their services. Each
/// processor takes the stage with the largest positive `Q(k) - xi * Q(k+1)`, one frame per
/// processor. A pending request's object is replicated at the least loaded node caching it
/// (its user, a neighbor or the base station) whose queue for that commodity is empty.
/// `v` is subtracted per transmitted bit and per processing cycle.
pub fn dcnc_decide(ctx: &PolicyContext<'_>, v: f64) -> Result<Action, PolicyError> {
    let net = ctx.network;
    let q = ctx.queues;
    let bs = net.base_station();
    let mut flows = FlowDecision::default();

    let mut sink_backlog: BTreeMap<NodeId, Bits> = BTreeMap::new();
    for (c, bits) in q.commodities_at(bs) {
        let dag = ctx.services.get(c.service).ok_or(PolicyError::UnknownService(c.service))?;
        *sink_backlog.entry(dag.sink).or_default() += bits;
    }
    let bs_users = bs_schedule(
        sink_backlog.into_iter().filter(|(u, _)| net.is_user(*u)),
        net.params().bs_fanout as usize,
    );
    let sorted = sorted_backlogs(q, net.nodes().iter().map(|n| n.id));
    let bs_bits = net.bs_link_bits();
    let at_bs = sorted.get(&bs).map_or(&[][..], |v| v.as_slice());
    for &u in &bs_users {
        if let Some((c, _)) = best_commodity(q, at_bs, u, v) {
            flows.transmit.push(TransmitFlow {
                from: bs,
                to: u,
                commodity: c,
                bits: bs_bits,
                request: None,
            });
        }
    }

    let mut cands = Vec::new();
    let mut best_on: BTreeMap<(NodeId, NodeId), Commodity> = BTreeMap::new();
    let users: Vec<NodeId> = net.user_ids().collect();
    let mut neighbors: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (a, &i) in users.iter().enumerate() {
        for &j in &users[a + 1..] {
            if net.in_d2d_range(i, j) {
                neighbors.entry(i).or_default().push(j);
                neighbors.entry(j).or_default().push(i);
            }
        }
    }
    for (&i, at_i) in &sorted {
        if !net.is_user(i) {
            continue;
        }
        for &j in neighbors.get(&i).map_or(&[][..], |v| v.as_slice()) {
            let cap = net.d2d_link_bits(i, j);
            if cap == 0 {
                continue;
            }
            if let Some((c, w)) = best_commodity(q, at_i, j, v) {
                cands.push((w * cap as f64, i, j));
                best_on.insert((i, j), c);
            }
        }
    }
    let busy: BTreeSet<NodeId> = if net.params().bs_and_d2d_same_slot {
        BTreeSet::new()
    } else {
        bs_users.iter().copied().collect()
    };
    let d2d = greedy_matching(cands, &busy);
    for &(i, j) in &d2d {
        flows.transmit.push(TransmitFlow {
            from: i,
            to: j,
            commodity: best_on[&(i, j)],
            bits: net.d2d_link_bits(i, j),
            request: None,
        });
    }

    let mut processors_on = Vec::new();
    for spec in net.nodes() {
        let per = net.processor_cycles(spec.id);
        if per == 0 || spec.num_processors == 0 {
            continue;
        }
        let cands = processing_candidates(ctx, spec.id, v)?;
        if cands.is_empty() {
            continue;
        }
        let mut free = spec.num_processors;
        for (s, k, _) in cands {
            if free == 0 {
                break;
            }
            let w = ctx
                .services
                .get(s)
                .and_then(|d| d.function(k))
                .map_or(0.0, |f| f.workload_cycles_per_bit);
            let mut frames: BTreeMap<RequestId, (Commodity, Bits)> = BTreeMap::new();
            for (c, _) in q.commodities_at(spec.id) {
                if c.service == s && c.stage == k {
                    for ch in q.chunks(spec.id, &c) {
                        frames.entry(ch.request).or_insert((c, 0)).1 += ch.bits;
                    }
                }
            }
            let before = flows.process.len();
            fill_processors(
                spec.id,
                free,
                per,
                frames.into_iter().map(|(r, (c, b))| (r, c, b, w)),
                &mut flows.process,
            );
            free -= (flows.process.len() - before) as u32;
        }
        processors_on.push(spec.id);
    }

    let mut filled: BTreeSet<(NodeId, Commodity)> = BTreeSet::new();
    let mut stage0_load: BTreeMap<NodeId, Bits> = BTreeMap::new();
    for f in q.awaiting_injection() {
        let obj = f.request.object;
        let c = Commodity::input(f.service, obj);
        let mut nodes: BTreeSet<NodeId> = BTreeSet::new();
        if net.is_user(f.sink) {
            nodes.insert(f.sink);
            nodes.extend(neighbors.get(&f.sink).into_iter().flatten().copied());
        }
        nodes.insert(bs);
        let mut choice: Option<(Bits, NodeId)> = None;
        for n in nodes {
            if !net.caches(n, obj) || q.backlog(n, &c) > 0 || filled.contains(&(n, c)) {
                continue;
            }
            let load = *stage0_load.entry(n).or_insert_with(|| {
                q.commodities_at(n)
                    .filter(|(c, _)| c.stage == 0)
                    .map(|(_, b)| b)
                    .sum()
            });
            if choice.is_none_or(|best| (load, n) < best) {
                choice = Some((load, n));
            }
        }
        if let Some((_, n)) = choice {
            let bits = f.awaiting_injection();
            filled.insert((n, c));
            *stage0_load.entry(n).or_default() += bits;
            flows.replicate.push(ReplicateFlow {
                node: n,
                request: f.request.id,
                bits,
            });
        }
    }

    Ok(Action {
        alloc: ResourceAllocation {
            bs_users,
            d2d,
            processors_on,
        },
        flows,
    })
}

/// Largest processing weight any single-node action can achieve: total processed bits
/// times the per-bit utility, over every way to hand frames to processors.
pub fn max_processing_weight(ctx: &PolicyContext<'_>, node: NodeId, v: f64) -> Result<f64, PolicyError> {
    let spec = ctx.network.node(node)?;
    let per = ctx.network.processor_cycles(node);
    let q = ctx.queues;
    let mut options: Vec<(f64, Bits)> = Vec::new();
    for (s, k, w) in processing_candidates(ctx, node, v)? {
        let f = ctx.services.get(s).and_then(|d| d.function(k)).expect("candidate");
        let mut per_frame: BTreeMap<RequestId, Bits> = BTreeMap::new();
        for (c, _) in q.commodities_at(node) {
            if c.service == s && c.stage == k {
                for ch in q.chunks(node, &c) {
                    *per_frame.entry(ch.request).or_default() += ch.bits;
                }
            }
        }
        for b in per_frame.values() {
            options.push((w, (*b).min(bits_within(per, f.workload_cycles_per_bit))));
        }
    }
    // Exhaustive over subsets of at most `servers` frames.
    let n = options.len();
    assert!(n <= 16, "enumeration is for small states");
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() > spec.num_processors {
            continue;
        }
        let w: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| options[i].0 * options[i].1 as f64)
            .sum();
        best = best.max(w);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ObjectId;
    use crate::network::{NetworkParams, NetworkState, NodeKind, NodeSpec, Position};
    use crate::policies::RouteTable;
    use crate::queueing::{FlowReport, ProcessFlow, QueueTable};
    use crate::rng::{self, Stream};
    use crate::service::{CacheSet, Catalog, Request, ServiceRegistry, VrProfile};

    fn two_users(d: f64) -> (NetworkState, ServiceRegistry) {
        let mk = |i: u32, x: f64| NodeSpec {
            id: NodeId(i),
            kind: NodeKind::User,
            position: Position::new(x, 10.0),
            proc_capacity_hz: 3e9,
            num_processors: 1,
            storage_fraction: 0.5,
            cache: CacheSet::from_objects(10, [ObjectId(i)]),
        };
        let nodes = vec![
            mk(0, 10.0),
            mk(1, 10.0 + d),
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
        let catalog = Catalog::zipf(10, 3_000_000, 1.0).unwrap();
        let s = ServiceRegistry::vr(&VrProfile::default(), &catalog, [NodeId(0), NodeId(1)]);
        let n = NetworkState::new(nodes, NetworkParams::default(), rng::stream(3, Stream::Mobility)).unwrap();
        (n, s)
    }

    fn ctx<'a>(n: &'a NetworkState, q: &'a QueueTable, s: &'a ServiceRegistry, rt: &'a RouteTable) -> PolicyContext<'a> {
        PolicyContext {
            network: n,
            queues: q,
            services: s,
            routes: rt,
            pending: &[],
        }
    }

    fn inject(q: &mut QueueTable, n: &NetworkState, s: &ServiceRegistry, r: Request, at: NodeId) {
        q.register(r, s.get(r.service()).unwrap()).unwrap();
        let d = FlowDecision {
            replicate: vec![ReplicateFlow {
                node: at,
                request: r.id,
                bits: 3_000_000,
            }],
            ..Default::default()
        };
        let caps = n.capacities(&ResourceAllocation::default()).unwrap();
        let _: FlowReport = q.apply_flows(&d, &caps, s, n).unwrap();
    }

    fn req(id: u64, user: u32, object: u32) -> Request {
        Request {
            id: RequestId(id),
            user: NodeId(user),
            object: ObjectId(object),
            arrival_slot: 0,
        }
    }

    #[test]
    fn idle_when_empty() {
        let (n, s) = two_users(5.0);
        let (q, rt) = (QueueTable::new(), RouteTable::new());
        let a = dcnc_decide(&ctx(&n, &q, &s, &rt), 0.0).unwrap();
        assert!(a.flows.is_empty());
        assert!(a.alloc.d2d.is_empty() && a.alloc.bs_users.is_empty());
    }

    #[test]
    fn ships_only_positive_differentials() {
        let (n, s) = two_users(5.0);
        let mut q = QueueTable::new();
        // User 1 wants object 0 (cached at user 0): 3 Mb at user 0, none at user 1.
        inject(&mut q, &n, &s, req(0, 1, 0), NodeId(0));
        // A second commodity that is larger at user 1 than at user 0.
        inject(&mut q, &n, &s, req(1, 0, 1), NodeId(1));
        let rt = RouteTable::new();
        let a = dcnc_decide(&ctx(&n, &q, &s, &rt), 0.0).unwrap();
        let c01 = Commodity::input(ServiceId(1), ObjectId(0));
        let c10 = Commodity::input(ServiceId(0), ObjectId(1));
        // Both links carry positive differentials; the matching keeps one pair.
        assert_eq!(a.alloc.d2d.len(), 1);
        for t in &a.flows.transmit {
            let diff = q.differential_backlog(t.from, t.to, &t.commodity);
            assert!(diff > 0);
            assert!(t.commodity == c01 || t.commodity == c10);
        }
    }

    #[test]
    fn single_node_processing_is_max_weight() {
        let (n, s) = two_users(50.0);
        let mut q = QueueTable::new();
        inject(&mut q, &n, &s, req(0, 0, 0), NodeId(0));
        let rt = RouteTable::new();
        let c = ctx(&n, &q, &s, &rt);
        let a = dcnc_decide(&c, 0.0).unwrap();
        let procs: Vec<&ProcessFlow> = a.flows.process.iter().filter(|p| p.node == NodeId(0)).collect();
        assert_eq!(procs.len(), 1);
        assert_eq!(procs[0].bits, 300_000);
        let w: f64 = procs
            .iter()
            .map(|p| q.processing_utility(p.node, p.commodity.service, 0, 2.0) * p.bits as f64)
            .sum();
        assert_eq!(w, max_processing_weight(&c, NodeId(0), 0.0).unwrap());
    }

    #[test]
    fn replicates_where_cached_and_empty() {
        let (n, s) = two_users(5.0);
        let mut q = QueueTable::new();
        let r = req(0, 0, 1);
        q.register(r, s.get(r.service()).unwrap()).unwrap();
        let rt = RouteTable::new();
        let a = dcnc_decide(&ctx(&n, &q, &s, &rt), 0.0).unwrap();
        assert_eq!(a.flows.replicate.len(), 1);
        // Neighbor 1 caches object 1 and is idle; it wins over the base station by load tie
        // and lower id.
        assert_eq!(a.flows.replicate[0].node, NodeId(1));
        assert_eq!(a.flows.replicate[0].bits, 3_000_000);
    }
}
