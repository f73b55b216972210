//! Joint cache / processor / path selection on a two-layer graph.
//!
//! Layer 0 carries the static input (stage 0), layer 1 the processed output (stage 1).
//! A processing edge `(i, 0) -> (i, 1)` exists wherever node `i` can compute. An
//! assignment is a path from some `(cache, 0)` to `(sink, 1)`; its cost is the sum of the
//! per-resource congestion costs of every traversed edge.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hop {
    Link(NodeId, NodeId),
    Process(NodeId),
}

/// A capacity-limited resource as seen by the congestion metric. Loads and rates are in
/// the resource's own unit (bits for links, cycles for processors), per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    /// Units one server handles per slot.
    pub rate: f64,
    /// Identical servers sharing `pool_load`.
    pub servers: f64,
    /// Units queued at (or committed to) the whole pool.
    pub pool_load: f64,
    /// Units queued at this particular server.
    pub own_load: f64,
}

impl Resource {
    pub fn single(rate: f64, load: f64) -> Self {
        Self {
            rate,
            servers: 1.0,
            pool_load: load,
            own_load: load,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            rate: self.rate * k,
            servers: self.servers,
            pool_load: self.pool_load * k,
            own_load: self.own_load * k,
        }
    }
}

/// Cost of pushing `contribution` units of one request through a resource.
pub trait CostModel {
    fn cost(&self, r: &Resource, contribution: f64) -> f64;
}

/// Expected slots to clear the queue ahead plus the request's own service time.
/// For a single server this is `(backlog + committed + contribution) / capacity`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CongestionMetric;

impl CostModel for CongestionMetric {
    fn cost(&self, r: &Resource, contribution: f64) -> f64 {
        if r.rate <= 0.0 || r.servers <= 0.0 {
            return f64::INFINITY;
        }
        let wait = (r.pool_load / (r.servers * r.rate)).max(r.own_load / r.rate);
        wait + contribution / r.rate
    }
}

impl<T: CostModel + ?Sized> CostModel for &T {
    fn cost(&self, r: &Resource, contribution: f64) -> f64 {
        (**self).cost(r, contribution)
    }
}

/// Everything the route search needs about one request at one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteProblem {
    pub num_nodes: usize,
    pub sink: NodeId,
    /// Nodes holding the requested object.
    pub sources: Vec<NodeId>,
    /// Frame size in each layer.
    pub unit_bits: [f64; 2],
    /// Cycles needed to process one frame.
    pub frame_cycles: f64,
    /// Directed links usable in both layers.
    pub links: Vec<(NodeId, NodeId, Resource)>,
    pub processors: Vec<(NodeId, Resource)>,
}

/// The joint caching / computation / communication decision for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteAssignment {
    pub request: RequestId,
    pub cache_node: NodeId,
    pub proc_node: NodeId,
    /// Nodes visited after the cache node, ending at the processor.
    pub static_path: Vec<NodeId>,
    /// Nodes visited after the processor, ending at the sink.
    pub delivery_path: Vec<NodeId>,
    pub cost: f64,
}

impl RouteAssignment {
    /// Hops in traversal order, with the layer each link is used in.
    pub fn hops(&self) -> Vec<(Hop, u8)> {
        let mut out = Vec::new();
        let mut at = self.cache_node;
        for &n in &self.static_path {
            out.push((Hop::Link(at, n), 0));
            at = n;
        }
        out.push((Hop::Process(self.proc_node), 0));
        for &n in &self.delivery_path {
            out.push((Hop::Link(at, n), 1));
            at = n;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64, usize);

impl Eq for Dist {}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (cost, state).
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `(from_state, to_state, cost)` edges of the layered graph.
fn layered_edges(p: &RouteProblem, cost: &dyn CostModel) -> Vec<(usize, usize, f64)> {
    let n = p.num_nodes;
    let mut edges = Vec::with_capacity(p.links.len() * 2 + p.processors.len());
    for &(i, j, r) in &p.links {
        for layer in 0..2 {
            let c = cost.cost(&r, p.unit_bits[layer]);
            if c.is_finite() {
                edges.push((layer * n + i.index(), layer * n + j.index(), c));
            }
        }
    }
    for &(i, r) in &p.processors {
        let c = cost.cost(&r, p.frame_cycles);
        if c.is_finite() {
            edges.push((i.index(), n + i.index(), c));
        }
    }
    edges
}

/// Cheapest assignment by backward Dijkstra from `(sink, 1)`; `None` if no cache can reach
/// the sink through a processor.
pub fn solve_route(p: &RouteProblem, cost: &dyn CostModel, request: RequestId) -> Option<RouteAssignment> {
    let n = p.num_nodes;
    if p.sink.index() >= n {
        return None;
    }
    let mut rev: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2 * n];
    for (u, v, c) in layered_edges(p, cost) {
        rev[v].push((u, c));
    }
    let mut is_source = vec![false; n];
    for s in &p.sources {
        if s.index() < n {
            is_source[s.index()] = true;
        }
    }
    let mut dist = vec![f64::INFINITY; 2 * n];
    let mut next = vec![usize::MAX; 2 * n];
    let mut done = vec![false; 2 * n];
    let target = n + p.sink.index();
    dist[target] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Dist(0.0, target));
    let mut found = None;
    while let Some(Dist(d, v)) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        if v < n && is_source[v] {
            found = Some(v);
            break;
        }
        for &(u, c) in &rev[v] {
            let nd = c + d;
            if nd < dist[u] {
                dist[u] = nd;
                next[u] = v;
                heap.push(Dist(nd, u));
            }
        }
    }
    let start = found?;
    let mut static_path = Vec::new();
    let mut delivery_path = Vec::new();
    let mut proc_node = None;
    let mut at = start;
    while at != target {
        let nx = next[at];
        if at < n && nx >= n {
            proc_node = Some(NodeId(at as u32));
        } else if nx < n {
            static_path.push(NodeId(nx as u32));
        } else {
            delivery_path.push(NodeId((nx - n) as u32));
        }
        at = nx;
    }
    Some(RouteAssignment {
        request,
        cache_node: NodeId(start as u32),
        proc_node: proc_node.expect("path crosses layers"),
        static_path,
        delivery_path,
        cost: dist[start],
    })
}

/// Metric value of an explicit assignment, summed in traversal order.
pub fn assignment_cost(p: &RouteProblem, cost: &dyn CostModel, a: &RouteAssignment) -> f64 {
    let links: BTreeMap<(NodeId, NodeId), Resource> =
        p.links.iter().map(|&(i, j, r)| ((i, j), r)).collect();
    let procs: BTreeMap<NodeId, Resource> = p.processors.iter().copied().collect();
    a.hops()
        .into_iter()
        .map(|(hop, layer)| match hop {
            Hop::Link(i, j) => links
                .get(&(i, j))
                .map_or(f64::INFINITY, |r| cost.cost(r, p.unit_bits[layer as usize])),
            Hop::Process(i) => procs
                .get(&i)
                .map_or(f64::INFINITY, |r| cost.cost(r, p.frame_cycles)),
        })
        .sum()
}

fn simple_paths(adj: &[Vec<usize>], from: usize, to: usize, out: &mut Vec<Vec<NodeId>>) {
    fn go(
        adj: &[Vec<usize>],
        at: usize,
        to: usize,
        seen: &mut Vec<bool>,
        path: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        if at == to {
            out.push(path.clone());
            return;
        }
        for &nx in &adj[at] {
            if !seen[nx] {
                seen[nx] = true;
                path.push(NodeId(nx as u32));
                go(adj, nx, to, seen, path, out);
                path.pop();
                seen[nx] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[from] = true;
    go(adj, from, to, &mut seen, &mut Vec::new(), out);
}

/// Exhaustive minimisation over every (cache, processor, simple static path, simple
/// delivery path) tuple. Exponential; meant for networks of a handful of nodes.
pub fn exhaustive_route(
    p: &RouteProblem,
    cost: &dyn CostModel,
    request: RequestId,
) -> Option<RouteAssignment> {
    let n = p.num_nodes;
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in &p.links {
        adj[i.index()].push(j.index());
    }
    let mut best: Option<RouteAssignment> = None;
    for &c in &p.sources {
        for &(proc_node, _) in &p.processors {
            let mut statics = Vec::new();
            simple_paths(&adj, c.index(), proc_node.index(), &mut statics);
            let mut deliveries = Vec::new();
            simple_paths(&adj, proc_node.index(), p.sink.index(), &mut deliveries);
            for s in &statics {
                for d in &deliveries {
                    let mut a = RouteAssignment {
                        request,
                        cache_node: c,
                        proc_node,
                        static_path: s.clone(),
                        delivery_path: d.clone(),
                        cost: 0.0,
                    };
                    a.cost = assignment_cost(p, cost, &a);
                    if a.cost.is_finite() && best.as_ref().is_none_or(|b| a.cost < b.cost) {
                        best = Some(a);
                    }
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line3() -> RouteProblem {
        // 0 - 1 - 2, links both ways; node 2 requests, objects at 0 and 1.
        let mut links = Vec::new();
        for (i, j, rate, load) in [(0, 1, 4e5, 1e6), (1, 2, 3e5, 0.0)] {
            links.push((NodeId(i), NodeId(j), Resource::single(rate, load)));
            links.push((NodeId(j), NodeId(i), Resource::single(rate, 0.5 * load)));
        }
        RouteProblem {
            num_nodes: 3,
            sink: NodeId(2),
            sources: vec![NodeId(0), NodeId(1)],
            unit_bits: [3e6, 6e6],
            frame_cycles: 3e7,
            links,
            processors: vec![
                (NodeId(0), Resource::single(3e6, 0.0)),
                (NodeId(1), Resource::single(3e6, 6e7)),
                (NodeId(2), Resource::single(1.5e6, 0.0)),
            ],
        }
    }

    #[test]
    fn local_hit_with_idle_processor_stays_local() {
        let mut p = line3();
        p.sources.push(NodeId(2));
        p.processors[2].1 = Resource::single(3e6, 0.0);
        let a = solve_route(&p, &CongestionMetric, RequestId(0)).unwrap();
        assert_eq!((a.cache_node, a.proc_node), (NodeId(2), NodeId(2)));
        assert!(a.static_path.is_empty() && a.delivery_path.is_empty());
        assert_eq!(a.cost, 10.0);
    }

    #[test]
    fn line_network_matches_enumeration() {
        let p = line3();
        let a = solve_route(&p, &CongestionMetric, RequestId(0)).unwrap();
        let b = exhaustive_route(&p, &CongestionMetric, RequestId(0)).unwrap();
        assert!((a.cost - b.cost).abs() <= 1e-9 * b.cost);
        assert!((assignment_cost(&p, &CongestionMetric, &a) - a.cost).abs() <= 1e-9 * a.cost);
        // Ship the input from node 1 and process at the sink: 10 + 20.
        assert_eq!(a.cache_node, NodeId(1));
        assert_eq!(a.proc_node, NodeId(2));
        assert_eq!(a.static_path, vec![NodeId(2)]);
        assert!((a.cost - 30.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_users_push_work_to_the_base_station() {
        // Users 0, 1; base station 2 with ten processors and a pooled downlink.
        let busy = 1e9;
        let bs = Resource {
            rate: 2e5,
            servers: 20.0,
            pool_load: 0.0,
            own_load: 0.0,
        };
        let p = RouteProblem {
            num_nodes: 3,
            sink: NodeId(0),
            sources: vec![NodeId(1), NodeId(2)],
            unit_bits: [3e6, 6e6],
            frame_cycles: 3e7,
            links: vec![
                (NodeId(0), NodeId(1), Resource::single(4e5, busy)),
                (NodeId(1), NodeId(0), Resource::single(4e5, busy)),
                (NodeId(2), NodeId(0), bs),
                (NodeId(2), NodeId(1), bs),
            ],
            processors: vec![
                (NodeId(0), Resource::single(3e6, busy)),
                (NodeId(1), Resource::single(3e6, busy)),
                (
                    NodeId(2),
                    Resource {
                        rate: 3e6,
                        servers: 10.0,
                        pool_load: 0.0,
                        own_load: 0.0,
                    },
                ),
            ],
        };
        let a = solve_route(&p, &CongestionMetric, RequestId(0)).unwrap();
        assert_eq!((a.cache_node, a.proc_node), (NodeId(2), NodeId(2)));
        assert_eq!(a.delivery_path, vec![NodeId(0)]);
        let b = exhaustive_route(&p, &CongestionMetric, RequestId(0)).unwrap();
        assert_eq!(a.cost, b.cost);
    }

    #[test]
    fn unreachable_sink_has_no_route() {
        let mut p = line3();
        p.links.retain(|&(_, j, _)| j != NodeId(2));
        p.processors.retain(|&(i, _)| i != NodeId(2));
        assert!(solve_route(&p, &CongestionMetric, RequestId(0)).is_none());
        assert!(exhaustive_route(&p, &CongestionMetric, RequestId(0)).is_none());
    }

    #[test]
    fn zero_rate_resources_are_unusable() {
        let r = Resource::single(0.0, 0.0);
        assert_eq!(CongestionMetric.cost(&r, 1.0), f64::INFINITY);
    }

    fn arb_problem() -> impl Strategy<Value = RouteProblem> {
        (2usize..=5).prop_flat_map(|n| {
            let link = (0..n, 0..n, 1u32..64, 0u32..64);
            let pr = (0..n, 1u32..64, 1u32..4, 0u32..64);
            (
                Just(n),
                0..n,
                proptest::collection::vec(0..n, 1..=n),
                proptest::collection::vec(link, 0..12),
                proptest::collection::vec(pr, 1..=n),
            )
                .prop_map(|(n, sink, sources, links, procs)| {
                    let links: BTreeMap<(usize, usize), (u32, u32)> = links
                        .into_iter()
                        .filter(|(i, j, _, _)| i != j)
                        .map(|(i, j, r, l)| ((i, j), (r, l)))
                        .collect();
                    let procs: BTreeMap<usize, (u32, u32, u32)> = procs
                        .into_iter()
                        .map(|(i, r, s, l)| (i, (r, s, l)))
                        .collect();
                    RouteProblem {
                        num_nodes: n,
                        sink: NodeId(sink as u32),
                        sources: sources.into_iter().map(|s| NodeId(s as u32)).collect(),
                        unit_bits: [3.0, 6.0],
                        frame_cycles: 30.0,
                        links: links
                            .into_iter()
                            .map(|((i, j), (r, l))| {
                                (NodeId(i as u32), NodeId(j as u32), Resource::single(r as f64, l as f64))
                            })
                            .collect(),
                        processors: procs
                            .into_iter()
                            .map(|(i, (r, s, l))| {
                                (
                                    NodeId(i as u32),
                                    Resource {
                                        rate: r as f64,
                                        servers: s as f64,
                                        pool_load: l as f64,
                                        own_load: 0.0,
                                    },
                                )
                            })
                            .collect(),
                    }
                })
        })
    }

    fn scale(p: &RouteProblem, k: f64) -> RouteProblem {
        RouteProblem {
            unit_bits: [p.unit_bits[0] * k, p.unit_bits[1] * k],
            frame_cycles: p.frame_cycles * k,
            links: p.links.iter().map(|&(i, j, r)| (i, j, r.scaled(k))).collect(),
            processors: p.processors.iter().map(|&(i, r)| (i, r.scaled(k))).collect(),
            ..p.clone()
        }
    }

    proptest! {
        #[test]
        fn dijkstra_equals_enumeration(p in arb_problem()) {
            let a = solve_route(&p, &CongestionMetric, RequestId(0));
            let b = exhaustive_route(&p, &CongestionMetric, RequestId(0));
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a.cost - b.cost).abs() <= 1e-9 * b.cost.max(1.0));
            }
        }

        #[test]
        fn argmin_invariant_to_uniform_scaling(p in arb_problem(), e in -20i32..20) {
            let k = 2f64.powi(e);
            let a = solve_route(&p, &CongestionMetric, RequestId(0));
            let b = solve_route(&scale(&p, k), &CongestionMetric, RequestId(0));
            prop_assert_eq!(a.map(|a| (a.cache_node, a.proc_node, a.static_path, a.delivery_path)),
                            b.map(|b| (b.cache_node, b.proc_node, b.static_path, b.delivery_path)));
        }
    }
}
