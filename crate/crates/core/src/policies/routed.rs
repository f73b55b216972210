//! Route-based policies: the queue-aware centralized selector and the MEC baseline. Both
//! pick one assignment per request, then execute all installed routes with FIFO service
//! per resource.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{NodeId, RequestId};
use crate::network::{NetworkState, ResourceAllocation};
use crate::queueing::{FlowDecision, ReplicateFlow};
use crate::service::{Request, ServiceDag, ServiceRegistry};

use super::route::{solve_route, CostModel, Hop, Resource, RouteAssignment, RouteProblem};
use super::schedule::{bs_schedule, fill_link, fill_processors, greedy_matching};
use super::table::{RouteTable, Step};
use super::{Action, Decision, PolicyContext, PolicyError};

/// Resource rates and loads for one slot, shared by every route search in the slot.
/// Loads start from the bits waiting at each hop and grow as requests are committed.
#[derive(Debug, Clone)]
pub struct SlotEnv {
    bs: NodeId,
    d2d: Vec<(NodeId, NodeId, f64)>,
    bs_link_bits: f64,
    fanout: f64,
    users: Vec<NodeId>,
    procs: Vec<(NodeId, f64, f64)>,
    loads: BTreeMap<Hop, f64>,
    bs_pool: f64,
}

impl SlotEnv {
    pub fn new(net: &NetworkState, routes: &RouteTable, services: &ServiceRegistry) -> Self {
        let bs = net.base_station();
        let users: Vec<NodeId> = net.user_ids().collect();
        let mut d2d = Vec::new();
        for (a, &i) in users.iter().enumerate() {
            for &j in &users[a + 1..] {
                let rate = net.d2d_link_bits(i, j);
                if rate > 0 {
                    d2d.push((i, j, rate as f64));
                    d2d.push((j, i, net.d2d_link_bits(j, i) as f64));
                }
            }
        }
        d2d.sort_by_key(|&(i, j, _)| (i, j));
        let procs = net
            .nodes()
            .iter()
            .filter_map(|n| {
                let per = net.processor_cycles(n.id);
                (per > 0 && n.num_processors > 0).then_some((n.id, per as f64, n.num_processors as f64))
            })
            .collect();
        let mut loads = BTreeMap::new();
        let mut bs_pool = 0.0;
        for (hop, q) in routes.hops() {
            let load = match hop {
                Hop::Link(i, _) => {
                    if *i == bs {
                        bs_pool += q.total as f64;
                    }
                    q.total as f64
                }
                Hop::Process(_) => q
                    .entries
                    .iter()
                    .map(|(&(_, stage), &(c, bits))| {
                        let w = services
                            .get(c.service)
                            .and_then(|d| d.function(stage))
                            .map_or(0.0, |f| f.workload_cycles_per_bit);
                        bits as f64 * w
                    })
                    .sum(),
            };
            loads.insert(*hop, load);
        }
        Self {
            bs,
            d2d,
            bs_link_bits: net.bs_link_bits() as f64,
            fanout: net.params().bs_fanout as f64,
            users,
            procs,
            loads,
            bs_pool,
        }
    }

    /// Add `units` of load to a hop, as if that much were already waiting there.
    pub fn add_load(&mut self, hop: Hop, units: f64) {
        if let Hop::Link(i, _) = hop {
            if i == self.bs {
                self.bs_pool += units;
            }
        }
        *self.loads.entry(hop).or_default() += units;
    }

    fn load(&self, hop: Hop) -> f64 {
        self.loads.get(&hop).copied().unwrap_or(0.0)
    }

    /// The layered-graph problem for delivering one frame of `dag` from `sources` to `sink`.
    pub fn problem(&self, dag: &ServiceDag, sources: Vec<NodeId>, sink: NodeId) -> RouteProblem {
        let mut links: Vec<(NodeId, NodeId, Resource)> = self
            .d2d
            .iter()
            .map(|&(i, j, rate)| (i, j, Resource::single(rate, self.load(Hop::Link(i, j)))))
            .collect();
        for &u in &self.users {
            links.push((
                self.bs,
                u,
                Resource {
                    rate: self.bs_link_bits,
                    servers: self.fanout,
                    pool_load: self.bs_pool,
                    own_load: self.load(Hop::Link(self.bs, u)),
                },
            ));
        }
        let processors = self
            .procs
            .iter()
            .map(|&(i, per, servers)| {
                (
                    i,
                    Resource {
                        rate: per,
                        servers,
                        pool_load: self.load(Hop::Process(i)),
                        own_load: 0.0,
                    },
                )
            })
            .collect();
        let bits0 = dag.stage_bits(0) as f64;
        RouteProblem {
            num_nodes: self.users.len().max(self.bs.index() + 1),
            sink,
            sources,
            unit_bits: [bits0, dag.stage_bits(1) as f64],
            frame_cycles: bits0 * dag.function(0).map_or(0.0, |f| f.workload_cycles_per_bit),
            links,
            processors,
        }
    }

    /// Count a routed request's contributions as committed load for later searches.
    pub fn commit(&mut self, a: &RouteAssignment, dag: &ServiceDag) {
        let unit = [dag.stage_bits(0) as f64, dag.stage_bits(1) as f64];
        let cycles = unit[0] * dag.function(0).map_or(0.0, |f| f.workload_cycles_per_bit);
        for (hop, layer) in a.hops() {
            let add = match hop {
                Hop::Link(i, _) => {
                    if i == self.bs {
                        self.bs_pool += unit[layer as usize];
                    }
                    unit[layer as usize]
                }
                Hop::Process(_) => cycles,
            };
            *self.loads.entry(hop).or_default() += add;
        }
    }
}

fn service_dag<'a>(services: &'a ServiceRegistry, r: &Request) -> Result<&'a ServiceDag, PolicyError> {
    let dag = services
        .get(r.service())
        .ok_or(PolicyError::UnknownService(r.service()))?;
    if dag.final_stage() != 1 {
        return Err(PolicyError::Unsupported(format!(
            "route-based policies handle single-function services; {} has {}",
            r.service(),
            dag.final_stage()
        )));
    }
    Ok(dag)
}

fn sources(net: &NetworkState, r: &Request) -> Vec<NodeId> {
    net.nodes()
        .iter()
        .filter(|n| n.cache.contains(r.object))
        .map(|n| n.id)
        .collect()
}

fn route_with(
    ctx: &PolicyContext<'_>,
    env: &SlotEnv,
    req: &Request,
    cost: &dyn CostModel,
) -> Result<Option<RouteAssignment>, PolicyError> {
    let dag = service_dag(ctx.services, req)?;
    let p = env.problem(dag, sources(ctx.network, req), dag.sink);
    Ok(solve_route(&p, cost, req.id))
}

/// Queue-aware assignment for one request; `None` when no cache can reach the user.
pub fn centralized_route(
    ctx: &PolicyContext<'_>,
    req: &Request,
    cost: &dyn CostModel,
) -> Result<Option<RouteAssignment>, PolicyError> {
    let env = SlotEnv::new(ctx.network, ctx.routes, ctx.services);
    route_with(ctx, &env, req, cost)
}

/// Everything offloaded: the base station supplies the object, processes it and sends the
/// output over the downlink.
pub fn mec_baseline(ctx: &PolicyContext<'_>, req: &Request) -> RouteAssignment {
    let bs = ctx.network.base_station();
    RouteAssignment {
        request: req.id,
        cache_node: bs,
        proc_node: bs,
        static_path: Vec::new(),
        delivery_path: vec![req.user],
        cost: 0.0,
    }
}

/// Route and execute one slot. `cooperative` selects the centralized policy; otherwise
/// every request follows the MEC baseline and no D2D link is used.
pub(super) fn decide_routed(
    ctx: &PolicyContext<'_>,
    cost: &dyn CostModel,
    cooperative: bool,
) -> Result<Decision, PolicyError> {
    let mut decision = Decision::default();
    let mut replicate = Vec::new();
    let mut env = cooperative.then(|| SlotEnv::new(ctx.network, ctx.routes, ctx.services));
    for req in ctx.pending {
        let dag = service_dag(ctx.services, req)?;
        let a = match env.as_mut() {
            Some(env) => {
                let a = route_with(ctx, env, req, cost)?;
                if let Some(a) = &a {
                    env.commit(a, dag);
                }
                a
            }
            None => Some(mec_baseline(ctx, req)),
        };
        match a {
            Some(a) => {
                let bits = ctx
                    .queues
                    .frame(req.id)
                    .map_or_else(|| dag.static_input().map_or(0, |s| s.unit_bits), |f| f.awaiting_injection());
                if bits > 0 {
                    replicate.push(ReplicateFlow {
                        node: a.cache_node,
                        request: req.id,
                        bits,
                    });
                }
                decision.routes.push(a);
            }
            None => decision.deferred.push(*req),
        }
    }
    decision.action = execute_routes(ctx, cooperative)?;
    decision.action.flows.replicate = replicate;
    Ok(decision)
}

/// FIFO execution of the installed routes: downlink to the users with the most waiting
/// bits, greedy D2D pairing by waiting bits, one frame per processor.
pub fn execute_routes(ctx: &PolicyContext<'_>, use_d2d: bool) -> Result<Action, PolicyError> {
    let net = ctx.network;
    let routes = ctx.routes;
    let bs = net.base_station();
    let bs_users = bs_schedule(
        net.user_ids().map(|u| (u, routes.hop_total(&Hop::Link(bs, u)))),
        net.params().bs_fanout as usize,
    );
    let mut d2d = Vec::new();
    if use_d2d {
        let mut cands = Vec::new();
        for i in net.user_ids() {
            for (j, q) in routes.links_from(i) {
                if net.d2d_link_bits(i, j) > 0 {
                    cands.push((q.total as f64, i, j));
                }
            }
        }
        let busy: BTreeSet<NodeId> = if net.params().bs_and_d2d_same_slot {
            BTreeSet::new()
        } else {
            bs_users.iter().copied().collect()
        };
        d2d = greedy_matching(cands, &busy);
    }
    let processors_on: Vec<NodeId> = net
        .nodes()
        .iter()
        .map(|n| n.id)
        .filter(|&n| routes.hop_total(&Hop::Process(n)) > 0 && net.processor_cycles(n) > 0)
        .collect();
    let alloc = ResourceAllocation {
        bs_users,
        d2d,
        processors_on,
    };
    let caps = net.capacities(&alloc)?;
    let mut flows = FlowDecision::default();
    let links = alloc
        .bs_users
        .iter()
        .map(|&u| (bs, u))
        .chain(alloc.d2d.iter().copied());
    for (i, j) in links {
        let waiting = routes.waiting(&Hop::Link(i, j));
        fill_link(
            i,
            j,
            caps.link(i, j),
            waiting.into_iter().map(|(r, _, c, b)| (r, c, b)),
            &mut flows.transmit,
        );
    }
    for &n in &alloc.processors_on {
        let waiting = routes.waiting(&Hop::Process(n));
        let spec = net.node(n)?;
        let items = waiting.into_iter().map(|(r, stage, c, b)| {
            let w = ctx
                .services
                .get(c.service)
                .and_then(|d| d.function(stage))
                .map_or(0.0, |f| f.workload_cycles_per_bit);
            (r, c, b, w)
        });
        fill_processors(n, spec.num_processors, caps.per_server_cycles(n), items, &mut flows.process);
    }
    Ok(Action { alloc, flows })
}

fn reroute(
    routes: &mut RouteTable,
    r: RequestId,
    a: &RouteAssignment,
    from: NodeId,
    stage: u8,
) -> Result<(), PolicyError> {
    let mut at = from;
    if stage == 0 {
        for &n in &a.static_path {
            routes.set_next(r, 0, at, Step::Forward(n))?;
            at = n;
        }
        routes.set_next(r, 0, at, Step::Process)?;
    }
    for &n in &a.delivery_path {
        routes.set_next(r, 1, at, Step::Forward(n))?;
        at = n;
    }
    Ok(())
}

/// Re-plan bits stuck behind D2D links that broke as users moved. Stage-1 bits take the
/// cheapest delivery path from where they are; stage-0 bits get a fresh processor and
/// delivery path. Bits with no way forward wait for the topology to change.
pub fn repair_routes(
    routes: &mut RouteTable,
    net: &NetworkState,
    services: &ServiceRegistry,
    cost: &dyn CostModel,
) -> Result<usize, PolicyError> {
    let mut broken = Vec::new();
    for (hop, _) in routes.hops() {
        if let Hop::Link(i, j) = *hop {
            if net.is_user(i) && net.is_user(j) && net.d2d_link_bits(i, j) == 0 {
                broken.push((i, j));
            }
        }
    }
    if broken.is_empty() {
        return Ok(0);
    }
    let env = SlotEnv::new(net, routes, services);
    let mut repaired = 0;
    for (i, j) in broken {
        for (r, stage, c, _) in routes.waiting(&Hop::Link(i, j)) {
            let dag = services
                .get(c.service)
                .ok_or(PolicyError::UnknownService(c.service))?;
            let mut p = env.problem(dag, vec![i], dag.sink);
            if stage == 1 {
                p.processors = vec![(i, Resource::single(f64::INFINITY, 0.0))];
            }
            if let Some(a) = solve_route(&p, cost, r) {
                reroute(routes, r, &a, i, stage)?;
                repaired += 1;
            }
        }
    }
    Ok(repaired)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ObjectId;
    use crate::network::{NetworkParams, NodeKind, NodeSpec, Position};
    use crate::policies::CongestionMetric;
    use crate::queueing::QueueTable;
    use crate::rng::{self, Stream};
    use crate::service::{CacheSet, Catalog, VrProfile};

    fn net(users: &[(f64, f64, &[u32])]) -> (NetworkState, ServiceRegistry) {
        let mut nodes: Vec<NodeSpec> = users
            .iter()
            .enumerate()
            .map(|(i, &(x, y, objs))| NodeSpec {
                id: NodeId(i as u32),
                kind: NodeKind::User,
                position: Position::new(x, y),
                proc_capacity_hz: 3e9,
                num_processors: 1,
                storage_fraction: 0.5,
                cache: CacheSet::from_objects(10, objs.iter().map(|&o| ObjectId(o))),
            })
            .collect();
        nodes.push(NodeSpec {
            id: NodeId(users.len() as u32),
            kind: NodeKind::BaseStation,
            position: Position::new(50.0, 50.0),
            proc_capacity_hz: 3e9,
            num_processors: 10,
            storage_fraction: 1.0,
            cache: CacheSet::full(10),
        });
        let catalog = Catalog::zipf(10, 3_000_000, 1.0).unwrap();
        let services = ServiceRegistry::vr(
            &VrProfile::default(),
            &catalog,
            (0..users.len()).map(|i| NodeId(i as u32)),
        );
        let state =
            NetworkState::new(nodes, NetworkParams::default(), rng::stream(1, Stream::Mobility)).unwrap();
        (state, services)
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
    fn local_cache_and_idle_processor_serve_locally() {
        let (n, s) = net(&[(10.0, 10.0, &[3]), (20.0, 10.0, &[])]);
        let q = QueueTable::new();
        let rt = RouteTable::new();
        let ctx = PolicyContext {
            network: &n,
            queues: &q,
            services: &s,
            routes: &rt,
            pending: &[],
        };
        let a = centralized_route(&ctx, &req(0, 0, 3), &CongestionMetric).unwrap().unwrap();
        assert_eq!((a.cache_node, a.proc_node), (NodeId(0), NodeId(0)));
        assert!(a.static_path.is_empty() && a.delivery_path.is_empty());
    }

    #[test]
    fn neighbor_copy_beats_the_downlink() {
        let (n, s) = net(&[(10.0, 10.0, &[]), (20.0, 10.0, &[3])]);
        let (q, rt) = (QueueTable::new(), RouteTable::new());
        let ctx = PolicyContext {
            network: &n,
            queues: &q,
            services: &s,
            routes: &rt,
            pending: &[],
        };
        let a = centralized_route(&ctx, &req(0, 0, 3), &CongestionMetric).unwrap().unwrap();
        assert_eq!(a.cache_node, NodeId(1));
        assert_eq!(a.proc_node, NodeId(0));
        assert_eq!(a.static_path, vec![NodeId(0)]);
    }

    #[test]
    fn mec_is_fixed() {
        let (n, s) = net(&[(10.0, 10.0, &[3]), (20.0, 10.0, &[3])]);
        let (q, rt) = (QueueTable::new(), RouteTable::new());
        let pending = [req(0, 0, 3), req(1, 1, 5)];
        let ctx = PolicyContext {
            network: &n,
            queues: &q,
            services: &s,
            routes: &rt,
            pending: &pending,
        };
        let d = decide_routed(&ctx, &CongestionMetric, false).unwrap();
        for (a, r) in d.routes.iter().zip(&pending) {
            assert_eq!((a.cache_node, a.proc_node), (NodeId(2), NodeId(2)));
            assert_eq!(a.delivery_path, vec![r.user]);
        }
        assert!(d.action.alloc.d2d.is_empty());
        assert_eq!(d.action.flows.replicate.len(), 2);
    }

    #[test]
    fn committed_load_spreads_requests() {
        // Two requests for the same uncached object from the same user in one slot:
        // the second sees the first's commitment.
        let (n, s) = net(&[(10.0, 10.0, &[]), (12.0, 10.0, &[])]);
        let (q, rt) = (QueueTable::new(), RouteTable::new());
        let pending = [req(0, 0, 3), req(1, 1, 3)];
        let ctx = PolicyContext {
            network: &n,
            queues: &q,
            services: &s,
            routes: &rt,
            pending: &pending,
        };
        let mut env = SlotEnv::new(&n, &rt, &s);
        let dag = s.get(pending[0].service()).unwrap();
        let a = route_with(&ctx, &env, &pending[0], &CongestionMetric).unwrap().unwrap();
        let before = a.cost;
        env.commit(&a, dag);
        let again = route_with(&ctx, &env, &pending[0], &CongestionMetric).unwrap().unwrap();
        assert!(again.cost > before);
    }
}
