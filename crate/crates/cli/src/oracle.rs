//! Cross-check of the layered-graph route search against brute-force enumeration on
//! small random networks.

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use threec_core::policies::{
    assignment_cost, exhaustive_route, solve_route, CongestionMetric, CostModel, Hop, Resource,
    RouteProblem, SlotEnv,
};
use threec_core::network::NetworkParams;
use threec_core::{
    CacheSet, Catalog, NetworkState, NodeId, NodeKind, NodeSpec, ObjectId, Position, RequestId,
    RouteAssignment, RouteTable, ServiceRegistry, VrProfile,
};

use crate::config::HarnessError;

const CATALOG: u32 = 4;
const ARENA_M: f64 = 40.0;

/// A metric that ignores queued load. Swapping it in for the route search has to be caught.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadBlindMetric;

impl CostModel for LoadBlindMetric {
    fn cost(&self, r: &Resource, contribution: f64) -> f64 {
        CongestionMetric.cost(
            &Resource {
                pool_load: 0.0,
                own_load: 0.0,
                ..*r
            },
            contribution,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub problem: RouteProblem,
    pub fast: Option<RouteAssignment>,
    pub brute: Option<RouteAssignment>,
    /// Cost of the fast assignment under the reference metric.
    pub fast_cost: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub trials: usize,
    pub feasible: usize,
    pub mismatches: Vec<Counterexample>,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Random network of `nodes` nodes (users plus the base station) under random
/// loads, returned as the problem of one request.
pub fn random_problem(rng: &mut ChaCha8Rng, nodes: usize) -> Result<RouteProblem, HarnessError> {
    if nodes == 1 {
        return Ok(lone_user(rng));
    }
    let catalog = Catalog::zipf(CATALOG, 3_000_000, 1.0).map_err(|e| HarnessError::Mismatch(e.to_string()))?;
    let users = nodes - 1;
    let mut specs = Vec::with_capacity(nodes);
    for u in 0..users {
        let k = rng.random_range(0..=CATALOG as usize);
        let cache = CacheSet::from_objects(
            CATALOG,
            (0..CATALOG).map(ObjectId).choose_multiple(rng, k),
        );
        specs.push(NodeSpec {
            id: NodeId(u as u32),
            kind: NodeKind::User,
            position: Position::new(rng.random_range(0.0..=ARENA_M), rng.random_range(0.0..=ARENA_M)),
            proc_capacity_hz: [0.0, 1.5e9, 3e9][rng.random_range(0..3)],
            num_processors: 1,
            storage_fraction: 1.0,
            cache,
        });
    }
    specs.push(NodeSpec {
        id: NodeId(users as u32),
        kind: NodeKind::BaseStation,
        position: Position::new(ARENA_M / 2.0, ARENA_M / 2.0),
        proc_capacity_hz: 3e9,
        num_processors: rng.random_range(0..=4),
        storage_fraction: 1.0,
        cache: CacheSet::full(CATALOG),
    });
    let mut params = NetworkParams {
        arena_m: ARENA_M,
        user_proc_scale: [0.25, 0.5, 1.0][rng.random_range(0..3)],
        bs_fanout: rng.random_range(1..=3),
        ..NetworkParams::default()
    };
    params.channel.bw_scale = [0.0, 0.5, 1.0][rng.random_range(0..3)];
    let seed = rng.random();
    let net = NetworkState::new(specs, params, ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| HarnessError::Mismatch(e.to_string()))?;

    let sink = NodeId(rng.random_range(0..users as u32));
    let object = ObjectId(rng.random_range(0..CATALOG));
    let dag = VrProfile::default().service(&catalog, sink, Some(object));
    let mut env = SlotEnv::new(&net, &RouteTable::new(), &ServiceRegistry::default());
    for i in 0..nodes as u32 {
        if rng.random_bool(0.5) {
            env.add_load(Hop::Process(NodeId(i)), rng.random_range(0.0..1e8));
        }
        for j in 0..nodes as u32 {
            if i != j && rng.random_bool(0.4) {
                env.add_load(Hop::Link(NodeId(i), NodeId(j)), rng.random_range(0.0..2e7));
            }
        }
    }
    let sources = net
        .nodes()
        .iter()
        .filter(|n| net.caches(n.id, object))
        .map(|n| n.id)
        .collect();
    Ok(env.problem(&dag, sources, sink))
}

fn lone_user(rng: &mut ChaCha8Rng) -> RouteProblem {
    let rate = rng.random_range(1e6..3e6);
    RouteProblem {
        num_nodes: 1,
        sink: NodeId(0),
        sources: vec![NodeId(0)],
        unit_bits: [3e6, 6e6],
        frame_cycles: 3e7,
        links: Vec::new(),
        processors: vec![(NodeId(0), Resource::single(rate, rng.random_range(0.0..1e8)))],
    }
}

fn agrees(p: &RouteProblem, fast: Option<&RouteAssignment>, brute: Option<&RouteAssignment>) -> (bool, Option<f64>) {
    match (fast, brute) {
        (None, None) => (true, None),
        (Some(f), Some(b)) => {
            let fc = assignment_cost(p, &CongestionMetric, f);
            let tol = 1e-9 * b.cost.abs().max(1.0);
            ((fc - b.cost).abs() <= tol, Some(fc))
        }
        (Some(f), None) => (false, Some(assignment_cost(p, &CongestionMetric, f))),
        (None, Some(_)) => (false, None),
    }
}

/// Compare `metric`-driven search against enumeration under the congestion metric on
/// `trials` random networks with `min_nodes..=max_nodes` nodes.
pub fn oracle_check(
    trials: usize,
    seed: u64,
    min_nodes: usize,
    max_nodes: usize,
    metric: &dyn CostModel,
) -> Result<OracleOutcome, HarnessError> {
    if min_nodes == 0 || min_nodes > max_nodes {
        return Err(HarnessError::Invalid(format!(
            "node range {min_nodes}..={max_nodes} is empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome {
        trials,
        feasible: 0,
        mismatches: Vec::new(),
    };
    for trial in 0..trials {
        let nodes = rng.random_range(min_nodes..=max_nodes);
        let p = random_problem(&mut rng, nodes)?;
        let fast = solve_route(&p, metric, RequestId(trial as u64));
        let brute = exhaustive_route(&p, &CongestionMetric, RequestId(trial as u64));
        if brute.is_some() {
            out.feasible += 1;
        }
        let (ok, fast_cost) = agrees(&p, fast.as_ref(), brute.as_ref());
        if !ok {
            out.mismatches.push(Counterexample {
                trial,
                problem: p,
                fast,
                brute,
                fast_cost,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn search_matches_enumeration() {
        let out = oracle_check(300, 3, 3, 5, &CongestionMetric).unwrap();
        assert!(out.passed(), "{:?}", out.mismatches.first());
        assert!(out.feasible > 100);
    }

    #[test]
    fn load_blind_search_is_caught() {
        let out = oracle_check(300, 3, 3, 5, &LoadBlindMetric).unwrap();
        assert!(!out.passed());
    }

    #[test]
    fn a_lone_user_processes_locally() {
        let out = oracle_check(20, 1, 1, 1, &CongestionMetric).unwrap();
        assert!(out.passed());
        assert_eq!(out.feasible, 20);
        let p = lone_user(&mut ChaCha8Rng::seed_from_u64(0));
        let a = solve_route(&p, &CongestionMetric, RequestId(0)).unwrap();
        assert_eq!((a.cache_node, a.proc_node), (NodeId(0), NodeId(0)));
        assert!(a.static_path.is_empty() && a.delivery_path.is_empty());
    }

    #[test]
    fn empty_range_is_invalid() {
        assert!(oracle_check(1, 0, 4, 3, &CongestionMetric).is_err());
    }
}
