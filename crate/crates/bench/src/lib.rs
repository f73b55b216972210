//! Benchmark fixtures.

use threec_core::policies::{RouteProblem, SlotEnv};
use threec_core::rng::{self, Stream};
use threec_core::{
    build_vr_scenario, sample_requests, Catalog, NodeId, PolicyKind, RouteTable, ScenarioConfig,
    ServiceRegistry, SimConfig, VrProfile,
};

/// A short run of the default scenario.
pub fn short_run(policy: PolicyKind, horizon_slots: u64, num_users: u32) -> SimConfig {
    let mut c = SimConfig {
        horizon_slots,
        policy,
        ..SimConfig::default()
    };
    c.scenario.num_users = num_users;
    c
}

/// The route problem of the first request on an idle default network.
pub fn default_route_problem(seed: u64) -> RouteProblem {
    let config = SimConfig::default();
    let sc: &ScenarioConfig = &config.scenario;
    let catalog = Catalog::zipf(sc.catalog_size, sc.object_bits, config.gamma_pop).expect("catalog");
    let net = build_vr_scenario(sc, &catalog, &config.knobs(), seed).expect("scenario");
    let mut rng = rng::stream(seed, Stream::Requests);
    let req = sample_requests(&net, config.lambda_fps, config.slot_duration_s, 10, &catalog, &mut rng).expect("requests")[0];
    let profile = VrProfile::default();
    let dag = profile.service(&catalog, req.user, Some(req.object));
    let env = SlotEnv::new(&net, &RouteTable::new(), &ServiceRegistry::default());
    let sources: Vec<NodeId> = net
        .nodes()
        .iter()
        .filter(|n| net.caches(n.id, req.object))
        .map(|n| n.id)
        .collect();
    env.problem(&dag, sources, req.user)
}
