//! Demand side: service DAGs, the object catalog, cache placement and request generation.

use std::collections::VecDeque;
use std::io;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Bits, NodeId, ObjectId, RequestId, ServiceId};
use crate::network::NetworkState;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("request trace: {0}")]
    Trace(#[from] csv::Error),
}

/// Zipf probabilities over ranks `1..=n`: `p(r) = r^-gamma / sum_s s^-gamma`.
pub fn zipf_pmf(gamma: f64, n: usize) -> Result<Vec<f64>, ServiceError> {
    if n == 0 {
        return Err(ServiceError::Domain("zipf over an empty support".into()));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(ServiceError::Domain(format!("zipf exponent {gamma} must be >= 0")));
    }
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-gamma)).collect();
    // Smallest terms first keeps the normaliser accurate.
    let total: f64 = weights.iter().rev().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// The static object library.
#[derive(Debug, Clone)]
pub struct Catalog {
    object_bits: Bits,
    popularity: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl Catalog {
    pub fn new(object_bits: Bits, popularity: Vec<f64>) -> Result<Self, ServiceError> {
        if object_bits == 0 {
            return Err(ServiceError::Domain("object size must be > 0".into()));
        }
        let total: f64 = popularity.iter().rev().sum();
        if popularity.is_empty() || (total - 1.0).abs() > 1e-12 {
            return Err(ServiceError::Domain(format!(
                "popularity must be a probability vector (sums to {total})"
            )));
        }
        let sampler = WeightedIndex::new(&popularity)
            .map_err(|e| ServiceError::Domain(e.to_string()))?;
        Ok(Self {
            object_bits,
            popularity,
            sampler,
        })
    }

    pub fn zipf(num_objects: u32, object_bits: Bits, gamma: f64) -> Result<Self, ServiceError> {
        Self::new(object_bits, zipf_pmf(gamma, num_objects as usize)?)
    }

    pub fn num_objects(&self) -> u32 {
        self.popularity.len() as u32
    }

    pub fn object_bits(&self) -> Bits {
        self.object_bits
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn contains(&self, object: ObjectId) -> bool {
        object.index() < self.popularity.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ObjectId {
        ObjectId(self.sampler.sample(rng) as u32)
    }
}

/// The set of objects a node caches.
///
/// Stored as a per-node preference order plus a length: the cache is the prefix of the
/// order. Orders drawn by [`cache_placement`] are independent of `beta3`, so caches for
/// a larger storage fraction contain those for a smaller one under the same seed.
#[derive(Clone)]
pub struct CacheSet {
    order: Arc<[u32]>,
    rank: Arc<[u32]>,
    len: u32,
}

impl CacheSet {
    pub fn full(catalog_size: u32) -> Self {
        let order: Arc<[u32]> = (0..catalog_size).collect();
        Self {
            rank: order.clone(),
            order,
            len: catalog_size,
        }
    }

    pub fn empty(catalog_size: u32) -> Self {
        Self {
            len: 0,
            ..Self::full(catalog_size)
        }
    }

    /// A cache holding exactly `objects` (duplicates ignored).
    pub fn from_objects(catalog_size: u32, objects: impl IntoIterator<Item = ObjectId>) -> Self {
        let mut chosen = vec![false; catalog_size as usize];
        let mut order = Vec::with_capacity(catalog_size as usize);
        for o in objects {
            if !std::mem::replace(&mut chosen[o.index()], true) {
                order.push(o.0);
            }
        }
        let len = order.len() as u32;
        order.extend((0..catalog_size).filter(|&o| !chosen[o as usize]));
        Self::from_order(order, len)
    }

    fn from_order(order: Vec<u32>, len: u32) -> Self {
        let mut rank = vec![0u32; order.len()];
        for (r, &o) in order.iter().enumerate() {
            rank[o as usize] = r as u32;
        }
        Self {
            order: order.into(),
            rank: rank.into(),
            len,
        }
    }

    pub fn contains(&self, object: ObjectId) -> bool {
        self.rank
            .get(object.index())
            .is_some_and(|&r| r < self.len)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn catalog_size(&self) -> u32 {
        self.order.len() as u32
    }

    pub fn is_full(&self) -> bool {
        self.len as usize == self.order.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.order[..self.len as usize].iter().map(|&o| ObjectId(o))
    }
}

impl PartialEq for CacheSet {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
            && self.order.len() == other.order.len()
            && self.iter().all(|o| other.contains(o))
    }
}

impl std::fmt::Debug for CacheSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CacheSet({}/{})", self.len, self.order.len())
    }
}

/// Sample per-user caches: each user draws `floor(beta3 * n)` distinct objects by
/// successive sampling proportional to `zipf_pmf(gamma_cache, n)`.
pub fn cache_placement<R: Rng + ?Sized>(
    catalog: &Catalog,
    num_users: usize,
    beta3: f64,
    gamma_cache: f64,
    rng: &mut R,
) -> Result<Vec<CacheSet>, ServiceError> {
    if !(0.0..=1.0).contains(&beta3) {
        return Err(ServiceError::Domain(format!("beta3 {beta3} outside [0, 1]")));
    }
    let n = catalog.num_objects() as usize;
    let weights = zipf_pmf(gamma_cache, n)?;
    let k = (beta3 * n as f64 + 1e-9).floor() as u32;
    let mut keys = vec![0f64; n];
    Ok((0..num_users)
        .map(|_| {
            // Efraimidis-Spirakis: sorting by ln(u)/w descending is successive
            // weighted sampling without replacement.
            for (key, w) in keys.iter_mut().zip(&weights) {
                let u: f64 = 1.0 - rng.random::<f64>();
                *key = u.ln() / w;
            }
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_unstable_by(|&a, &b| {
                keys[b as usize]
                    .total_cmp(&keys[a as usize])
                    .then(a.cmp(&b))
            });
            CacheSet::from_order(order, k)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum StreamKind {
    /// Sensor data originating at one node.
    Live { origin: NodeId },
    /// A stored object, replicable from any node caching it. `None` means the object
    /// is chosen per request.
    Static { object: Option<ObjectId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub unit_bits: Bits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceFunction {
    pub id: u32,
    /// Source streams consumed by this function.
    pub inputs: Vec<StreamSpec>,
    /// Relative size of each input: source inputs first, then upstream edges in edge order.
    /// Zero-size inputs carry a ratio of 0; the first sized input is the reference (1.0).
    pub merging_ratio: Vec<f64>,
    pub workload_cycles_per_bit: f64,
    pub scaling_factor: f64,
}

/// A service DAG. Execution assumes the functions are listed in topological order and
/// form a chain: commodity stage `k` is the input of function `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDag {
    pub functions: Vec<ServiceFunction>,
    /// Producer -> consumer function indices.
    pub edges: Vec<(usize, usize)>,
    pub sink: NodeId,
}

impl ServiceDag {
    pub fn final_stage(&self) -> u8 {
        self.functions.len() as u8
    }

    pub fn function(&self, stage: u8) -> Option<&ServiceFunction> {
        self.functions.get(stage as usize)
    }

    /// Bits of one unit of commodity at `stage`.
    pub fn stage_bits(&self, stage: u8) -> Bits {
        let mut bits: Bits = self
            .functions
            .first()
            .map(|f| f.inputs.iter().map(|s| s.unit_bits).sum())
            .unwrap_or(0);
        for f in self.functions.iter().take(stage as usize) {
            bits = scale_bits(bits, f.scaling_factor);
        }
        bits
    }

    /// The per-request static object input of the first function, if any.
    pub fn static_input(&self) -> Option<&StreamSpec> {
        self.functions
            .first()?
            .inputs
            .iter()
            .find(|s| matches!(s.kind, StreamKind::Static { .. }) && s.unit_bits > 0)
    }
}

/// Output bits for `input` bits through a function with scaling factor `xi`.
pub fn scale_bits(input: Bits, xi: f64) -> Bits {
    (input as f64 * xi).round() as Bits
}

/// Where static and live sources can come from.
pub trait SourceAvailability {
    fn node_exists(&self, node: NodeId) -> bool;
    /// Whether some node holds `object`; `None` asks whether every object has a holder.
    fn has_static_source(&self, object: Option<ObjectId>) -> bool;
}

impl SourceAvailability for NetworkState {
    fn node_exists(&self, node: NodeId) -> bool {
        node.index() < self.nodes().len()
    }

    fn has_static_source(&self, object: Option<ObjectId>) -> bool {
        match object {
            Some(o) => self.nodes().iter().any(|n| n.cache.contains(o)),
            None => self.nodes().iter().any(|n| n.cache.is_full()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DagViolation {
    Empty,
    BadEdge { from: usize, to: usize },
    Cycle { functions: Vec<usize> },
    SinkCount { terminals: Vec<usize> },
    NoInput { function: usize },
    NonPositive { function: usize, parameter: &'static str },
    MergingRatio { function: usize, reason: String },
    MissingSource { function: usize, input: usize },
    UnknownSink(NodeId),
}

/// Structural and availability checks. Returns every violation found.
pub fn validate_dag(
    dag: &ServiceDag,
    avail: &impl SourceAvailability,
) -> Result<(), Vec<DagViolation>> {
    let mut out = Vec::new();
    let n = dag.functions.len();
    if n == 0 {
        out.push(DagViolation::Empty);
    }
    let mut indegree = vec![0usize; n];
    let mut upstream = vec![0usize; n];
    let mut outdegree = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for &(from, to) in &dag.edges {
        if from >= n || to >= n || from == to {
            out.push(DagViolation::BadEdge { from, to });
            continue;
        }
        adj[from].push(to);
        indegree[to] += 1;
        upstream[to] += 1;
        outdegree[from] += 1;
    }
    // Kahn's algorithm; whatever is left over sits on a cycle.
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        for &j in &adj[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if seen < n {
        out.push(DagViolation::Cycle {
            functions: (0..n).filter(|&i| indegree[i] > 0).collect(),
        });
    }
    let terminals: Vec<usize> = (0..n).filter(|&i| outdegree[i] == 0).collect();
    if n > 0 && terminals.len() != 1 {
        out.push(DagViolation::SinkCount { terminals });
    }
    if !avail.node_exists(dag.sink) {
        out.push(DagViolation::UnknownSink(dag.sink));
    }

    for (i, f) in dag.functions.iter().enumerate() {
        if f.inputs.is_empty() && upstream[i] == 0 {
            out.push(DagViolation::NoInput { function: i });
        }
        if !(f.workload_cycles_per_bit.is_finite() && f.workload_cycles_per_bit >= 0.0) {
            out.push(DagViolation::NonPositive {
                function: i,
                parameter: "workload",
            });
        }
        if !(f.scaling_factor.is_finite() && f.scaling_factor > 0.0) {
            out.push(DagViolation::NonPositive {
                function: i,
                parameter: "scaling_factor",
            });
        }
        let expected = f.inputs.len() + upstream[i];
        if f.merging_ratio.len() != expected {
            out.push(DagViolation::MergingRatio {
                function: i,
                reason: format!("{} ratios for {expected} inputs", f.merging_ratio.len()),
            });
        } else {
            let sized = f
                .inputs
                .iter()
                .map(|s| s.unit_bits > 0)
                .chain(std::iter::repeat_n(true, upstream[i]));
            let mut reference = None;
            for (k, (is_sized, &r)) in sized.zip(&f.merging_ratio).enumerate() {
                let ok = if is_sized { r > 0.0 } else { r == 0.0 };
                if !ok {
                    out.push(DagViolation::MergingRatio {
                        function: i,
                        reason: format!("input {k} has ratio {r}"),
                    });
                }
                if is_sized && reference.is_none() {
                    reference = Some(r);
                }
            }
            if let Some(r) = reference {
                if (r - 1.0).abs() > 1e-12 {
                    out.push(DagViolation::MergingRatio {
                        function: i,
                        reason: format!("reference input has ratio {r}, expected 1"),
                    });
                }
            }
        }
        for (k, s) in f.inputs.iter().enumerate() {
            let available = match s.kind {
                StreamKind::Live { origin } => avail.node_exists(origin),
                StreamKind::Static { object } => avail.has_static_source(object),
            };
            if !available {
                out.push(DagViolation::MissingSource {
                    function: i,
                    input: k,
                });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Sizes of the VR pipeline: a 2D image in, a 3D field of view out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VrProfile {
    pub output_bits: Bits,
    pub workload_cycles: f64,
}

impl Default for VrProfile {
    fn default() -> Self {
        Self {
            output_bits: 6_000_000,
            workload_cycles: 3e7,
        }
    }
}

impl VrProfile {
    /// One-function DAG for `user`. The tracking signal is a zero-size live input carried
    /// with the request; `object` of `None` leaves the image to be chosen per request.
    pub fn service(&self, catalog: &Catalog, user: NodeId, object: Option<ObjectId>) -> ServiceDag {
        let image = catalog.object_bits();
        ServiceDag {
            functions: vec![ServiceFunction {
                id: 0,
                inputs: vec![
                    StreamSpec {
                        kind: StreamKind::Static { object },
                        unit_bits: image,
                    },
                    StreamSpec {
                        kind: StreamKind::Live { origin: user },
                        unit_bits: 0,
                    },
                ],
                merging_ratio: vec![1.0, 0.0],
                workload_cycles_per_bit: self.workload_cycles / image as f64,
                scaling_factor: self.output_bits as f64 / image as f64,
            }],
            edges: Vec::new(),
            sink: user,
        }
    }
}

/// The VR service of the experiment for one user and one object.
pub fn vr_service(catalog: &Catalog, user: NodeId, object: ObjectId) -> Result<ServiceDag, ServiceError> {
    if !catalog.contains(object) {
        return Err(ServiceError::Domain(format!("{object} not in catalog")));
    }
    Ok(VrProfile::default().service(catalog, user, Some(object)))
}

/// Service DAGs indexed by [`ServiceId`].
#[derive(Debug, Clone, Default)]
pub struct ServiceRegistry {
    dags: Vec<ServiceDag>,
}

impl ServiceRegistry {
    pub fn new(dags: Vec<ServiceDag>) -> Self {
        Self { dags }
    }

    /// One VR service per user, `ServiceId(u)` for user `u`.
    pub fn vr(profile: &VrProfile, catalog: &Catalog, users: impl IntoIterator<Item = NodeId>) -> Self {
        Self::new(
            users
                .into_iter()
                .map(|u| profile.service(catalog, u, None))
                .collect(),
        )
    }

    pub fn get(&self, id: ServiceId) -> Option<&ServiceDag> {
        self.dags.get(id.index())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ServiceId, &ServiceDag)> {
        self.dags
            .iter()
            .enumerate()
            .map(|(i, d)| (ServiceId(i as u32), d))
    }

    pub fn len(&self) -> usize {
        self.dags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dags.is_empty()
    }
}

/// A request for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub user: NodeId,
    pub object: ObjectId,
    pub arrival_slot: u64,
}

impl Request {
    /// The VR service instance serving this request.
    pub fn service(&self) -> ServiceId {
        ServiceId(self.user.0)
    }
}

/// A class of data sharing one queue per node: a service instance at one processing
/// stage. Stage-0 data is additionally keyed by the object it was replicated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Commodity {
    pub service: ServiceId,
    pub stage: u8,
    pub object: Option<ObjectId>,
}

impl Commodity {
    pub fn input(service: ServiceId, object: ObjectId) -> Self {
        Self {
            service,
            stage: 0,
            object: Some(object),
        }
    }

    pub fn stage(service: ServiceId, stage: u8) -> Self {
        Self {
            service,
            stage,
            object: None,
        }
    }
}

/// Periodic per-user requests at `lambda_fps` with a random phase per user, over
/// `horizon_slots` slots. Objects are drawn from the catalog popularity. The result is
/// ordered by `(arrival_slot, user)` and ids follow that order.
pub fn sample_requests<R: Rng + ?Sized>(
    state: &NetworkState,
    lambda_fps: f64,
    slot_duration_s: f64,
    horizon_slots: u64,
    catalog: &Catalog,
    rng: &mut R,
) -> Result<Vec<Request>, ServiceError> {
    if !(lambda_fps.is_finite() && lambda_fps >= 0.0) {
        return Err(ServiceError::Config(format!("lambda {lambda_fps} must be >= 0")));
    }
    if slot_duration_s <= 0.0 {
        return Err(ServiceError::Config("slot duration must be > 0".into()));
    }
    if lambda_fps * slot_duration_s > 1.0 {
        return Err(ServiceError::Config(format!(
            "{lambda_fps} fps needs more than one request per {slot_duration_s} s slot"
        )));
    }
    if lambda_fps == 0.0 {
        return Ok(Vec::new());
    }
    let period = 1.0 / lambda_fps;
    let mut arrivals = Vec::new();
    for user in state.user_ids() {
        let phase = rng.random::<f64>() * period;
        for k in 0u64.. {
            let slot = ((phase + k as f64 * period) / slot_duration_s).floor() as u64;
            if slot >= horizon_slots {
                break;
            }
            arrivals.push((slot, user));
        }
    }
    arrivals.sort_unstable();
    Ok(arrivals
        .into_iter()
        .enumerate()
        .map(|(i, (slot, user))| Request {
            id: RequestId(i as u64),
            user,
            object: catalog.sample(rng),
            arrival_slot: slot,
        })
        .collect())
}

/// Write a request trace as CSV (`id,user,object,arrival_slot`).
pub fn write_request_trace<W: io::Write>(out: W, requests: &[Request]) -> Result<(), ServiceError> {
    let mut w = csv::Writer::from_writer(out);
    for r in requests {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_request_trace<R: io::Read>(input: R) -> Result<Vec<Request>, ServiceError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_vr_scenario, ScenarioConfig, ScenarioKnobs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zipf_closed_forms() {
        assert_eq!(zipf_pmf(0.0, 4).unwrap(), vec![0.25; 4]);
        let p = zipf_pmf(1.0, 2).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(zipf_pmf(1.0, 0), Err(ServiceError::Domain(_))));
    }

    #[test]
    fn zipf_head_is_inverse_harmonic() {
        // Independent harmonic sum, accumulated in the opposite order with Kahan steps.
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for r in 1..=10_000u32 {
            let y = 1.0 / r as f64 - c;
            let t = h + y;
            c = (t - h) - y;
            h = t;
        }
        let p = zipf_pmf(1.0, 10_000).unwrap();
        assert!((p[0] - 1.0 / h).abs() < 1e-15, "{} vs {}", p[0], 1.0 / h);
        assert!((h - 9.787_606_036_044_382).abs() < 1e-12);
    }

    #[test]
    fn vr_service_sizes() {
        let cat = Catalog::zipf(100, 3_000_000, 1.0).unwrap();
        let dag = vr_service(&cat, NodeId(4), ObjectId(7)).unwrap();
        let f = &dag.functions[0];
        assert_eq!(f.workload_cycles_per_bit * 3e6, 3e7);
        assert_eq!(f.scaling_factor, 2.0);
        assert_eq!(dag.stage_bits(0), 3_000_000);
        assert_eq!(dag.stage_bits(1), 6_000_000);
        assert_eq!(dag.sink, NodeId(4));
        assert!(vr_service(&cat, NodeId(4), ObjectId(100)).is_err());
    }

    fn scenario(beta3: f64) -> (NetworkState, Catalog) {
        let cfg = ScenarioConfig {
            num_users: 5,
            ..Default::default()
        };
        let cat = Catalog::zipf(cfg.catalog_size, cfg.object_bits, 1.0).unwrap();
        let s = build_vr_scenario(
            &cfg,
            &cat,
            &ScenarioKnobs {
                beta3,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        (s, cat)
    }

    #[test]
    fn vr_service_validates() {
        let (s, cat) = scenario(0.3);
        let dag = vr_service(&cat, NodeId(1), ObjectId(42)).unwrap();
        assert_eq!(validate_dag(&dag, &s), Ok(()));
        let template = VrProfile::default().service(&cat, NodeId(1), None);
        assert_eq!(validate_dag(&template, &s), Ok(()));
    }

    #[test]
    fn cycle_detected() {
        let (s, cat) = scenario(0.3);
        let mut dag = vr_service(&cat, NodeId(1), ObjectId(42)).unwrap();
        let mut g = dag.functions[0].clone();
        g.id = 1;
        g.merging_ratio.push(1.0);
        dag.functions[0].merging_ratio.push(1.0);
        dag.functions.push(g);
        dag.edges = vec![(0, 1), (1, 0)];
        let v = validate_dag(&dag, &s).unwrap_err();
        assert!(v.iter().any(|v| matches!(v, DagViolation::Cycle { .. })), "{v:?}");
    }

    struct NoHolders;
    impl SourceAvailability for NoHolders {
        fn node_exists(&self, _: NodeId) -> bool {
            true
        }
        fn has_static_source(&self, _: Option<ObjectId>) -> bool {
            false
        }
    }

    #[test]
    fn missing_static_source_detected() {
        let cat = Catalog::zipf(10, 3_000_000, 1.0).unwrap();
        let dag = vr_service(&cat, NodeId(0), ObjectId(3)).unwrap();
        assert_eq!(
            validate_dag(&dag, &NoHolders),
            Err(vec![DagViolation::MissingSource {
                function: 0,
                input: 0
            }])
        );
    }

    #[test]
    fn placement_sizes() {
        let cat = Catalog::zipf(10_000, 3_000_000, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in cache_placement(&cat, 3, 0.3, 1.0, &mut rng).unwrap() {
            assert_eq!(c.len(), 3000);
            assert_eq!(c.iter().count(), 3000);
        }
        for c in cache_placement(&cat, 2, 1.0, 1.0, &mut rng).unwrap() {
            assert!(c.is_full());
        }
    }

    #[test]
    fn placement_nested_across_beta3() {
        let cat = Catalog::zipf(1000, 3_000_000, 1.0).unwrap();
        let small = cache_placement(&cat, 4, 0.2, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let large = cache_placement(&cat, 4, 0.8, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (s, l) in small.iter().zip(&large) {
            assert!(s.iter().all(|o| l.contains(o)));
        }
    }

    #[test]
    fn placement_skew_raises_head_inclusion() {
        let cat = Catalog::zipf(1000, 3_000_000, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = |gamma: f64, rng: &mut ChaCha8Rng| {
            cache_placement(&cat, 10_000, 0.01, gamma, rng)
                .unwrap()
                .iter()
                .filter(|c| c.contains(ObjectId(0)))
                .count()
        };
        let steep = hits(1.0, &mut rng);
        let flat = hits(0.2, &mut rng);
        assert!(steep > flat, "{steep} vs {flat}");
    }

    #[test]
    fn periodic_requests_exact_count() {
        let (s, cat) = scenario(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reqs = sample_requests(&s, 60.0, 1e-3, 1000, &cat, &mut rng).unwrap();
        for u in s.user_ids() {
            assert_eq!(reqs.iter().filter(|r| r.user == u).count(), 60);
        }
        assert!(reqs.windows(2).all(|w| w[0].arrival_slot <= w[1].arrival_slot));
        assert!(reqs.iter().enumerate().all(|(i, r)| r.id == RequestId(i as u64)));
        assert!(sample_requests(&s, 0.0, 1e-3, 1000, &cat, &mut rng).unwrap().is_empty());
        assert!(matches!(
            sample_requests(&s, 1500.0, 1e-3, 1000, &cat, &mut rng),
            Err(ServiceError::Config(_))
        ));
    }

    #[test]
    fn trace_roundtrip() {
        let (s, cat) = scenario(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reqs = sample_requests(&s, 30.0, 1e-3, 200, &cat, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_request_trace(&mut buf, &reqs).unwrap();
        assert!(buf.starts_with(b"id,user,object,arrival_slot\n"));
        assert_eq!(read_request_trace(&buf[..]).unwrap(), reqs);
    }
}
