//! The compute/cache/communication substrate: nodes, mobility and per-slot capacities.
//!
//! A [`NetworkState`] is the uncontrollable part of the system state: user positions
//! (random-waypoint mobility), what every node caches, and the raw rates that channel
//! and processor models give for the current slot. Capacities for a slot are only
//! produced against a concrete [`ResourceAllocation`], since the D2D pairing and the
//! base-station schedule decide which links exist at all.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Bits, NodeId};
use crate::rng::{self, Stream};
use crate::service::{cache_placement, CacheSet, Catalog};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid allocation: {0}")]
    Allocation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    User,
    BaseStation,
}

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: Position,
    /// Cycles per second of one processor, before any user-side scaling.
    pub proc_capacity_hz: f64,
    pub num_processors: u32,
    /// Fraction of the catalog this node may cache.
    pub storage_fraction: f64,
    pub cache: CacheSet,
}

impl NodeSpec {
    pub fn is_user(&self) -> bool {
        self.kind == NodeKind::User
    }
}

/// Parameters of the D2D channel. Pathloss is log-distance with no fading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub tx_power_w: f64,
    pub bandwidth_hz: f64,
    pub coop_range_m: f64,
    pub pathloss_exponent: f64,
    pub ref_loss_db: f64,
    pub noise_psd_dbm_hz: f64,
    /// Fraction of the D2D bandwidth available to users (the transmission budget knob).
    pub bw_scale: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            tx_power_w: 1.0,
            bandwidth_hz: 20e6,
            coop_range_m: 20.0,
            pathloss_exponent: 3.0,
            ref_loss_db: 40.0,
            noise_psd_dbm_hz: -174.0,
            bw_scale: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        check(self.tx_power_w > 0.0, "channel.tx_power_w must be > 0")?;
        check(self.bandwidth_hz > 0.0, "channel.bandwidth_hz must be > 0")?;
        check(self.coop_range_m > 0.0, "channel.coop_range_m must be > 0")?;
        check(
            self.pathloss_exponent.is_finite() && self.pathloss_exponent >= 0.0,
            "channel.pathloss_exponent must be finite and >= 0",
        )?;
        check(self.ref_loss_db.is_finite(), "channel.ref_loss_db must be finite")?;
        check(
            self.noise_psd_dbm_hz.is_finite(),
            "channel.noise_psd_dbm_hz must be finite",
        )?;
        // A zero budget is allowed: it switches D2D off entirely.
        check(
            (0.0..=1.0).contains(&self.bw_scale),
            "channel.bw_scale must lie in [0, 1]",
        )
    }

    pub fn scaled_bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz * self.bw_scale
    }
}

fn check(cond: bool, msg: &str) -> Result<(), NetworkError> {
    if cond {
        Ok(())
    } else {
        Err(NetworkError::Config(msg.to_owned()))
    }
}

/// Shannon rate of a D2D link in bits per second.
///
/// Distances below the 1 m reference distance are clamped to it. Beyond the
/// cooperation range, or with a zero bandwidth budget, the rate is 0.
pub fn d2d_rate(tx: Position, rx: Position, chan: &ChannelConfig) -> f64 {
    let d = tx.distance(&rx);
    if d > chan.coop_range_m {
        return 0.0;
    }
    let bw = chan.scaled_bandwidth_hz();
    if bw <= 0.0 {
        return 0.0;
    }
    let d = d.max(1.0);
    let tx_dbm = 10.0 * (chan.tx_power_w * 1e3).log10();
    let rx_dbm = tx_dbm - chan.ref_loss_db - 10.0 * chan.pathloss_exponent * d.log10();
    let noise_dbm = chan.noise_psd_dbm_hz + 10.0 * bw.log10();
    let snr = 10f64.powf((rx_dbm - noise_dbm) / 10.0);
    bw * (1.0 + snr).log2()
}

/// Static description of the VR scenario. Every field has the experiment's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub arena_m: f64,
    pub num_users: u32,
    pub catalog_size: u32,
    pub object_bits: Bits,
    pub output_bits: Bits,
    pub workload_cycles: f64,
    pub user_proc_hz: f64,
    pub user_processors: u32,
    pub bs_processors: u32,
    /// Not given for the base station; assumed equal to a user processor.
    pub bs_proc_hz: f64,
    pub bs_rate_bps: f64,
    pub bs_fanout: u32,
    /// Whether a user may receive from the base station and use D2D in the same slot.
    pub bs_and_d2d_same_slot: bool,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub channel: ChannelConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            arena_m: 100.0,
            num_users: 100,
            catalog_size: 10_000,
            object_bits: 3_000_000,
            output_bits: 6_000_000,
            workload_cycles: 3e7,
            user_proc_hz: 3e9,
            user_processors: 1,
            bs_processors: 10,
            bs_proc_hz: 3e9,
            bs_rate_bps: 200e6,
            bs_fanout: 20,
            bs_and_d2d_same_slot: true,
            speed_min_mps: 0.5,
            speed_max_mps: 1.5,
            channel: ChannelConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        check(self.arena_m > 0.0, "arena_m must be > 0")?;
        check(self.catalog_size > 0, "catalog_size must be > 0")?;
        check(self.object_bits > 0, "object_bits must be > 0")?;
        check(self.output_bits > 0, "output_bits must be > 0")?;
        check(self.workload_cycles >= 0.0, "workload_cycles must be >= 0")?;
        check(self.user_proc_hz >= 0.0, "user_proc_hz must be >= 0")?;
        check(self.bs_proc_hz >= 0.0, "bs_proc_hz must be >= 0")?;
        check(self.bs_rate_bps >= 0.0, "bs_rate_bps must be >= 0")?;
        check(
            self.speed_min_mps >= 0.0 && self.speed_max_mps >= self.speed_min_mps,
            "speeds must satisfy 0 <= speed_min_mps <= speed_max_mps",
        )?;
        self.channel.validate()
    }
}

/// The per-run resource knobs applied on top of a [`ScenarioConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioKnobs {
    /// Fraction of user processing capacity.
    pub beta1: f64,
    /// Fraction of user D2D bandwidth.
    pub beta2: f64,
    /// Fraction of the catalog each user caches.
    pub beta3: f64,
    pub gamma_cache: f64,
    pub slot_duration_s: f64,
}

impl Default for ScenarioKnobs {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            beta3: 0.3,
            gamma_cache: 1.0,
            slot_duration_s: 1e-3,
        }
    }
}

/// Everything about a network that is not a node.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arena_m: f64,
    pub bs_rate_bps: f64,
    pub bs_fanout: u32,
    pub user_proc_scale: f64,
    pub channel: ChannelConfig,
    pub slot_duration_s: f64,
    pub bs_and_d2d_same_slot: bool,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        let sc = ScenarioConfig::default();
        Self {
            arena_m: sc.arena_m,
            bs_rate_bps: sc.bs_rate_bps,
            bs_fanout: sc.bs_fanout,
            user_proc_scale: 1.0,
            channel: sc.channel,
            slot_duration_s: 1e-3,
            bs_and_d2d_same_slot: true,
            speed_min_mps: sc.speed_min_mps,
            speed_max_mps: sc.speed_max_mps,
        }
    }
}

#[derive(Debug, Clone)]
struct Walker {
    waypoint: Position,
    speed: f64,
}

/// Per-slot uncontrollable state of the network.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub slot: u64,
    nodes: Vec<NodeSpec>,
    walkers: Vec<Walker>,
    bs: NodeId,
    params: NetworkParams,
    rng: ChaCha8Rng,
}

/// Build the VR scenario: users uniformly placed, the base station at the centre holding
/// the whole catalog, user caches sampled from the caching distribution.
pub fn build_vr_scenario(
    config: &ScenarioConfig,
    catalog: &Catalog,
    knobs: &ScenarioKnobs,
    seed: u64,
) -> Result<NetworkState, NetworkError> {
    config.validate()?;
    check(
        (0.0..=1.0).contains(&knobs.beta1),
        "beta1 must lie in [0, 1]",
    )?;
    check(
        (0.0..=1.0).contains(&knobs.beta3),
        "beta3 must lie in [0, 1]",
    )?;
    check(knobs.slot_duration_s > 0.0, "slot_duration_s must be > 0")?;
    check(
        catalog.num_objects() == config.catalog_size,
        "catalog size does not match scenario catalog_size",
    )?;
    let mut channel = config.channel.clone();
    channel.bw_scale = knobs.beta2;
    channel.validate()?;

    let mut place_rng = rng::stream(seed, Stream::Placement);
    let mut cache_rng = rng::stream(seed, Stream::Caching);
    let caches = cache_placement(
        catalog,
        config.num_users as usize,
        knobs.beta3,
        knobs.gamma_cache,
        &mut cache_rng,
    )
    .map_err(|e| NetworkError::Config(e.to_string()))?;

    let arena = config.arena_m;
    let mut nodes = Vec::with_capacity(config.num_users as usize + 1);
    for (u, cache) in caches.into_iter().enumerate() {
        let position = Position::new(
            place_rng.random_range(0.0..=arena),
            place_rng.random_range(0.0..=arena),
        );
        nodes.push(NodeSpec {
            id: NodeId(u as u32),
            kind: NodeKind::User,
            position,
            proc_capacity_hz: config.user_proc_hz,
            num_processors: config.user_processors,
            storage_fraction: knobs.beta3,
            cache,
        });
    }
    nodes.push(NodeSpec {
        id: NodeId(config.num_users),
        kind: NodeKind::BaseStation,
        position: Position::new(arena / 2.0, arena / 2.0),
        proc_capacity_hz: config.bs_proc_hz,
        num_processors: config.bs_processors,
        storage_fraction: 1.0,
        cache: CacheSet::full(catalog.num_objects()),
    });
    let params = NetworkParams {
        arena_m: arena,
        bs_rate_bps: config.bs_rate_bps,
        bs_fanout: config.bs_fanout,
        user_proc_scale: knobs.beta1,
        channel,
        slot_duration_s: knobs.slot_duration_s,
        bs_and_d2d_same_slot: config.bs_and_d2d_same_slot,
        speed_min_mps: config.speed_min_mps,
        speed_max_mps: config.speed_max_mps,
    };
    NetworkState::new(nodes, params, rng::stream(seed, Stream::Mobility))
}

impl NetworkState {
    /// Assemble a state from explicit nodes. Node ids must equal their index.
    pub fn new(
        nodes: Vec<NodeSpec>,
        params: NetworkParams,
        mut rng: ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        params.channel.validate()?;
        check(params.slot_duration_s > 0.0, "slot_duration_s must be > 0")?;
        check(
            (0.0..=1.0).contains(&params.user_proc_scale),
            "user_proc_scale must lie in [0, 1]",
        )?;
        let mut bs = None;
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(NetworkError::Config(format!(
                    "node {} stored at index {i}",
                    n.id
                )));
            }
            check(n.proc_capacity_hz >= 0.0, "proc_capacity_hz must be >= 0")?;
            check(
                (0.0..=1.0).contains(&n.storage_fraction),
                "storage_fraction must lie in [0, 1]",
            )?;
            let limit = (n.storage_fraction * n.cache.catalog_size() as f64 + 1e-9).floor();
            if n.cache.len() as f64 > limit {
                return Err(NetworkError::Config(format!(
                    "node {} caches {} objects, more than its storage allows",
                    n.id,
                    n.cache.len()
                )));
            }
            let inside = |v: f64| (0.0..=params.arena_m).contains(&v);
            if !inside(n.position.x) || !inside(n.position.y) {
                return Err(NetworkError::Config(format!("node {} outside arena", n.id)));
            }
            if n.kind == NodeKind::BaseStation {
                if bs.replace(n.id).is_some() {
                    return Err(NetworkError::Config(
                        "more than one base station".to_owned(),
                    ));
                }
                if !n.cache.is_full() {
                    return Err(NetworkError::Config(
                        "base station must cache the full catalog".to_owned(),
                    ));
                }
            }
        }
        let bs = bs.ok_or_else(|| NetworkError::Config("no base station".to_owned()))?;
        let walkers = nodes
            .iter()
            .map(|n| {
                if n.is_user() {
                    Walker {
                        waypoint: random_point(&mut rng, params.arena_m),
                        speed: random_speed(&mut rng, &params),
                    }
                } else {
                    Walker {
                        waypoint: n.position,
                        speed: 0.0,
                    }
                }
            })
            .collect();
        Ok(Self {
            slot: 0,
            nodes,
            walkers,
            bs,
            params,
            rng,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeSpec, NetworkError> {
        self.nodes.get(id.index()).ok_or(NetworkError::UnknownNode(id))
    }

    pub fn base_station(&self) -> NodeId {
        self.bs
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.params.slot_duration_s
    }

    pub fn num_users(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn user_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_user()).map(|n| n.id)
    }

    pub fn is_user(&self, id: NodeId) -> bool {
        self.nodes.get(id.index()).is_some_and(NodeSpec::is_user)
    }

    pub fn position(&self, id: NodeId) -> Position {
        self.nodes[id.index()].position
    }

    /// Whether `node` holds `object` (the base station holds everything).
    pub fn caches(&self, node: NodeId, object: crate::ids::ObjectId) -> bool {
        self.nodes
            .get(node.index())
            .is_some_and(|n| n.cache.contains(object))
    }

    /// Per-processor cycle rate, with the user-side scaling applied.
    pub fn per_processor_hz(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id.index()];
        if n.is_user() {
            n.proc_capacity_hz * self.params.user_proc_scale
        } else {
            n.proc_capacity_hz
        }
    }

    /// Current D2D rate between two users, 0 when out of range or when either is not a user.
    pub fn d2d_link_rate(&self, tx: NodeId, rx: NodeId) -> f64 {
        if tx == rx || !self.is_user(tx) || !self.is_user(rx) {
            return 0.0;
        }
        d2d_rate(self.position(tx), self.position(rx), &self.params.channel)
    }

    pub fn in_d2d_range(&self, a: NodeId, b: NodeId) -> bool {
        a != b
            && self.is_user(a)
            && self.is_user(b)
            && self.position(a).distance(&self.position(b)) <= self.params.channel.coop_range_m
    }

    /// Users within cooperation range of `node`. The base station is reached over the
    /// cellular downlink and is never part of this set.
    pub fn neighbors_in_range(&self, node: NodeId) -> Result<BTreeSet<NodeId>, NetworkError> {
        let spec = self.node(node)?;
        if !spec.is_user() {
            return Ok(BTreeSet::new());
        }
        Ok(self
            .user_ids()
            .filter(|&u| self.in_d2d_range(node, u))
            .collect())
    }

    /// Advance every user by random-waypoint motion. The base station never moves.
    pub fn step_mobility(&mut self, slot_duration_s: f64) {
        let arena = self.params.arena_m;
        for (node, walker) in self.nodes.iter_mut().zip(self.walkers.iter_mut()) {
            if !node.is_user() {
                continue;
            }
            let mut time_left = slot_duration_s;
            while time_left > 0.0 && walker.speed > 0.0 {
                let to_go = node.position.distance(&walker.waypoint);
                let reach = walker.speed * time_left;
                if to_go <= reach {
                    node.position = walker.waypoint;
                    time_left -= to_go / walker.speed;
                    walker.waypoint = random_point(&mut self.rng, arena);
                    walker.speed = random_speed(&mut self.rng, &self.params);
                } else {
                    let f = reach / to_go;
                    node.position.x += (walker.waypoint.x - node.position.x) * f;
                    node.position.y += (walker.waypoint.y - node.position.y) * f;
                    time_left = 0.0;
                }
            }
            node.position.x = node.position.x.clamp(0.0, arena);
            node.position.y = node.position.y.clamp(0.0, arena);
        }
        self.slot += 1;
    }

    /// Bits the downlink carries to one scheduled user per slot.
    pub fn bs_link_bits(&self) -> Bits {
        (self.params.bs_rate_bps * self.params.slot_duration_s).floor() as Bits
    }

    /// Bits a matched D2D pair carries per slot.
    pub fn d2d_link_bits(&self, tx: NodeId, rx: NodeId) -> Bits {
        if !self.in_d2d_range(tx, rx) {
            return 0;
        }
        (self.d2d_link_rate(tx, rx) * self.params.slot_duration_s).floor() as Bits
    }

    /// Cycles one processor of `node` provides per slot.
    pub fn processor_cycles(&self, node: NodeId) -> u64 {
        (self.per_processor_hz(node) * self.params.slot_duration_s).floor() as u64
    }

    /// Per-slot capacities under an allocation.
    pub fn capacities(&self, alloc: &ResourceAllocation) -> Result<CapacitySnapshot, NetworkError> {
        let mut busy: BTreeSet<NodeId> = BTreeSet::new();
        let mut links = BTreeMap::new();

        if alloc.bs_users.len() > self.params.bs_fanout as usize {
            return Err(NetworkError::Allocation(format!(
                "{} users scheduled on the downlink, fanout is {}",
                alloc.bs_users.len(),
                self.params.bs_fanout
            )));
        }
        let bs_bits = self.bs_link_bits();
        for &u in &alloc.bs_users {
            if !self.is_user(u) {
                return Err(NetworkError::Allocation(format!("{u} is not a user")));
            }
            if links.insert((self.bs, u), bs_bits).is_some() {
                return Err(NetworkError::Allocation(format!("{u} scheduled twice")));
            }
        }
        for &(tx, rx) in &alloc.d2d {
            if !self.in_d2d_range(tx, rx) {
                return Err(NetworkError::Allocation(format!(
                    "D2D link {tx}->{rx} is not between users in range"
                )));
            }
            for n in [tx, rx] {
                if !busy.insert(n) {
                    return Err(NetworkError::Allocation(format!(
                        "{n} has more than one D2D partner"
                    )));
                }
                if !self.params.bs_and_d2d_same_slot && alloc.bs_users.contains(&n) {
                    return Err(NetworkError::Allocation(format!(
                        "{n} uses both downlink and D2D"
                    )));
                }
            }
            links.insert((tx, rx), self.d2d_link_bits(tx, rx));
        }

        let mut proc_total = vec![0; self.nodes.len()];
        let mut proc_per_server = vec![0; self.nodes.len()];
        for &n in &alloc.processors_on {
            let spec = self.node(n)?;
            let per = self.processor_cycles(n);
            proc_per_server[n.index()] = per;
            proc_total[n.index()] = per * spec.num_processors as u64;
        }
        Ok(CapacitySnapshot {
            links,
            proc_total,
            proc_per_server,
        })
    }
}

fn random_point(rng: &mut ChaCha8Rng, arena: f64) -> Position {
    Position::new(rng.random_range(0.0..=arena), rng.random_range(0.0..=arena))
}

fn random_speed(rng: &mut ChaCha8Rng, p: &NetworkParams) -> f64 {
    if p.speed_max_mps > p.speed_min_mps {
        rng.random_range(p.speed_min_mps..p.speed_max_mps)
    } else {
        p.speed_min_mps
    }
}

/// Controllable resource decisions for one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResourceAllocation {
    /// Users served by the base-station downlink.
    pub bs_users: Vec<NodeId>,
    /// Directed D2D transmissions `(tx, rx)`. Each user appears at most once.
    pub d2d: Vec<(NodeId, NodeId)>,
    pub processors_on: Vec<NodeId>,
}

/// What each resource can carry during one slot: bits per link, cycles per node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapacitySnapshot {
    pub links: BTreeMap<(NodeId, NodeId), Bits>,
    /// Total cycles per node (all processors).
    pub proc_total: Vec<u64>,
    /// Cycles one processor can spend; a single frame never exceeds this.
    pub proc_per_server: Vec<u64>,
}

impl CapacitySnapshot {
    pub fn link(&self, tx: NodeId, rx: NodeId) -> Bits {
        self.links.get(&(tx, rx)).copied().unwrap_or(0)
    }

    pub fn cycles(&self, node: NodeId) -> u64 {
        self.proc_total.get(node.index()).copied().unwrap_or(0)
    }

    pub fn per_server_cycles(&self, node: NodeId) -> u64 {
        self.proc_per_server.get(node.index()).copied().unwrap_or(0)
    }
}
