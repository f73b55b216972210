//! Discrete-time simulation of compute/cache/communication networks.
//!
//! The crate models service DAGs whose inputs are replicated from caches, processed on
//! network nodes and delivered to users, with per-commodity queues and control policies
//! that decide transmission, processing and replication each slot.

pub mod engine;
pub mod ids;
pub mod network;
pub mod policies;
pub mod queueing;
pub mod rng;
pub mod service;

pub use engine::{
    attained_performance, is_feasible, run, AuditReport, Metrics, Performance, SimConfig, SimError,
    Utilization,
};
pub use ids::{Bits, NodeId, ObjectId, RequestId, ServiceId};
pub use network::{
    build_vr_scenario, d2d_rate, CapacitySnapshot, ChannelConfig, NetworkError, NetworkState,
    NodeKind, NodeSpec, Position, ResourceAllocation, ScenarioConfig, ScenarioKnobs,
};
pub use policies::{
    decide, Action, Decision, PolicyContext, PolicyError, PolicyKind, RouteAssignment, RouteTable,
};
pub use queueing::{
    Completion, DeliveryRecord, FlowDecision, FlowReport, ProcessFlow, QueueError, QueueTable,
    ReplicateFlow, TransmitFlow,
};
pub use service::{
    cache_placement, sample_requests, validate_dag, vr_service, zipf_pmf, CacheSet, Catalog,
    Commodity, Request, ServiceDag, ServiceRegistry, VrProfile,
};
