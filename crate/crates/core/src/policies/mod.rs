//! Control policies: map the slot state (network, queues, routes) to resource allocations
//! and flows.

pub mod dcnc;
pub mod route;
pub mod routed;
pub mod schedule;
pub mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ServiceId;
use crate::network::{NetworkError, NetworkState, ResourceAllocation};
use crate::queueing::{FlowDecision, QueueTable};
use crate::service::{Request, ServiceRegistry};

pub use dcnc::dcnc_decide;
pub use route::{
    assignment_cost, exhaustive_route, solve_route, CongestionMetric, CostModel, Hop, Resource,
    RouteAssignment, RouteProblem,
};
pub use routed::{centralized_route, mec_baseline, repair_routes, SlotEnv};
pub use schedule::{bs_schedule, greedy_matching};
pub use table::{RouteError, RouteTable, Step};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("no service {0}")]
    UnknownService(ServiceId),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Dcnc,
    #[default]
    Centralized,
    Mec,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dcnc => "dcnc",
            PolicyKind::Centralized => "centralized",
            PolicyKind::Mec => "mec",
        }
    }

    pub fn uses_routes(self) -> bool {
        !matches!(self, PolicyKind::Dcnc)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dcnc" => Ok(PolicyKind::Dcnc),
            "centralized" => Ok(PolicyKind::Centralized),
            "mec" => Ok(PolicyKind::Mec),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

/// Read-only view of one slot's state.
#[derive(Clone, Copy)]
pub struct PolicyContext<'a> {
    pub network: &'a NetworkState,
    pub queues: &'a QueueTable,
    pub services: &'a ServiceRegistry,
    pub routes: &'a RouteTable,
    /// Requests waiting for a route: this slot's arrivals plus earlier deferrals, by id.
    pub pending: &'a [Request],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Action {
    pub alloc: ResourceAllocation,
    pub flows: FlowDecision,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// Routes chosen this slot, to be installed before the flows are applied.
    pub routes: Vec<RouteAssignment>,
    pub deferred: Vec<Request>,
}

/// One slot's decision for `kind`.
pub fn decide(kind: PolicyKind, ctx: &PolicyContext<'_>, v_param: f64) -> Result<Decision, PolicyError> {
    match kind {
        PolicyKind::Dcnc => Ok(Decision {
            action: dcnc_decide(ctx, v_param)?,
            ..Default::default()
        }),
        PolicyKind::Centralized => routed::decide_routed(ctx, &CongestionMetric, true),
        PolicyKind::Mec => routed::decide_routed(ctx, &CongestionMetric, false),
    }
}
