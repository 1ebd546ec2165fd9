//! Scripted expert driving: route planning over the road graph, a
//! pursuit-based route follower, and multi-truck traffic simulation.

pub mod policy;
pub mod route;
pub mod traffic;

pub use policy::{longitudinal_split, ExpertDecision, ExpertPolicy};
pub use route::{plan_route, route_from_edges, Route};
pub use traffic::{forward_gap, TrafficSim, TrafficTruck};
