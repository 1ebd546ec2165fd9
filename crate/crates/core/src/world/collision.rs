//! Footprint-versus-world collision and road-keeping queries.

use super::geom::{wrap_angle, OrientedRect};
use super::map::PreparedMap;
use super::truck::{TruckParams, TruckState};

/// Result of one collision/road-keeping query.
#[derive(Debug, Clone)]
pub struct CollisionReport {
    /// Footprint touches a wall segment.
    pub wall_hit: bool,
    /// Index of the first overlapping participant, if any.
    pub participant_hit: Option<usize>,
    /// Signed distance from the nearest centerline [m], positive left of
    /// its forward direction.
    pub lateral_offset: f64,
    /// Heading error versus the nearest centerline tangent [rad], wrapped
    /// to the closer of the two travel directions on a bidirectional road.
    pub heading_error: f64,
    /// Edge id of the nearest centerline.
    pub nearest_edge: usize,
}

/// Checks the truck footprint against walls and other participants and
/// reports road-keeping geometry relative to the nearest centerline.
pub fn check_collision(
    state: &TruckState,
    params: &TruckParams,
    map: &PreparedMap,
    participants: &[OrientedRect],
) -> CollisionReport {
    let rect = state.footprint(params);
    let (min, max) = rect.aabb();

    let mut wall_hit = false;
    for idx in map.walls_grid.query_aabb(min, max) {
        let (a, b) = map.walls_grid.segments()[idx];
        if rect.intersects_segment(a, b) {
            wall_hit = true;
            break;
        }
    }

    let participant_hit = participants
        .iter()
        .position(|other| rect.intersects_rect(other));

    let (nearest_edge, _, lateral_offset, tangent) = map.nearest_centerline(state.pos);
    let err_fwd = wrap_angle(state.heading - tangent.angle());
    let err_rev = wrap_angle(state.heading - tangent.angle() + std::f64::consts::PI);
    let heading_error = if err_fwd.abs() <= err_rev.abs() {
        err_fwd
    } else {
        err_rev
    };

    CollisionReport {
        wall_hit,
        participant_hit,
        lateral_offset,
        heading_error,
        nearest_edge,
    }
}
