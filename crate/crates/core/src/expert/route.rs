//! Routes over the road graph: shortest-path planning and centerline
//! stitching with fillet arcs at junction corners.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::world::{MineMap, Polyline, Vec2};
use crate::{Error, Result};

/// Fillet radius inserted at junction corners [m].
const FILLET_RADIUS: f64 = 10.0;
/// Corners shallower than this are stitched without an arc [rad].
const FILLET_MIN_ANGLE: f64 = 2.0 * std::f64::consts::PI / 180.0;
/// Sample spacing for generated arc points [m].
const ARC_STEP: f64 = 2.0;

/// Corners sharper than this count as turns rather than straight-through
/// passes [rad].
const TURN_THRESHOLD: f64 = 30.0 * std::f64::consts::PI / 180.0;

/// Decision point along a route: an intersection the path passes through.
#[derive(Debug, Clone, Copy)]
pub struct RouteEvent {
    /// Arc position of the junction along the stitched path [m].
    pub s: f64,
    /// Turn direction: +1 left, 0 straight, -1 right.
    pub dir: f64,
    /// Corner angle [rad], positive left.
    pub angle: f64,
    /// Junction node id.
    pub node: usize,
}

/// A drivable path: stitched centerline plus the road width along it.
#[derive(Debug, Clone)]
pub struct Route {
    pub path: Polyline,
    /// Narrowest road width along the route [m].
    pub width: f64,
    /// Intersections passed, ascending in s.
    pub events: Vec<RouteEvent>,
}

impl Route {
    pub fn len(&self) -> f64 {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.len() == 0.0
    }

    /// Navigation signal at arc position `s`: direction of the next junction
    /// turn, a proximity ramp for it and a proximity ramp for the route end.
    /// Ramps rise linearly from 0 at `horizon` metres out to 1 at the point.
    pub fn nav_at(&self, s: f64, horizon: f64) -> (f64, f64, f64) {
        let mut dir = 0.0;
        let mut prox = 0.0;
        for ev in &self.events {
            if ev.s < s - 1.0 {
                continue;
            }
            let d = ev.s - s;
            if d > horizon {
                break;
            }
            dir = ev.dir;
            prox = (1.0 - d.max(0.0) / horizon).clamp(0.0, 1.0);
            break;
        }
        let end_prox = (1.0 - (self.len() - s).max(0.0) / horizon).clamp(0.0, 1.0);
        (dir, prox, end_prox)
    }

    /// Largest absolute centerline curvature in `[s0, s1]` [1/m].
    pub fn max_abs_curvature(&self, s0: f64, s1: f64) -> f64 {
        let ds = 4.0;
        let mut worst: f64 = 0.0;
        let mut s = s0.max(ds);
        let hi = s1.min(self.len() - ds);
        while s <= hi {
            worst = worst.max(self.path.curvature_at(s, ds).abs());
            s += 2.0;
        }
        worst
    }
}

/// Stitches an explicit sequence of edge traversals into a route. Each entry
/// is `(edge id, forward)`; consecutive traversals must share a node, and a
/// fillet arc replaces the corner where their headings differ.
pub fn route_from_edges(map: &MineMap, legs: &[(usize, bool)]) -> Result<Route> {
    if legs.is_empty() {
        return Err(Error::InvalidInput("route needs at least one edge".into()));
    }
    let mut width = f64::INFINITY;
    let mut oriented: Vec<Vec<Vec2>> = Vec::with_capacity(legs.len());
    for &(eid, fwd) in legs {
        let e = map
            .edges
            .get(eid)
            .ok_or_else(|| Error::InvalidInput(format!("route references edge {eid}")))?;
        if !fwd && !e.bidirectional {
            return Err(Error::InvalidInput(format!(
                "edge {eid} cannot be traversed in reverse"
            )));
        }
        width = width.min(e.width);
        let mut pts = e.centerline.clone();
        if !fwd {
            pts.reverse();
        }
        oriented.push(pts);
    }
    for w in oriented.windows(2) {
        let end = *w[0].last().unwrap();
        let start = w[1][0];
        if end.dist(start) > 1e-6 {
            return Err(Error::InvalidInput(
                "consecutive route edges do not share a node".into(),
            ));
        }
    }

    let mut pts: Vec<Vec2> = oriented[0].clone();
    let mut events: Vec<RouteEvent> = Vec::new();
    for (j, next) in oriented[1..].iter().enumerate() {
        let (eid, fwd) = legs[j];
        let edge = &map.edges[eid];
        let node = if fwd { edge.to } else { edge.from };
        let degree = map
            .edges
            .iter()
            .filter(|d| d.from == node || d.to == node)
            .count();
        let corner = *pts.last().unwrap();
        let u = (corner - pts[pts.len() - 2]).normalized();
        let w = (next[1] - next[0]).normalized();
        let delta = crate::world::wrap_angle(w.angle() - u.angle());
        let event_s;
        if delta.abs() < FILLET_MIN_ANGLE {
            event_s = path_len(&pts);
            pts.extend_from_slice(&next[1..]);
        } else {
            let trim = FILLET_RADIUS * (delta.abs() / 2.0).tan();
            pts = trim_tail(&pts, trim);
            // The junction sits at the arc midpoint.
            event_s = path_len(&pts) + FILLET_RADIUS * delta.abs() / 2.0;
            let t1 = *pts.last().unwrap();
            let side = delta.signum();
            let center = t1 + u.perp() * (FILLET_RADIUS * side);
            let start_ray = t1 - center;
            let n = ((FILLET_RADIUS * delta.abs()) / ARC_STEP).ceil().max(2.0) as usize;
            for i in 1..=n {
                pts.push(center + start_ray.rotated(delta * i as f64 / n as f64));
            }
            let tail = trim_head(next, trim);
            // The arc exit coincides with the trimmed head start.
            pts.extend_from_slice(&tail[1..]);
        }
        if degree >= 3 {
            let dir = if delta.abs() <= TURN_THRESHOLD {
                0.0
            } else {
                delta.signum()
            };
            events.push(RouteEvent {
                s: event_s,
                dir,
                angle: delta,
                node,
            });
        }
    }
    Ok(Route {
        path: Polyline::new(pts),
        width,
        events,
    })
}

/// Total length of a point chain [m].
fn path_len(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Drops the final `d` metres, ending exactly at the cut point.
fn trim_tail(pts: &[Vec2], d: f64) -> Vec<Vec2> {
    let pl = Polyline::new(pts.iter().cloned());
    let keep = (pl.len() - d).max(ARC_STEP);
    let cut = pl.point_at(keep);
    let mut out = Vec::new();
    let mut acc = 0.0;
    out.push(pts[0]);
    for w in pts.windows(2) {
        let step = w[0].dist(w[1]);
        if acc + step >= keep - 1e-9 {
            break;
        }
        acc += step;
        out.push(w[1]);
    }
    if out.last().unwrap().dist(cut) > 1e-9 {
        out.push(cut);
    }
    out
}

/// Drops the first `d` metres, starting exactly at the cut point.
fn trim_head(pts: &[Vec2], d: f64) -> Vec<Vec2> {
    let mut rev: Vec<Vec2> = pts.to_vec();
    rev.reverse();
    let mut out = trim_tail(&rev, d);
    out.reverse();
    out
}

/// Shortest path between two nodes, as a stitched route.
pub fn plan_route(map: &MineMap, from: usize, to: usize) -> Result<Route> {
    if from >= map.nodes.len() || to >= map.nodes.len() {
        return Err(Error::InvalidInput(format!(
            "route endpoints {from}->{to} outside node range"
        )));
    }
    if from == to {
        return Err(Error::InvalidInput("route endpoints coincide".into()));
    }
    let edge_len = |eid: usize| -> f64 {
        map.edges[eid]
            .centerline
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .sum()
    };
    // Dijkstra over nodes; `prev` remembers the edge traversal used.
    let n = map.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<(usize, bool)>> = vec![None; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Reverse((0, from)));
    while let Some(Reverse((key, node))) = heap.pop() {
        if (key as f64) / 1000.0 > dist[node] + 1e-9 {
            continue;
        }
        if node == to {
            break;
        }
        for e in &map.edges {
            let hop = if e.from == node {
                Some((e.to, true))
            } else if e.to == node && e.bidirectional {
                Some((e.from, false))
            } else {
                None
            };
            let Some((next, fwd)) = hop else { continue };
            let cand = dist[node] + edge_len(e.id);
            if cand + 1e-9 < dist[next] {
                dist[next] = cand;
                prev[next] = Some((e.id, fwd));
                heap.push(Reverse(((cand * 1000.0) as u64, next)));
            }
        }
    }
    if dist[to].is_infinite() {
        return Err(Error::InvalidInput(format!("no path from {from} to {to}")));
    }
    let mut legs = Vec::new();
    let mut node = to;
    while node != from {
        let (eid, fwd) = prev[node].expect("path reconstruction");
        legs.push((eid, fwd));
        let e = &map.edges[eid];
        node = if fwd { e.from } else { e.to };
    }
    legs.reverse();
    route_from_edges(map, &legs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::build_test_maps;

    #[test]
    fn single_edge_route_matches_centerline() {
        let (loop_map, _) = build_test_maps().unwrap();
        let route = route_from_edges(&loop_map, &[(0, true)]).unwrap();
        let direct: f64 = loop_map.edges[0]
            .centerline
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .sum();
        assert!((route.len() - direct).abs() < 1e-9);
        assert!((route.width - 12.0).abs() < 1e-12);
    }

    #[test]
    fn lap_route_chains_both_loop_edges() {
        let (loop_map, _) = build_test_maps().unwrap();
        let lap = route_from_edges(&loop_map, &[(0, true), (1, true)]).unwrap();
        assert!(lap.len() >= 1500.0, "lap {}", lap.len());
        // Two laps double the length (continuation across the seam works).
        let two = route_from_edges(&loop_map, &[(0, true), (1, true), (0, true), (1, true)])
            .unwrap();
        assert!((two.len() - 2.0 * lap.len()).abs() < 2.0, "two laps {}", two.len());
    }

    #[test]
    fn fillet_caps_corner_curvature() {
        let (_, network) = build_test_maps().unwrap();
        // L1 -> I1 -> I4 turns 71.6 degrees at I1.
        let route = route_from_edges(&network, &[(0, true), (4, true)]).unwrap();
        let k = route.max_abs_curvature(0.0, route.len());
        assert!(
            k < 1.0 / (FILLET_RADIUS * 0.8),
            "curvature {k} too sharp for fillet radius"
        );
        assert!(k > 1.0 / (FILLET_RADIUS * 2.0), "no corner arc found: {k}");
        // The route is shorter than the raw leg sum (corner cut).
        let raw: f64 = [0usize, 4]
            .iter()
            .map(|&e| {
                network.edges[e]
                    .centerline
                    .windows(2)
                    .map(|w| w[0].dist(w[1]))
                    .sum::<f64>()
            })
            .sum();
        assert!(route.len() < raw - 1.0);
        assert!(route.len() > raw - 40.0);
    }

    #[test]
    fn shortest_path_picks_the_direct_road() {
        let (_, network) = build_test_maps().unwrap();
        // L1 (node 0) to D1 (node 4): straight along the spine,
        // 800 + 1200 + 1000 + 900 minus corner cuts.
        let route = plan_route(&network, 0, 4).unwrap();
        assert!((route.len() - 3900.0).abs() < 5.0, "len {}", route.len());
        // L2 (node 8) to D2 (node 9): through I6 only.
        let route = plan_route(&network, 8, 9).unwrap();
        assert!(route.len() < 1800.0, "len {}", route.len());
    }

    #[test]
    fn routes_record_junction_events() {
        let (loop_map, network) = build_test_maps().unwrap();
        // The spine passes three junctions straight through.
        let spine = plan_route(&network, 0, 4).unwrap();
        assert_eq!(spine.events.len(), 3);
        assert!(spine.events.iter().all(|e| e.dir == 0.0));
        assert!(spine.events.windows(2).all(|w| w[0].s < w[1].s));

        // L2 -> D2 turns right at its single junction.
        let hook = plan_route(&network, 8, 9).unwrap();
        assert_eq!(hook.events.len(), 1);
        assert_eq!(hook.events[0].dir, -1.0);
        assert_eq!(hook.events[0].node, 7);

        // The loop has no junctions at all.
        let lap = route_from_edges(&loop_map, &[(0, true), (1, true)]).unwrap();
        assert!(lap.events.is_empty());
    }

    #[test]
    fn nav_signal_ramps_toward_junction_and_end() {
        let (_, network) = build_test_maps().unwrap();
        let hook = plan_route(&network, 8, 9).unwrap();
        let ev = hook.events[0];
        let horizon = 120.0;
        let (d_far, p_far, e_far) = hook.nav_at(ev.s - 200.0, horizon);
        assert_eq!((d_far, p_far, e_far), (0.0, 0.0, 0.0));
        let (d_near, p_near, _) = hook.nav_at(ev.s - 60.0, horizon);
        assert_eq!(d_near, -1.0);
        assert!((p_near - 0.5).abs() < 1e-9);
        let (_, _, e_end) = hook.nav_at(hook.len() - 30.0, horizon);
        assert!((e_end - 0.75).abs() < 1e-9);
        // Once the junction is behind, the signal clears.
        let (d_past, p_past, _) = hook.nav_at(ev.s + 10.0, horizon);
        assert_eq!((d_past, p_past), (0.0, 0.0));
    }

    #[test]
    fn disconnected_or_bad_requests_fail() {
        let (loop_map, _) = build_test_maps().unwrap();
        assert!(plan_route(&loop_map, 0, 0).is_err());
        assert!(plan_route(&loop_map, 0, 99).is_err());
        assert!(route_from_edges(&loop_map, &[]).is_err());
        // Edges 0 and 0 reversed do not share the required node order.
        let err = route_from_edges(&loop_map, &[(0, true), (0, true)]);
        assert!(err.is_err());
    }
}
