//! Road-network maps: nodes, centerline edges, derived intersections with
//! turn annotations, wall polylines and loading/dumping sites.

use serde::{Deserialize, Serialize};

use super::geom::{Polyline, SegmentGrid, Vec2};
use crate::{Error, Result};

/// Graph node; `pos` must equal the endpoints of incident edge centerlines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapNode {
    pub id: usize,
    pub pos: Vec2,
}

/// Directed storage of a road segment; `bidirectional` edges may be traversed
/// both ways. The centerline runs from node `from` to node `to`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapEdge {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub centerline: Vec<Vec2>,
    /// Drivable width [m], walls sit at +/- width/2.
    pub width: f64,
    pub bidirectional: bool,
}

/// Movement classification through an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Straight,
    Left,
    Right,
}

/// One legal (in-edge, out-edge) traversal at an intersection. `in_forward`
/// is true when the approach travels its edge from -> to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnAnnotation {
    pub in_edge: usize,
    pub in_forward: bool,
    pub out_edge: usize,
    pub out_forward: bool,
    pub kind: TurnKind,
    /// Absolute heading change [deg].
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Intersection {
    pub id: usize,
    pub node: usize,
    pub edges: Vec<usize>,
    pub turns: Vec<TurnAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Loading,
    Dumping,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Site {
    pub id: usize,
    pub kind: SiteKind,
    pub node: usize,
    pub name: String,
}

/// A mine road network with everything the simulation needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MineMap {
    pub name: String,
    pub nodes: Vec<MapNode>,
    pub edges: Vec<MapEdge>,
    pub intersections: Vec<Intersection>,
    /// Wall polylines; open roads get offset pairs, junction mouths are
    /// trimmed, dead ends are capped.
    pub walls: Vec<Vec<Vec2>>,
    pub sites: Vec<Site>,
}

/// Turn-kind threshold: heading changes at or below this are "straight".
const STRAIGHT_DEG: f64 = 30.0;
/// Walls withdraw this many road-widths from intersection nodes.
const JUNCTION_CLEARANCE_WIDTHS: f64 = 1.6;
/// Dead-end caps sit this far beyond the terminal node [m].
const CAP_OVERHANG: f64 = 20.0;

impl MineMap {
    /// Builds intersections and walls from nodes/edges/sites, then validates.
    pub fn assemble(
        name: &str,
        nodes: Vec<MapNode>,
        edges: Vec<MapEdge>,
        sites: Vec<Site>,
    ) -> Result<MineMap> {
        let mut map = MineMap {
            name: name.to_string(),
            nodes,
            edges,
            intersections: Vec::new(),
            walls: Vec::new(),
            sites,
        };
        map.intersections = map.derive_intersections()?;
        map.walls = map.build_walls();
        map.validate()?;
        Ok(map)
    }

    fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.from == node || e.to == node)
            .count()
    }

    fn incident(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.from == node || e.to == node)
            .map(|e| e.id)
            .collect()
    }

    /// Travel direction when arriving at `node` via `edge` (unit vector), and
    /// whether that traversal runs the edge forward.
    fn arrival_dir(&self, edge: &MapEdge, node: usize) -> (Vec2, bool) {
        let pts = &edge.centerline;
        if edge.to == node {
            ((pts[pts.len() - 1] - pts[pts.len() - 2]).normalized(), true)
        } else {
            ((pts[0] - pts[1]).normalized(), false)
        }
    }

    /// Travel direction when leaving `node` via `edge`.
    fn departure_dir(&self, edge: &MapEdge, node: usize) -> (Vec2, bool) {
        let pts = &edge.centerline;
        if edge.from == node {
            ((pts[1] - pts[0]).normalized(), true)
        } else {
            ((pts[pts.len() - 2] - pts[pts.len() - 1]).normalized(), false)
        }
    }

    fn derive_intersections(&self) -> Result<Vec<Intersection>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let inc = self.incident(node.id);
            if inc.len() < 3 {
                continue;
            }
            let mut turns = Vec::new();
            for &ei in &inc {
                for &eo in &inc {
                    if ei == eo {
                        continue;
                    }
                    let e_in = &self.edges[ei];
                    let e_out = &self.edges[eo];
                    let (in_dir, in_forward) = self.arrival_dir(e_in, node.id);
                    let (out_dir, out_forward) = self.departure_dir(e_out, node.id);
                    // Arriving backward or leaving backward needs a
                    // bidirectional edge.
                    if (!in_forward && !e_in.bidirectional)
                        || (!out_forward && !e_out.bidirectional)
                    {
                        continue;
                    }
                    let delta = super::geom::wrap_angle(out_dir.angle() - in_dir.angle());
                    let angle_deg = delta.abs().to_degrees();
                    let kind = if angle_deg <= STRAIGHT_DEG {
                        TurnKind::Straight
                    } else if delta > 0.0 {
                        TurnKind::Left
                    } else {
                        TurnKind::Right
                    };
                    turns.push(TurnAnnotation {
                        in_edge: ei,
                        in_forward,
                        out_edge: eo,
                        out_forward,
                        kind,
                        angle_deg,
                    });
                }
            }
            out.push(Intersection {
                id: out.len(),
                node: node.id,
                edges: inc,
                turns,
            });
        }
        Ok(out)
    }

    /// Maximal chains of edges joined through degree-2 nodes; each entry is
    /// (concatenated centerline, width, closed).
    fn chains(&self) -> Vec<(Vec<Vec2>, f64, bool)> {
        let mut used = vec![false; self.edges.len()];
        let mut chains = Vec::new();
        let breaker = |n: usize| self.degree(n) != 2;
        for start in 0..self.edges.len() {
            if used[start] {
                continue;
            }
            // Collect the chain containing `start` as (edge, forward) pairs.
            let mut chain = vec![(start, true)];
            used[start] = true;
            // Extend forward from the `to` end, then backward from `from`.
            for dir in [true, false] {
                loop {
                    let (last_edge, last_fwd) = if dir {
                        *chain.last().unwrap()
                    } else {
                        chain[0]
                    };
                    let e = &self.edges[last_edge];
                    // Chain-forward end node when extending forward, chain-start
                    // node when extending backward.
                    let node = match (dir, last_fwd) {
                        (true, true) | (false, false) => e.to,
                        (true, false) | (false, true) => e.from,
                    };
                    if breaker(node) {
                        break;
                    }
                    let next = self
                        .edges
                        .iter()
                        .find(|n| !used[n.id] && (n.from == node || n.to == node));
                    let Some(next) = next else { break };
                    used[next.id] = true;
                    let fwd = next.from == node;
                    if dir {
                        chain.push((next.id, fwd));
                    } else {
                        chain.insert(0, (next.id, !fwd));
                    }
                }
            }
            // Stitch points.
            let mut pts: Vec<Vec2> = Vec::new();
            for &(eid, fwd) in &chain {
                let mut p = self.edges[eid].centerline.clone();
                if !fwd {
                    p.reverse();
                }
                if pts.is_empty() {
                    pts = p;
                } else {
                    pts.extend_from_slice(&p[1..]);
                }
            }
            let closed = pts.len() > 2 && pts[0].dist(*pts.last().unwrap()) < 1e-6;
            chains.push((pts, self.edges[chain[0].0].width, closed));
        }
        chains
    }

    fn build_walls(&self) -> Vec<Vec<Vec2>> {
        let junction_nodes: Vec<(Vec2, f64)> = self
            .nodes
            .iter()
            .filter(|n| self.degree(n.id) >= 3)
            .map(|n| {
                let w = self
                    .edges
                    .iter()
                    .filter(|e| e.from == n.id || e.to == n.id)
                    .map(|e| e.width)
                    .fold(0.0, f64::max);
                (n.pos, w * JUNCTION_CLEARANCE_WIDTHS)
            })
            .collect();
        let dead_ends: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| self.degree(n.id) == 1)
            .map(|n| n.id)
            .collect();

        let mut walls = Vec::new();
        for (pts, width, closed) in self.chains() {
            let half = width / 2.0;
            for side in [half, -half] {
                let offset = if closed {
                    closed_offset(&pts, side)
                } else {
                    Polyline::new(pts.iter().cloned()).offset(side)
                };
                // Trim near junction mouths, splitting where points drop out.
                let mut piece: Vec<Vec2> = Vec::new();
                for p in offset {
                    let clear = junction_nodes
                        .iter()
                        .all(|(c, r)| p.dist(*c) > *r);
                    if clear {
                        piece.push(p);
                    } else if piece.len() >= 2 {
                        walls.push(std::mem::take(&mut piece));
                    } else {
                        piece.clear();
                    }
                }
                if piece.len() >= 2 {
                    walls.push(piece);
                }
            }
            // Cap chains that terminate at dead-end nodes.
            if !closed {
                for (end_pt, dir_out) in [
                    (pts[0], (pts[0] - pts[1]).normalized()),
                    (
                        *pts.last().unwrap(),
                        (pts[pts.len() - 1] - pts[pts.len() - 2]).normalized(),
                    ),
                ] {
                    let at_dead_end = dead_ends
                        .iter()
                        .any(|&n| self.nodes[n].pos.dist(end_pt) < 1e-6);
                    if at_dead_end {
                        let tip = end_pt + dir_out * CAP_OVERHANG;
                        let side = dir_out.perp() * half;
                        walls.push(vec![end_pt + side, tip + side, tip + side * -1.0, end_pt + side * -1.0]);
                    }
                }
            }
        }
        walls
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i || !n.pos.x.is_finite() || !n.pos.y.is_finite() {
                return Err(Error::InvalidInput(format!("bad node {i}")));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id != i {
                return Err(Error::InvalidInput(format!("edge {i} id mismatch")));
            }
            if e.centerline.len() < 2 {
                return Err(Error::InvalidInput(format!("edge {i} too short")));
            }
            if e.width <= 0.0 {
                return Err(Error::InvalidInput(format!("edge {i} non-positive width")));
            }
            let len: f64 = e
                .centerline
                .windows(2)
                .map(|w| w[0].dist(w[1]))
                .sum();
            if len <= 0.0 {
                return Err(Error::InvalidInput(format!("edge {i} zero length")));
            }
            let f = self.nodes[e.from].pos;
            let t = self.nodes[e.to].pos;
            if e.centerline[0].dist(f) > 1e-6 || e.centerline.last().unwrap().dist(t) > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "edge {i} centerline does not join its nodes"
                )));
            }
        }
        // Walls must stay off every centerline.
        for wall in &self.walls {
            for w in wall.windows(2) {
                for e in &self.edges {
                    for c in e.centerline.windows(2) {
                        if segments_intersect(w[0], w[1], c[0], c[1]) {
                            return Err(Error::InvalidInput(format!(
                                "wall segment ({:.1},{:.1})-({:.1},{:.1}) crosses edge {} centerline",
                                w[0].x, w[0].y, w[1].x, w[1].y, e.id
                            )));
                        }
                    }
                }
            }
        }
        for s in &self.sites {
            if s.node >= self.nodes.len() {
                return Err(Error::InvalidInput(format!("site {} at unknown node", s.id)));
            }
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.centerline.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>())
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<MineMap> {
        let map: MineMap = serde_json::from_str(s)?;
        map.validate()?;
        Ok(map)
    }

    /// Builds the runtime acceleration structures.
    pub fn prepare(self) -> PreparedMap {
        let wall_segments: Vec<(Vec2, Vec2)> = self
            .walls
            .iter()
            .flat_map(|w| w.windows(2).map(|p| (p[0], p[1])).collect::<Vec<_>>())
            .collect();
        let walls_grid = SegmentGrid::new(wall_segments, 20.0, 140.0);
        let centerlines = self
            .edges
            .iter()
            .map(|e| Polyline::new(e.centerline.iter().cloned()))
            .collect();
        PreparedMap {
            map: self,
            walls_grid,
            centerlines,
        }
    }
}

/// Offset of a closed ring (first point == last); normals wrap around.
fn closed_offset(pts: &[Vec2], d: f64) -> Vec<Vec2> {
    let n = pts.len() - 1; // last duplicates first
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let prev = pts[(i + n - 1) % n];
        let next = pts[(i + 1) % n];
        let dir_in = (pts[i] - prev).normalized();
        let dir_out = (next - pts[i]).normalized();
        let normal = (dir_in + dir_out).normalized().perp();
        out.push(pts[i] + normal * d);
    }
    out.push(out[0]);
    out
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).cross(r - p);
    let d1 = o(c, d, a);
    let d2 = o(c, d, b);
    let d3 = o(a, b, c);
    let d4 = o(a, b, d);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0))
}

/// Map plus raycast grid and per-edge polylines, ready for simulation.
#[derive(Debug, Clone)]
pub struct PreparedMap {
    pub map: MineMap,
    pub walls_grid: SegmentGrid,
    pub centerlines: Vec<Polyline>,
}

impl PreparedMap {
    /// Nearest centerline across all edges, by true foot-point distance:
    /// (edge id, arc length, signed offset, tangent direction).
    pub fn nearest_centerline(&self, p: Vec2) -> (usize, f64, f64, Vec2) {
        let mut best = (0usize, 0.0, f64::INFINITY, Vec2::new(1.0, 0.0));
        let mut best_dist = f64::INFINITY;
        for (i, pl) in self.centerlines.iter().enumerate() {
            let proj = pl.project(p, None, 0.0);
            if proj.dist < best_dist {
                best_dist = proj.dist;
                best = (i, proj.s, proj.offset, pl.tangent_at(proj.s));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::maps::{build_test_maps, corridor_map};

    #[test]
    fn json_round_trip_preserves_geometry() {
        let (loop_map, _) = build_test_maps().unwrap();
        let json = loop_map.to_json().unwrap();
        let back = MineMap::from_json(&json).unwrap();
        assert_eq!(back.nodes.len(), loop_map.nodes.len());
        assert_eq!(back.edges.len(), loop_map.edges.len());
        assert!((back.total_length() - loop_map.total_length()).abs() < 1e-9);
        assert_eq!(back.walls.len(), loop_map.walls.len());
    }

    #[test]
    fn corrupted_json_is_rejected() {
        assert!(MineMap::from_json("{\"name\": 3}").is_err());
        // Structurally valid JSON that violates the node/edge contract.
        let (loop_map, _) = build_test_maps().unwrap();
        let mut bad = loop_map.clone();
        bad.edges[0].centerline[0].x += 5.0;
        let json = serde_json::to_string(&bad).unwrap();
        assert!(MineMap::from_json(&json).is_err(), "detached centerline accepted");
    }

    #[test]
    fn corridor_has_parallel_walls_and_no_intersections() {
        let prepared = corridor_map(200.0, 12.0);
        assert!(prepared.map.intersections.is_empty());
        // Two side walls, two caps.
        assert_eq!(prepared.map.walls.len(), 4);
        let (_, _, offset, _) = prepared.nearest_centerline(Vec2::new(100.0, 2.5));
        assert!((offset - 2.5).abs() < 1e-9, "offset = {offset}");
    }

    #[test]
    fn network_turn_annotations_distinguish_left_and_right() {
        let (_, network) = build_test_maps().unwrap();
        let mut lefts = 0;
        let mut rights = 0;
        for inter in &network.intersections {
            for t in &inter.turns {
                match t.kind {
                    TurnKind::Left => lefts += 1,
                    TurnKind::Right => rights += 1,
                    TurnKind::Straight => {}
                }
                assert!(t.angle_deg >= 0.0 && t.angle_deg <= 180.0);
            }
        }
        assert!(lefts > 0 && rights > 0, "lefts {lefts}, rights {rights}");
        // Every traversal has a mirror with the opposite side.
        let inter = &network.intersections[0];
        for t in &inter.turns {
            if t.kind == TurnKind::Straight {
                continue;
            }
            let mirrored = inter.turns.iter().any(|u| {
                u.in_edge == t.out_edge
                    && u.out_edge == t.in_edge
                    && u.kind
                        == match t.kind {
                            TurnKind::Left => TurnKind::Right,
                            TurnKind::Right => TurnKind::Left,
                            TurnKind::Straight => TurnKind::Straight,
                        }
            });
            assert!(mirrored, "no mirror for {t:?}");
        }
    }
}
