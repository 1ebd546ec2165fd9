//! Built-in maps: a closed haul loop with a chicane and a multi-junction
//! road network, plus a straight corridor used as a test fixture.

use super::geom::Vec2;
use super::map::{MapEdge, MapNode, MineMap, PreparedMap, Site, SiteKind};
use crate::Result;

/// Default drivable width [m].
pub const ROAD_WIDTH: f64 = 12.0;
/// Centerline sample spacing [m].
const SAMPLE_STEP: f64 = 2.0;

/// Emits straights and arcs as a dense point list.
struct Turtle {
    pos: Vec2,
    heading: f64,
    pts: Vec<Vec2>,
}

impl Turtle {
    fn new(pos: Vec2, heading: f64) -> Turtle {
        Turtle {
            pos,
            heading,
            pts: vec![pos],
        }
    }

    fn straight(&mut self, len: f64) {
        let n = (len / SAMPLE_STEP).ceil().max(1.0) as usize;
        let dir = Vec2::from_angle(self.heading);
        for i in 1..=n {
            self.pts.push(self.pos + dir * (len * i as f64 / n as f64));
        }
        self.pos = *self.pts.last().unwrap();
    }

    /// Arc through `angle` radians (positive left) with radius `r`.
    fn arc(&mut self, angle: f64, r: f64) {
        let arc_len = angle.abs() * r;
        let n = (arc_len / SAMPLE_STEP).ceil().max(2.0) as usize;
        let side = angle.signum();
        let center = self.pos + Vec2::from_angle(self.heading).perp() * (r * side);
        let start = self.pos - center;
        for i in 1..=n {
            let a = angle * i as f64 / n as f64;
            self.pts.push(center + start.rotated(a));
        }
        self.pos = *self.pts.last().unwrap();
        self.heading += angle;
    }
}

/// Closed haul loop: rounded rectangle with a chicane in the bottom straight.
/// Two sites sit on opposite sides; both edges are bidirectional.
pub fn build_loop_map() -> Result<MineMap> {
    let deg = std::f64::consts::PI / 180.0;
    let corner_r = 45.0;
    let chicane_r = 60.0;
    let chicane_a = 35.0 * deg;
    let mut t = Turtle::new(Vec2::new(0.0, 0.0), 0.0);
    // Bottom straight (left of the chicane), west-to-east.
    t.straight(120.0);
    // Chicane: left, right double, left; net heading and lateral are zero.
    t.arc(chicane_a, chicane_r);
    t.arc(-2.0 * chicane_a, chicane_r);
    t.arc(chicane_a, chicane_r);
    // Remainder of the bottom straight. The chicane consumes
    // 4 r sin(a) of forward distance out of the 470 m between corners.
    let remaining = 470.0 - 120.0 - 4.0 * chicane_r * chicane_a.sin();
    t.straight(remaining);
    t.arc(90.0 * deg, corner_r);
    t.straight(170.0);
    t.arc(90.0 * deg, corner_r);
    t.straight(470.0);
    t.arc(90.0 * deg, corner_r);
    t.straight(170.0);
    t.arc(90.0 * deg, corner_r);

    let mut pts = t.pts;
    // The walk returns to the origin; snap the numerical tail.
    let start = pts[0];
    assert!(pts.last().unwrap().dist(start) < 1e-6, "loop does not close");
    *pts.last_mut().unwrap() = start;

    // Split into two edges at the far side of the rectangle.
    let total: f64 = pts.windows(2).map(|w| w[0].dist(w[1])).sum();
    let mut acc = 0.0;
    let mut split = 0;
    for (i, w) in pts.windows(2).enumerate() {
        acc += w[0].dist(w[1]);
        if acc >= total / 2.0 {
            split = i + 1;
            break;
        }
    }
    let nodes = vec![
        MapNode { id: 0, pos: pts[0] },
        MapNode { id: 1, pos: pts[split] },
    ];
    let edges = vec![
        MapEdge {
            id: 0,
            from: 0,
            to: 1,
            centerline: pts[..=split].to_vec(),
            width: ROAD_WIDTH,
            bidirectional: true,
        },
        MapEdge {
            id: 1,
            from: 1,
            to: 0,
            centerline: pts[split..].to_vec(),
            width: ROAD_WIDTH,
            bidirectional: true,
        },
    ];
    let sites = vec![
        Site {
            id: 0,
            kind: SiteKind::Loading,
            node: 0,
            name: "pit".into(),
        },
        Site {
            id: 1,
            kind: SiteKind::Dumping,
            node: 1,
            name: "crusher".into(),
        },
    ];
    MineMap::assemble("loop", nodes, edges, sites)
}

/// Road network: ten nodes, twelve straight roads, six junctions (two with
/// turns sharper than sixty degrees), two loading and two dumping sites.
pub fn build_network_map() -> Result<MineMap> {
    let coords = [
        (-800.0, 0.0),   // 0: loading L1
        (0.0, 0.0),      // 1: junction
        (1200.0, 0.0),   // 2: junction (five-way)
        (2200.0, 0.0),   // 3: junction
        (3100.0, 0.0),   // 4: dumping D1
        (300.0, 900.0),  // 5: junction
        (1600.0, 1100.0),// 6: junction
        (1100.0, -800.0),// 7: junction
        (400.0, -1050.0),// 8: loading L2
        (1900.0, -1300.0),// 9: dumping D2
    ];
    let nodes: Vec<MapNode> = coords
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| MapNode {
            id,
            pos: Vec2::new(x, y),
        })
        .collect();
    let pairs = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 4),
        (1, 5),
        (5, 6),
        (6, 3),
        (2, 5),
        (2, 6),
        (2, 7),
        (7, 8),
        (7, 9),
    ];
    let edges: Vec<MapEdge> = pairs
        .iter()
        .enumerate()
        .map(|(id, &(a, b))| {
            let pa = nodes[a].pos;
            let pb = nodes[b].pos;
            let len = pa.dist(pb);
            let n = (len / 3.0).ceil() as usize;
            let centerline = (0..=n)
                .map(|i| pa + (pb - pa) * (i as f64 / n as f64))
                .collect();
            MapEdge {
                id,
                from: a,
                to: b,
                centerline,
                width: ROAD_WIDTH,
                bidirectional: true,
            }
        })
        .collect();
    let sites = vec![
        Site {
            id: 0,
            kind: SiteKind::Loading,
            node: 0,
            name: "pit-west".into(),
        },
        Site {
            id: 1,
            kind: SiteKind::Loading,
            node: 8,
            name: "pit-south".into(),
        },
        Site {
            id: 2,
            kind: SiteKind::Dumping,
            node: 4,
            name: "crusher-east".into(),
        },
        Site {
            id: 3,
            kind: SiteKind::Dumping,
            node: 9,
            name: "waste-south".into(),
        },
    ];
    MineMap::assemble("network", nodes, edges, sites)
}

/// Both benchmark maps, validated.
pub fn build_test_maps() -> Result<(MineMap, MineMap)> {
    Ok((build_loop_map()?, build_network_map()?))
}

/// Straight road along +x from the origin, walls at +/- width/2: the
/// standard closed-form fixture for sensing and control tests.
pub fn corridor_map(len: f64, width: f64) -> PreparedMap {
    let n = (len / SAMPLE_STEP).ceil() as usize;
    let centerline: Vec<Vec2> = (0..=n)
        .map(|i| Vec2::new(len * i as f64 / n as f64, 0.0))
        .collect();
    let nodes = vec![
        MapNode {
            id: 0,
            pos: Vec2::new(0.0, 0.0),
        },
        MapNode {
            id: 1,
            pos: Vec2::new(len, 0.0),
        },
    ];
    let edges = vec![MapEdge {
        id: 0,
        from: 0,
        to: 1,
        centerline,
        width,
        bidirectional: true,
    }];
    let sites = vec![
        Site {
            id: 0,
            kind: SiteKind::Loading,
            node: 0,
            name: "west".into(),
        },
        Site {
            id: 1,
            kind: SiteKind::Dumping,
            node: 1,
            name: "east".into(),
        },
    ];
    MineMap::assemble("corridor", nodes, edges, sites)
        .expect("corridor fixture is always valid")
        .prepare()
}
