//! Planar geometry: vectors, polylines with arc-length parameterization,
//! oriented rectangles and a uniform-grid segment index for raycasts.

use serde::{Deserialize, Serialize};

/// 2D point or direction [m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(a: f64) -> Self {
        Vec2::new(a.cos(), a.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z component of the cross product; positive when `o` is left of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::ZERO
        } else {
            self * (1.0 / n)
        }
    }

    /// Left-hand normal (90 degrees counter-clockwise).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotated(self, a: f64) -> Vec2 {
        let (s, c) = a.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Ray/segment intersection; returns the ray parameter t >= 0 in units of
/// `dir`'s length, or None when parallel or missing the segment.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let ao = a - origin;
    let t = ao.cross(e) / denom;
    let u = ao.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Arc length of the foot point [m].
    pub s: f64,
    /// Signed lateral offset [m]; positive left of the travel direction.
    /// For points past either end this is only the lateral component.
    pub offset: f64,
    /// Straight-line distance to the foot point [m].
    pub dist: f64,
    /// Segment index the foot point lies on.
    pub segment: usize,
}

/// Polyline with cached cumulative arc length.
#[derive(Debug, Clone)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Polyline {
    /// Builds from points, dropping consecutive duplicates closer than 1 mm.
    pub fn new(points: impl IntoIterator<Item = Vec2>) -> Self {
        let mut pts: Vec<Vec2> = Vec::new();
        for p in points {
            if pts.last().map_or(true, |q| q.dist(p) > 1e-3) {
                pts.push(p);
            }
        }
        assert!(pts.len() >= 2, "polyline needs at least two distinct points");
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            acc += w[0].dist(w[1]);
            cum.push(acc);
        }
        Polyline { points: pts, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Point at arc length s, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let (i, frac) = self.locate(s);
        self.points[i] + (self.points[i + 1] - self.points[i]) * frac
    }

    /// Unit tangent at arc length s (direction of increasing s).
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let (i, _) = self.locate(s);
        (self.points[i + 1] - self.points[i]).normalized()
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.len());
        // Binary search over cumulative lengths.
        let i = match self
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg = self.cum[i + 1] - self.cum[i];
        let frac = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        (i, frac)
    }

    /// Menger curvature [1/m] from three points spaced `ds` around s.
    pub fn curvature_at(&self, s: f64, ds: f64) -> f64 {
        let a = self.point_at((s - ds).max(0.0));
        let b = self.point_at(s);
        let c = self.point_at((s + ds).min(self.len()));
        let ab = b - a;
        let bc = c - b;
        let ac = c - a;
        let denom = ab.norm() * bc.norm() * ac.norm();
        if denom < 1e-9 {
            return 0.0;
        }
        2.0 * ab.cross(bc).abs() / denom
    }

    /// Nearest point on the polyline. `hint` restricts the search to segments
    /// within `window` meters of arc length `hint`; pass None for a global
    /// search.
    pub fn project(&self, p: Vec2, hint: Option<f64>, window: f64) -> Projection {
        let (lo, hi) = match hint {
            Some(h) => {
                let lo_s = (h - window).max(0.0);
                let hi_s = (h + window).min(self.len());
                (self.locate(lo_s).0, self.locate(hi_s).0 + 1)
            }
            None => (0, self.segment_count()),
        };
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in lo..hi.min(self.segment_count()) {
            let a = self.points[i];
            let b = self.points[i + 1];
            let e = b - a;
            let len2 = e.dot(e);
            let t = if len2 > 0.0 {
                ((p - a).dot(e) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let foot = a + e * t;
            let d2 = (p - foot).dot(p - foot);
            if d2 < best.0 {
                best = (d2, i, t);
            }
        }
        let (_, i, t) = best;
        let a = self.points[i];
        let b = self.points[i + 1];
        let tangent = (b - a).normalized();
        let foot = a + (b - a) * t;
        let s = self.cum[i] + (self.cum[i + 1] - self.cum[i]) * t;
        Projection {
            s,
            offset: tangent.cross(p - foot),
            dist: (p - foot).norm(),
            segment: i,
        }
    }

    /// Laterally offset copy: positive d shifts left of travel. Valid for
    /// offsets well below the local curvature radius.
    pub fn offset(&self, d: f64) -> Vec<Vec2> {
        let n = self.points.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let dir_in = if i > 0 {
                (self.points[i] - self.points[i - 1]).normalized()
            } else {
                (self.points[1] - self.points[0]).normalized()
            };
            let dir_out = if i + 1 < n {
                (self.points[i + 1] - self.points[i]).normalized()
            } else {
                dir_in
            };
            let normal = (dir_in + dir_out).normalized().perp();
            out.push(self.points[i] + normal * d);
        }
        out
    }
}

/// Oriented rectangle (truck footprints, traffic participants).
#[derive(Debug, Clone, Copy)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading);
        let l = f.perp();
        [
            self.center + f * self.half_len + l * self.half_wid,
            self.center + f * self.half_len - l * self.half_wid,
            self.center - f * self.half_len - l * self.half_wid,
            self.center - f * self.half_len + l * self.half_wid,
        ]
    }

    pub fn aabb(&self) -> (Vec2, Vec2) {
        let cs = self.corners();
        let mut min = cs[0];
        let mut max = cs[0];
        for c in &cs[1..] {
            min.x = min.x.min(c.x);
            min.y = min.y.min(c.y);
            max.x = max.x.max(c.x);
            max.y = max.y.max(c.y);
        }
        (min, max)
    }

    fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotated(-self.heading)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_len && l.y.abs() <= self.half_wid
    }

    /// Segment intersection via slab clipping in the rectangle frame.
    pub fn intersects_segment(&self, a: Vec2, b: Vec2) -> bool {
        let a = self.to_local(a);
        let b = self.to_local(b);
        let d = b - a;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-d.x, a.x + self.half_len),
            (d.x, self.half_len - a.x),
            (-d.y, a.y + self.half_wid),
            (d.y, self.half_wid - a.y),
        ] {
            if p.abs() < 1e-12 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    /// Separating-axis test against another oriented rectangle.
    pub fn intersects_rect(&self, other: &OrientedRect) -> bool {
        let axes = [
            Vec2::from_angle(self.heading),
            Vec2::from_angle(self.heading).perp(),
            Vec2::from_angle(other.heading),
            Vec2::from_angle(other.heading).perp(),
        ];
        let ca = self.corners();
        let cb = other.corners();
        for axis in axes {
            let pa: Vec<f64> = ca.iter().map(|c| axis.dot(*c)).collect();
            let pb: Vec<f64> = cb.iter().map(|c| axis.dot(*c)).collect();
            let (amin, amax) = (
                pa.iter().cloned().fold(f64::INFINITY, f64::min),
                pa.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            let (bmin, bmax) = (
                pb.iter().cloned().fold(f64::INFINITY, f64::min),
                pb.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }
}

/// Uniform-grid index over line segments for raycasts and area queries.
#[derive(Debug, Clone)]
pub struct SegmentGrid {
    segments: Vec<(Vec2, Vec2)>,
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentGrid {
    /// Builds the index with `margin` meters of padding around the segment
    /// bounding box so queries from anywhere on the map stay in range.
    pub fn new(segments: Vec<(Vec2, Vec2)>, cell: f64, margin: f64) -> Self {
        assert!(cell > 0.0);
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (a, b) in &segments {
            for p in [a, b] {
                min.x = min.x.min(p.x);
                min.y = min.y.min(p.y);
                max.x = max.x.max(p.x);
                max.y = max.y.max(p.y);
            }
        }
        if segments.is_empty() {
            min = Vec2::ZERO;
            max = Vec2::new(1.0, 1.0);
        }
        let origin = Vec2::new(min.x - margin, min.y - margin);
        let nx = (((max.x + margin - origin.x) / cell).ceil() as usize).max(1);
        let ny = (((max.y + margin - origin.y) / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, (a, b)) in segments.iter().enumerate() {
            let lo_x = ((a.x.min(b.x) - origin.x) / cell).floor() as isize;
            let hi_x = ((a.x.max(b.x) - origin.x) / cell).floor() as isize;
            let lo_y = ((a.y.min(b.y) - origin.y) / cell).floor() as isize;
            let hi_y = ((a.y.max(b.y) - origin.y) / cell).floor() as isize;
            for cy in lo_y.max(0)..=hi_y.min(ny as isize - 1) {
                for cx in lo_x.max(0)..=hi_x.min(nx as isize - 1) {
                    cells[cy as usize * nx + cx as usize].push(i as u32);
                }
            }
        }
        SegmentGrid {
            segments,
            origin,
            cell,
            nx,
            ny,
            cells,
        }
    }

    pub fn segments(&self) -> &[(Vec2, Vec2)] {
        &self.segments
    }

    /// Nearest hit distance along a unit-direction ray, up to `max_range`.
    pub fn raycast(&self, origin: Vec2, dir: Vec2, max_range: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        let mut cx = ((origin.x - self.origin.x) / self.cell).floor() as isize;
        let mut cy = ((origin.y - self.origin.y) / self.cell).floor() as isize;
        let step_x: isize = if dir.x > 0.0 { 1 } else { -1 };
        let step_y: isize = if dir.y > 0.0 { 1 } else { -1 };
        // Amanatides-Woo traversal; t measured in meters because dir is unit.
        let next_boundary =
            |c: isize, step: isize, o: f64| o + ((c + (step > 0) as isize) as f64) * self.cell;
        let mut t_max_x = if dir.x.abs() < 1e-12 {
            f64::INFINITY
        } else {
            (next_boundary(cx, step_x, self.origin.x) - origin.x) / dir.x
        };
        let mut t_max_y = if dir.y.abs() < 1e-12 {
            f64::INFINITY
        } else {
            (next_boundary(cy, step_y, self.origin.y) - origin.y) / dir.y
        };
        let t_delta_x = if dir.x.abs() < 1e-12 {
            f64::INFINITY
        } else {
            self.cell / dir.x.abs()
        };
        let t_delta_y = if dir.y.abs() < 1e-12 {
            f64::INFINITY
        } else {
            self.cell / dir.y.abs()
        };
        let mut t_entry = 0.0f64;
        loop {
            if cx >= 0 && cy >= 0 && (cx as usize) < self.nx && (cy as usize) < self.ny {
                for &i in &self.cells[cy as usize * self.nx + cx as usize] {
                    let (a, b) = self.segments[i as usize];
                    if let Some(t) = ray_segment(origin, dir, a, b) {
                        if t < best {
                            best = t;
                        }
                    }
                }
            }
            if best <= t_entry || t_entry > max_range {
                break;
            }
            if t_max_x < t_max_y {
                t_entry = t_max_x;
                t_max_x += t_delta_x;
                cx += step_x;
            } else {
                t_entry = t_max_y;
                t_max_y += t_delta_y;
                cy += step_y;
            }
            let outside = cx < 0 || cy < 0 || cx as usize >= self.nx || cy as usize >= self.ny;
            if outside && t_entry > 0.0 {
                break;
            }
        }
        if best <= max_range {
            Some(best)
        } else {
            None
        }
    }

    /// Indices of segments whose cells overlap the axis-aligned box.
    pub fn query_aabb(&self, min: Vec2, max: Vec2) -> Vec<usize> {
        let lo_x = (((min.x - self.origin.x) / self.cell).floor() as isize).max(0);
        let hi_x =
            (((max.x - self.origin.x) / self.cell).floor() as isize).min(self.nx as isize - 1);
        let lo_y = (((min.y - self.origin.y) / self.cell).floor() as isize).max(0);
        let hi_y =
            (((max.y - self.origin.y) / self.cell).floor() as isize).min(self.ny as isize - 1);
        let mut out = Vec::new();
        for cy in lo_y..=hi_y {
            for cx in lo_x..=hi_x {
                out.extend(
                    self.cells[cy as usize * self.nx + cx as usize]
                        .iter()
                        .map(|&i| i as usize),
                );
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}
