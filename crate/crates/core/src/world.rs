//! The simulated mine: road-network maps, truck kinematics, range scanning,
//! GNSS and collision queries.
//!
//! Conventions used throughout: world frame is x east, y north, headings in
//! radians counter-clockwise from +x and wrapped to (-pi, pi]. Positive
//! steering turns left. Distances are meters, speeds m/s.

pub mod collision;
pub mod geom;
pub mod gnss;
pub mod map;
pub mod maps;
pub mod scan;
pub mod truck;

pub use collision::{check_collision, CollisionReport};
pub use geom::{wrap_angle, OrientedRect, Polyline, SegmentGrid, Vec2};
pub use gnss::{sample_gnss, GnssFix, SpeedEstimator};
pub use map::{Intersection, MapEdge, MapNode, MineMap, PreparedMap, Site, SiteKind, TurnKind};
pub use maps::build_test_maps;
pub use scan::{cast_scan, RangeScan, ScanConfig};
pub use truck::{step_dynamics, ControlCommand, TruckParams, TruckState};
