//! Planner input encoding: a normalized scan block with a validity mask, a
//! compact measurement vector, and the discrete command pair that selects
//! the network branches.

use serde::{Deserialize, Serialize};

use crate::expert::Route;
use crate::world::{GnssFix, RangeScan, ScanConfig};
use crate::{Error, Real, Result};

/// Position normalization divisor [m].
pub const POS_NORM: f64 = 1000.0;

/// Width of the measurement vector: x, y, fix validity, speed.
pub const MEAS_DIM: usize = 4;

/// Distance ahead of the truck at which an upcoming junction switches the
/// lateral command away from straight [m].
pub const LATERAL_WINDOW: f64 = 40.0;

/// Distance past a junction over which its lateral command persists [m].
pub const LATERAL_TAIL: f64 = 15.0;

/// Dead band between allowed and measured speed that maps to "maintain"
/// [m/s].
pub const SPEED_MARGIN: f64 = 0.3;

/// Lateral high-level command; selects one steering branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralHlc {
    Straight,
    TurnLeft,
    TurnRight,
}

/// Longitudinal high-level command; selects one throttle/brake branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongitudinalHlc {
    Accelerate,
    Maintain,
    Decelerate,
}

impl LateralHlc {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            LateralHlc::Straight => 0,
            LateralHlc::TurnLeft => 1,
            LateralHlc::TurnRight => 2,
        }
    }
}

impl LongitudinalHlc {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            LongitudinalHlc::Accelerate => 0,
            LongitudinalHlc::Maintain => 1,
            LongitudinalHlc::Decelerate => 2,
        }
    }
}

/// Everything the planner sees for one decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub scan: RangeScan,
    pub gnss: GnssFix,
    /// Estimated forward speed [m/s].
    pub speed: f64,
    pub lat: LateralHlc,
    pub lon: LongitudinalHlc,
}

/// Encodes a scan into `2 * beams` values: ranges scaled to [0, 1] with
/// invalid beams pinned to 1.0, followed by a validity mask channel.
pub fn scan_features(scan: &RangeScan, cfg: &ScanConfig) -> Result<Vec<Real>> {
    if scan.ranges.len() != cfg.beams || scan.valid.len() != cfg.beams {
        return Err(Error::Dimension {
            what: "scan beam count".into(),
            expected: cfg.beams,
            got: scan.ranges.len(),
        });
    }
    let mut out = vec![0.0; 2 * cfg.beams];
    for i in 0..cfg.beams {
        if scan.valid[i] {
            out[i] = scan.ranges[i] / cfg.max_range;
            out[cfg.beams + i] = 1.0;
        } else {
            out[i] = 1.0;
        }
    }
    Ok(out)
}

/// Encodes position and speed. Without a fix, the position entries and the
/// validity flag are zeroed while the speed estimate is kept.
pub fn meas_features(fix: &GnssFix, speed: f64, speed_norm: f64) -> [Real; MEAS_DIM] {
    if fix.valid {
        [
            fix.x / POS_NORM,
            fix.y / POS_NORM,
            1.0,
            speed / speed_norm,
        ]
    } else {
        [0.0, 0.0, 0.0, speed / speed_norm]
    }
}

/// Rule-based lateral command: the first junction event within
/// [s - LATERAL_TAIL, s + LATERAL_WINDOW] that bends the route decides;
/// otherwise straight.
pub fn lateral_hlc(route: &Route, s: f64) -> LateralHlc {
    for ev in &route.events {
        if ev.s < s - LATERAL_TAIL {
            continue;
        }
        if ev.s > s + LATERAL_WINDOW {
            break;
        }
        if ev.dir > 0.0 {
            return LateralHlc::TurnLeft;
        }
        if ev.dir < 0.0 {
            return LateralHlc::TurnRight;
        }
    }
    LateralHlc::Straight
}

/// Rule-based longitudinal command from the allowed vs. measured speed.
pub fn longitudinal_hlc(v_allow: f64, speed: f64) -> LongitudinalHlc {
    if v_allow > speed + SPEED_MARGIN {
        LongitudinalHlc::Accelerate
    } else if v_allow < speed - SPEED_MARGIN {
        LongitudinalHlc::Decelerate
    } else {
        LongitudinalHlc::Maintain
    }
}
