//! GNSS sampling with dropout and the finite-difference speed estimate fed
//! to the planner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::truck::TruckState;

/// One position fix. When `valid` is false the receiver reports the (0, 0)
/// sentinel and consumers must fall back to their last estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssFix {
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

impl GnssFix {
    pub const INVALID: GnssFix = GnssFix {
        x: 0.0,
        y: 0.0,
        valid: false,
    };
}

/// Samples a fix, dropping it with `failure_prob`. The probability is clamped
/// to [0, 1]; draws come from the caller's seeded stream so runs replay.
pub fn sample_gnss(state: &TruckState, failure_prob: f64, rng: &mut impl Rng) -> GnssFix {
    let p = failure_prob.clamp(0.0, 1.0);
    if p > 0.0 && rng.gen::<f64>() < p {
        GnssFix::INVALID
    } else {
        GnssFix {
            x: state.pos.x,
            y: state.pos.y,
            valid: true,
        }
    }
}

/// Speed from consecutive valid fixes; holds the last estimate across
/// dropouts. This is the only speed signal the learned planner sees.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpeedEstimator {
    last_fix: Option<(f64, f64, f64)>,
    estimate: f64,
}

impl SpeedEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one fix taken at time `t` [s]; returns the current estimate.
    pub fn update(&mut self, fix: &GnssFix, t: f64) -> f64 {
        if fix.valid {
            if let Some((px, py, pt)) = self.last_fix {
                let dt = t - pt;
                if dt > 0.0 {
                    let d = ((fix.x - px).powi(2) + (fix.y - py).powi(2)).sqrt();
                    self.estimate = d / dt;
                }
            }
            self.last_fix = Some((fix.x, fix.y, t));
        }
        self.estimate
    }

    pub fn current(&self) -> f64 {
        self.estimate
    }
}
