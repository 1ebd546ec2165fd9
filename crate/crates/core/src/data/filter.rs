//! Demonstration bias filtering: empirical confidence bounds on the expert's
//! steering and throttle, and removal of the frames outside them.

use serde::{Deserialize, Serialize};

use crate::data::record::DemoEpisode;
use crate::{Error, Result};

/// Fewest frames the bound fit accepts.
const MIN_FIT_FRAMES: usize = 1000;

/// Empirical command bounds fitted from demonstrations [normalized units].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Lower steering bound.
    pub steer_low: f64,
    /// Upper steering bound.
    pub steer_up: f64,
    /// Upper throttle bound; throttle has no lower bound.
    pub throttle_up: f64,
}

impl FilterThresholds {
    /// Bounds must be finite and ordered. Equal steering bounds are legal:
    /// a constant steering stream collapses both quantiles onto one value.
    pub fn validate(&self) -> Result<()> {
        if !(self.steer_low.is_finite() && self.steer_up.is_finite() && self.throttle_up.is_finite())
        {
            return Err(Error::Config("filter thresholds must be finite".into()));
        }
        if self.steer_low > self.steer_up {
            return Err(Error::Config(format!(
                "steering bounds inverted: {} > {}",
                self.steer_low, self.steer_up
            )));
        }
        Ok(())
    }
}

/// What filtering removed, alongside the bounds it used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub thresholds: FilterThresholds,
    pub total_frames: usize,
    pub removed_frames: usize,
    /// removed_frames / total_frames.
    pub removed_frac: f64,
    /// Frames whose steering fell outside the bounds (may overlap throttle).
    pub removed_steering: usize,
    /// Frames whose throttle reached the upper bound (may overlap steering).
    pub removed_throttle: usize,
}

/// Linear-interpolation quantile of an ascending sample (the convention most
/// statistics packages default to).
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits command bounds at the given two-sided confidence level: steering at
/// the ((1−c)/2, 1−(1−c)/2) quantiles, throttle at the upper quantile only.
pub fn fit_thresholds(episodes: &[DemoEpisode], confidence: f64) -> Result<FilterThresholds> {
    if !(confidence > 0.9 && confidence < 1.0) {
        return Err(Error::Config(format!(
            "filter confidence {confidence} outside (0.9, 1)"
        )));
    }
    let mut steering = Vec::new();
    let mut throttle = Vec::new();
    for ep in episodes {
        for f in &ep.frames {
            steering.push(f.cmd.steer);
            throttle.push(f.cmd.throttle);
        }
    }
    if steering.len() < MIN_FIT_FRAMES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_FRAMES,
            got: steering.len(),
        });
    }
    steering.sort_by(f64::total_cmp);
    throttle.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let th = FilterThresholds {
        steer_low: quantile(&steering, tail),
        steer_up: quantile(&steering, 1.0 - tail),
        throttle_up: quantile(&throttle, 1.0 - tail),
    };
    th.validate()?;
    Ok(th)
}

/// True when the bounds exclude this frame: steering strictly outside its
/// interval, or throttle at or above its upper bound.
fn excluded(steer: f64, throttle: f64, th: &FilterThresholds) -> (bool, bool) {
    let by_steer = steer < th.steer_low || steer > th.steer_up;
    let by_throttle = throttle >= th.throttle_up;
    (by_steer, by_throttle)
}

/// Removes out-of-bounds frames. Original frame indices survive, so later
/// label construction sees the gaps and never interpolates across one.
pub fn filter_bias(
    episodes: Vec<DemoEpisode>,
    th: &FilterThresholds,
) -> Result<(Vec<DemoEpisode>, FilterReport)> {
    th.validate()?;
    let mut total = 0usize;
    let mut removed = 0usize;
    let mut removed_steering = 0usize;
    let mut removed_throttle = 0usize;
    let mut kept = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let mut frames = Vec::with_capacity(ep.frames.len());
        for f in ep.frames {
            total += 1;
            let (by_steer, by_throttle) = excluded(f.cmd.steer, f.cmd.throttle, th);
            if by_steer || by_throttle {
                removed += 1;
                removed_steering += by_steer as usize;
                removed_throttle += by_throttle as usize;
            } else {
                frames.push(f);
            }
        }
        kept.push(DemoEpisode {
            name: ep.name,
            frames,
        });
    }
    let report = FilterReport {
        thresholds: th.clone(),
        total_frames: total,
        removed_frames: removed,
        removed_frac: if total == 0 {
            0.0
        } else {
            removed as f64 / total as f64
        },
        removed_steering,
        removed_throttle,
    };
    Ok((kept, report))
}
