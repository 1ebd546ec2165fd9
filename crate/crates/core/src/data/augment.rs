//! Training-set augmentation: range scaling, yaw rotation by whole beams
//! with a decaying steering correction, and position-fix dropout.

use rand::Rng;

use crate::config::AugConfig;
use crate::data::labels::TrainingSample;
use crate::world::{GnssFix, RangeScan, ScanConfig};
use crate::Real;

/// Scales all valid ranges by `c`, re-quantizing onto the sensor grid, and
/// divides the steering labels by `c`: scaling the world by `c` scales every
/// curvature, and with it the steering that tracks it, by `1/c`.
pub(crate) fn scale_scan(
    scan: &mut RangeScan,
    steering: &mut [Real],
    c: f64,
    cfg: &ScanConfig,
) {
    for (r, &v) in scan.ranges.iter_mut().zip(&scan.valid) {
        if v {
            let scaled = ((*r * c / cfg.cell) + 1e-9).floor() * cfg.cell;
            *r = scaled.clamp(cfg.min_range, cfg.max_range);
        }
    }
    for y in steering {
        *y = (*y / c).clamp(-1.0, 1.0);
    }
}

/// Rotates the scan left by `shift` whole beams (the content moves toward
/// lower indices when the truck yaws left) and vacates the uncovered beams.
/// Returns the yaw angle actually applied [rad].
pub(crate) fn yaw_shift(scan: &mut RangeScan, shift: i64, cfg: &ScanConfig) -> f64 {
    let n = scan.ranges.len() as i64;
    let old_r = scan.ranges.clone();
    let old_v = scan.valid.clone();
    for i in 0..n {
        let src = i + shift;
        if (0..n).contains(&src) {
            scan.ranges[i as usize] = old_r[src as usize];
            scan.valid[i as usize] = old_v[src as usize];
        } else {
            scan.ranges[i as usize] = cfg.max_range;
            scan.valid[i as usize] = false;
        }
    }
    shift as f64 * cfg.beam_spacing()
}

/// Adds the yaw steering correction: full `-k_yaw * theta` at the current
/// frame, decaying linearly to zero at the far end of the horizon.
pub(crate) fn yaw_correct(steering: &mut [Real], theta: f64, k_yaw: f64) {
    let k = steering.len();
    for (i, y) in steering.iter_mut().enumerate() {
        let decay = if k > 1 {
            (k - 1 - i) as f64 / (k - 1) as f64
        } else {
            1.0
        };
        *y = (*y - k_yaw * theta * decay).clamp(-1.0, 1.0);
    }
}

/// One augmented copy of `sample`. Draws, in order: a range-scale
/// coefficient, a yaw angle, and a dropout coin, so the stream of random
/// numbers per copy is fixed.
pub fn augment(
    sample: &TrainingSample,
    scan_cfg: &ScanConfig,
    aug: &AugConfig,
    rng: &mut impl Rng,
) -> TrainingSample {
    let mut out = sample.clone();
    let k = out.labels.len() / crate::loss::COMMAND_COUNT;
    let steering = &mut out.labels[..k];

    let c = rng.gen_range(1.0 - aug.scale..=1.0 + aug.scale);
    scale_scan(&mut out.obs.scan, steering, c, scan_cfg);

    let theta_drawn = rng.gen_range(-aug.yaw_deg..=aug.yaw_deg).to_radians();
    let shift = (theta_drawn / scan_cfg.beam_spacing()).round() as i64;
    let theta = yaw_shift(&mut out.obs.scan, shift, scan_cfg);
    yaw_correct(&mut out.labels[..k], theta, aug.k_yaw);

    if rng.gen::<f64>() < aug.gnss_drop {
        out.obs.gnss = GnssFix::INVALID;
    }
    out
}
