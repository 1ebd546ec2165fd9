//! Lookahead label construction: each frame's targets are the expert's
//! commands at fixed distances further along the route, interpolated in
//! arc length.

use serde::{Deserialize, Serialize};

use crate::data::record::{DemoEpisode, DemoFrame};
use crate::loss::COMMAND_COUNT;
use crate::model::Observation;
use crate::{Error, Real, Result};

/// One training frame: what the planner saw plus its regression targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSample {
    pub obs: Observation,
    /// Lookahead command targets, channel-major to match the planner head:
    /// entry `t * K + k` is the channel-`t` command `k * spacing` metres
    /// ahead, channels ordered str, acc, dec_e, dec_m.
    pub labels: Vec<Real>,
    /// Ground-truth speed target for the auxiliary head [m/s].
    pub speed_true: f64,
}

/// Stretch of consecutive frames with no index gap and strictly increasing
/// odometer. Stalled duplicates (odometer advance below resolution) are
/// dropped rather than treated as breaks.
fn segments(frames: &[DemoFrame]) -> Vec<Vec<&DemoFrame>> {
    let mut out: Vec<Vec<&DemoFrame>> = Vec::new();
    let mut cur: Vec<&DemoFrame> = Vec::new();
    // Continuity is judged against the last frame seen, absorbed or not, so
    // a stall followed by normal frames does not read as an index gap.
    let mut last_idx: Option<u64> = None;
    for f in frames {
        let contiguous = last_idx.is_some_and(|i| f.idx == i + 1);
        last_idx = Some(f.idx);
        if !cur.is_empty() && !contiguous {
            out.push(std::mem::take(&mut cur));
        }
        match cur.last() {
            // Stalled frame: no odometer advance, absorbed into the segment.
            Some(prev) if f.s <= prev.s + 1e-6 => {}
            _ => cur.push(f),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Command channels at odometer position `s`, linearly interpolated between
/// the bracketing frames of `seg`. `lo` is a search hint (last bracket).
fn interp_at(seg: &[&DemoFrame], s: f64, lo: &mut usize) -> Option<[Real; COMMAND_COUNT]> {
    while *lo + 1 < seg.len() && seg[*lo + 1].s < s {
        *lo += 1;
    }
    if *lo + 1 >= seg.len() {
        return None;
    }
    let (a, b) = (seg[*lo], seg[*lo + 1]);
    if s < a.s || s > b.s {
        return None;
    }
    let w = (s - a.s) / (b.s - a.s);
    let ca = a.cmd.channels();
    let cb = b.cmd.channels();
    let mut out = [0.0; COMMAND_COUNT];
    for t in 0..COMMAND_COUNT {
        out[t] = ca[t] + (cb[t] - ca[t]) * w;
    }
    Some(out)
}

/// Builds one sample per frame whose whole lookahead horizon stays inside a
/// contiguous segment; frames whose horizon crosses a gap or the episode end
/// are dropped. The zero-distance label is the frame's own command verbatim.
pub fn build_lookahead_labels(
    episode: &DemoEpisode,
    k: usize,
    spacing_m: f64,
) -> Result<Vec<TrainingSample>> {
    if k < 1 {
        return Err(Error::Config("lookahead count must be at least 1".into()));
    }
    if !(spacing_m > 0.0) {
        return Err(Error::Config(format!(
            "lookahead spacing {spacing_m} must be positive"
        )));
    }
    let mut samples = Vec::new();
    for seg in segments(&episode.frames) {
        for (i, f) in seg.iter().enumerate() {
            let mut labels = vec![0.0; COMMAND_COUNT * k];
            let own = f.cmd.channels();
            for t in 0..COMMAND_COUNT {
                labels[t * k] = own[t];
            }
            let mut lo = i;
            let mut complete = true;
            for step in 1..k {
                match interp_at(&seg, f.s + step as f64 * spacing_m, &mut lo) {
                    Some(cmds) => {
                        for t in 0..COMMAND_COUNT {
                            labels[t * k + step] = cmds[t];
                        }
                    }
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if !complete {
                continue;
            }
            samples.push(TrainingSample {
                obs: Observation {
                    scan: f.scan.clone(),
                    gnss: f.gnss,
                    speed: f.speed_est,
                    lat: f.lat,
                    lon: f.lon,
                },
                labels,
                speed_true: f.speed_true,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LateralHlc, LongitudinalHlc};
    use crate::world::{ControlCommand, GnssFix, RangeScan};

    /// Frames along a synthetic odometer with channel values produced by
    /// `cmd_of(s)`.
    fn synthetic(idx_s: &[(u64, f64)], cmd_of: impl Fn(f64) -> ControlCommand) -> DemoEpisode {
        DemoEpisode {
            name: "synthetic".into(),
            frames: idx_s
                .iter()
                .map(|&(idx, s)| DemoFrame {
                    idx,
                    t: idx as f64 * 0.1,
                    s,
                    scan: RangeScan {
                        ranges: vec![5.0, 6.0],
                        valid: vec![true, true],
                    },
                    gnss: GnssFix {
                        x: s,
                        y: 0.0,
                        valid: true,
                    },
                    speed_est: 5.0,
                    speed_true: 5.2,
                    lat: LateralHlc::Straight,
                    lon: LongitudinalHlc::Maintain,
                    cmd: cmd_of(s),
                })
                .collect(),
        }
    }

    fn ramp(s: f64) -> ControlCommand {
        ControlCommand {
            steer: (0.01 * s).clamp(-1.0, 1.0),
            throttle: (0.002 * s).clamp(0.0, 1.0),
            brake_e: 0.0,
            brake_m: 0.0,
        }
    }

    #[test]
    fn single_step_labels_echo_the_frame_command() {
        let frames: Vec<(u64, f64)> = (0..10).map(|i| (i, i as f64 * 0.7)).collect();
        let ep = synthetic(&frames, ramp);
        let samples = build_lookahead_labels(&ep, 1, 1.0).unwrap();
        assert_eq!(samples.len(), 10);
        for (sample, f) in samples.iter().zip(&ep.frames) {
            assert_eq!(sample.labels, f.cmd.channels().to_vec());
            assert_eq!(sample.speed_true, 5.2);
        }
    }

    #[test]
    fn linear_commands_interpolate_exactly() {
        // Irregular spacing, commands linear in s: interpolation is exact.
        let frames: Vec<(u64, f64)> = (0..40)
            .map(|i| (i, 0.61 * i as f64 + 0.13 * (i % 3) as f64))
            .collect();
        let ep = synthetic(&frames, ramp);
        let k = 4;
        let samples = build_lookahead_labels(&ep, k, 1.0).unwrap();
        assert!(!samples.is_empty());
        for sample in &samples {
            let s0 = sample.obs.gnss.x; // synthetic() stores s in x
            for step in 0..k {
                let s = s0 + step as f64;
                let want = ramp(s);
                assert!((sample.labels[step] - want.steer).abs() < 1e-12);
                assert!((sample.labels[k + step] - want.throttle).abs() < 1e-12);
                assert_eq!(sample.labels[2 * k + step], 0.0);
                assert_eq!(sample.labels[3 * k + step], 0.0);
            }
        }
    }

    #[test]
    fn horizons_never_cross_gaps_or_the_episode_end() {
        // 0.5 m steps; a filtered-out frame leaves an index gap after s = 5.
        let mut frames: Vec<(u64, f64)> = Vec::new();
        for i in 0..11 {
            frames.push((i, i as f64 * 0.5)); // s = 0..5
        }
        for i in 12..23 {
            frames.push((i, i as f64 * 0.5)); // s = 6..11
        }
        let ep = synthetic(&frames, ramp);
        let samples = build_lookahead_labels(&ep, 3, 1.0).unwrap();
        // First segment: s + 2 must stay <= 5 -> frames with s <= 3.
        // Second segment: s + 2 <= 11 -> frames with s <= 9.
        let starts: Vec<f64> = samples.iter().map(|x| x.obs.gnss.x).collect();
        assert_eq!(samples.len(), 7 + 7, "{starts:?}");
        assert!(starts.iter().all(|&s| s <= 3.0 || (6.0..=9.0).contains(&s)));
    }

    #[test]
    fn stalled_frames_are_absorbed_not_split() {
        // Consecutive indices but a stretch of zero odometer advance, as a
        // truck waiting at an intersection produces.
        let frames: Vec<(u64, f64)> = vec![
            (0, 0.0),
            (1, 1.0),
            (2, 2.0),
            (3, 2.0),
            (4, 2.0),
            (5, 3.0),
            (6, 4.0),
            (7, 5.0),
        ];
        let ep = synthetic(&frames, ramp);
        let samples = build_lookahead_labels(&ep, 3, 1.0).unwrap();
        // Stall removal leaves odometer 0,1,2,3,4,5; horizon s+2 <= 5 keeps
        // the first four positions.
        let starts: Vec<f64> = samples.iter().map(|x| x.obs.gnss.x).collect();
        assert_eq!(starts, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn smooth_commands_interpolate_within_tolerance() {
        // Frames every ~0.56 m as a 20 km/h demo produces; steering follows
        // a smooth curve. Compare against the exact curve at the lookahead
        // points.
        let wave = |s: f64| ControlCommand {
            steer: 0.3 * (s / 20.0).sin(),
            throttle: 0.25 + 0.1 * (s / 31.0).cos(),
            brake_e: 0.0,
            brake_m: 0.0,
        };
        let frames: Vec<(u64, f64)> = (0..400).map(|i| (i, i as f64 * 0.5556)).collect();
        let ep = synthetic(&frames, wave);
        let k = 5;
        let samples = build_lookahead_labels(&ep, k, 1.0).unwrap();
        assert!(samples.len() > 300);
        let mut worst: f64 = 0.0;
        for sample in &samples {
            let s0 = sample.obs.gnss.x;
            for step in 0..k {
                let want = wave(s0 + step as f64);
                worst = worst.max((sample.labels[step] - want.steer).abs());
                worst = worst.max((sample.labels[k + step] - want.throttle).abs());
            }
        }
        assert!(worst < 0.01, "interpolation error {worst}");
    }

    #[test]
    fn invalid_horizon_parameters_are_rejected() {
        let ep = synthetic(&[(0, 0.0), (1, 1.0)], ramp);
        assert!(build_lookahead_labels(&ep, 0, 1.0).is_err());
        assert!(build_lookahead_labels(&ep, 3, 0.0).is_err());
    }
}
