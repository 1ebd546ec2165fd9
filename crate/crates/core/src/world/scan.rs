//! 2D range scanner: evenly spaced beams over a forward field of view,
//! measuring wall polylines and traffic footprints.

use serde::{Deserialize, Serialize};

use super::geom::{ray_segment, OrientedRect, Vec2};
use super::map::PreparedMap;
use super::truck::TruckState;
use crate::{Error, Result};

/// Scanner geometry and the range gate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub beams: usize,
    /// Field of view [rad], centered on the heading.
    pub fov: f64,
    /// Returns closer than this clamp up to it [m].
    pub min_range: f64,
    /// Returns beyond this are invalid [m].
    pub max_range: f64,
    /// Range quantization grid [m].
    pub cell: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            beams: 108,
            fov: 270.0_f64.to_radians(),
            min_range: 4.0,
            max_range: 120.0,
            cell: 0.2,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beams < 8 {
            return Err(Error::Config(format!(
                "scanner needs at least 8 beams, got {}",
                self.beams
            )));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * std::f64::consts::PI + 1e-12) {
            return Err(Error::Config(format!(
                "scanner fov must lie in (0, 2pi], got {}",
                self.fov
            )));
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range && self.cell > 0.0) {
            return Err(Error::Config("scanner range gate is inconsistent".into()));
        }
        Ok(())
    }

    /// Angular spacing between adjacent beams [rad].
    pub fn beam_spacing(&self) -> f64 {
        self.fov / self.beams as f64
    }

    /// Beam direction relative to the heading; beams are centered in their
    /// angular cells so the spacing is exactly fov / beams.
    pub fn beam_angle(&self, i: usize) -> f64 {
        -self.fov / 2.0 + (i as f64 + 0.5) * self.beam_spacing()
    }
}

/// One scan. Invalid beams (no return inside the gate) carry `max_range` and
/// a cleared validity flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScan {
    pub ranges: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RangeScan {
    /// Checks the per-beam contract: valid ranges inside [min, max] on the
    /// quantization grid, invalid beams pinned to max range.
    pub fn check(&self, cfg: &ScanConfig) -> Result<()> {
        if self.ranges.len() != cfg.beams || self.valid.len() != cfg.beams {
            return Err(Error::Dimension {
                what: "scan beam count".into(),
                expected: cfg.beams,
                got: self.ranges.len(),
            });
        }
        for (i, (&r, &v)) in self.ranges.iter().zip(&self.valid).enumerate() {
            if v {
                if !(cfg.min_range..=cfg.max_range).contains(&r) {
                    return Err(Error::InvalidInput(format!(
                        "beam {i}: valid range {r} outside gate"
                    )));
                }
                let cells = r / cfg.cell;
                if (cells - cells.round()).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "beam {i}: range {r} off the {} m grid",
                        cfg.cell
                    )));
                }
            } else if (r - cfg.max_range).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "beam {i}: invalid beam must carry max range, has {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Floor-quantizes a range onto the grid. Multiplying by the inverse cell
/// keeps exact multiples exact (0.2 is not a binary fraction); the epsilon
/// absorbs one ulp of dust before the floor.
fn quantize(r: f64, cell: f64) -> f64 {
    ((r / cell) + 1e-9).floor() * cell
}

/// Casts all beams from the truck position against walls and participant
/// footprints. No-return beams come back invalid at max range; returns
/// closer than the minimum clamp up to it (the sensor cannot resolve them).
pub fn cast_scan(
    state: &TruckState,
    map: &PreparedMap,
    participants: &[OrientedRect],
    cfg: &ScanConfig,
) -> Result<RangeScan> {
    cfg.validate()?;
    let mut ranges = Vec::with_capacity(cfg.beams);
    let mut valid = Vec::with_capacity(cfg.beams);
    // Participant edges are few; test them per beam without the grid.
    let dyn_segs: Vec<(Vec2, Vec2)> = participants
        .iter()
        .flat_map(|r| {
            let c = r.corners();
            [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
        })
        .collect();
    for i in 0..cfg.beams {
        let dir = Vec2::from_angle(state.heading + cfg.beam_angle(i));
        let mut best = map
            .walls_grid
            .raycast(state.pos, dir, cfg.max_range)
            .unwrap_or(f64::INFINITY);
        for &(a, b) in &dyn_segs {
            if let Some(t) = ray_segment(state.pos, dir, a, b) {
                if t < best {
                    best = t;
                }
            }
        }
        if best > cfg.max_range {
            ranges.push(cfg.max_range);
            valid.push(false);
        } else {
            let r = quantize(best.max(cfg.min_range), cfg.cell);
            ranges.push(r.clamp(cfg.min_range, cfg.max_range));
            valid.push(true);
        }
    }
    Ok(RangeScan { ranges, valid })
}
