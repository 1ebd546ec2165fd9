//! Haul-truck state and the kinematic bicycle step with the dual braking
//! system: an electric retarder whose authority fades with speed and a
//! mechanical brake that can hold the truck at rest.

use serde::{Deserialize, Serialize};

use super::geom::{wrap_angle, OrientedRect, Vec2};
use crate::{Error, Result};

/// Physical truck parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruckParams {
    /// Wheelbase [m].
    pub wheelbase: f64,
    /// Footprint length [m].
    pub length: f64,
    /// Footprint width [m].
    pub width: f64,
    /// Maximum steering angle [rad].
    pub max_steer: f64,
    /// Full-throttle traction acceleration [m/s^2].
    pub max_traction: f64,
    /// Electric retarder gain at full command [m/s^2].
    pub elec_brake_gain: f64,
    /// Speed below which retarder authority fades linearly to zero [m/s].
    pub elec_fade_speed: f64,
    /// Mechanical brake gain at full command [m/s^2].
    pub mech_brake_gain: f64,
    /// Linear drag coefficient [1/s].
    pub drag: f64,
}

impl Default for TruckParams {
    fn default() -> Self {
        TruckParams {
            wheelbase: 6.0,
            length: 13.0,
            width: 7.0,
            max_steer: 35.0_f64.to_radians(),
            max_traction: 1.0,
            elec_brake_gain: 1.2,
            elec_fade_speed: 1.39, // 5 km/h
            mech_brake_gain: 2.0,
            drag: 0.02,
        }
    }
}

/// Truck pose and motion state. `pos` is the footprint center.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruckState {
    pub pos: Vec2,
    /// Heading [rad], CCW from +x, wrapped to (-pi, pi].
    pub heading: f64,
    /// Forward speed [m/s], never negative.
    pub speed: f64,
    /// Current steering angle [rad].
    pub steer_angle: f64,
    /// Distance traveled since episode start [m].
    pub odometer: f64,
    /// Simulation time [s].
    pub t: f64,
}

impl TruckState {
    pub fn at(pos: Vec2, heading: f64) -> Self {
        TruckState {
            pos,
            heading,
            speed: 0.0,
            steer_angle: 0.0,
            odometer: 0.0,
            t: 0.0,
        }
    }

    pub fn footprint(&self, params: &TruckParams) -> OrientedRect {
        OrientedRect {
            center: self.pos,
            heading: self.heading,
            half_len: params.length / 2.0,
            half_wid: params.width / 2.0,
        }
    }
}

/// Normalized actuator command. Steering is in [-1, 1] (positive left), the
/// three longitudinal channels in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    #[serde(rename = "str")]
    pub steer: f64,
    #[serde(rename = "acc")]
    pub throttle: f64,
    #[serde(rename = "dec_e")]
    pub brake_e: f64,
    #[serde(rename = "dec_m")]
    pub brake_m: f64,
}

impl ControlCommand {
    pub const ZERO: ControlCommand = ControlCommand {
        steer: 0.0,
        throttle: 0.0,
        brake_e: 0.0,
        brake_m: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite()
            && self.throttle.is_finite()
            && self.brake_e.is_finite()
            && self.brake_m.is_finite()
    }

    pub fn in_range(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer)
            && (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake_e)
            && (0.0..=1.0).contains(&self.brake_m)
    }

    pub fn clamped(&self) -> ControlCommand {
        ControlCommand {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
            brake_e: self.brake_e.clamp(0.0, 1.0),
            brake_m: self.brake_m.clamp(0.0, 1.0),
        }
    }

    pub fn channels(&self) -> [f64; 4] {
        [self.steer, self.throttle, self.brake_e, self.brake_m]
    }

    pub fn from_channels(c: [f64; 4]) -> ControlCommand {
        ControlCommand {
            steer: c[0],
            throttle: c[1],
            brake_e: c[2],
            brake_m: c[3],
        }
    }
}

/// Advances the truck by one explicit-Euler step of length `dt`.
///
/// All derivative terms use the pre-step state: position and odometer advance
/// with the old speed and heading, heading turns by v tan(delta) / L dt, and
/// the new speed is clamped at zero so braking can hold the truck at rest.
/// The electric retarder term `elec_brake_gain * cmd * min(1, v / fade)`
/// decays with speed and therefore can never stop the truck on its own; the
/// mechanical term is speed-independent and can.
pub fn step_dynamics(
    state: &TruckState,
    cmd: &ControlCommand,
    params: &TruckParams,
    dt: f64,
) -> Result<TruckState> {
    if !dt.is_finite() || dt <= 0.0 || dt > 0.1 {
        return Err(Error::InvalidInput(format!(
            "dt must lie in (0, 0.1] s, got {dt}"
        )));
    }
    if !cmd.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite command {cmd:?}")));
    }
    if !cmd.in_range() {
        return Err(Error::InvalidInput(format!(
            "command out of range: {cmd:?}"
        )));
    }
    if !(state.pos.x.is_finite()
        && state.pos.y.is_finite()
        && state.heading.is_finite()
        && state.speed.is_finite()
        && state.speed >= 0.0)
    {
        return Err(Error::InvalidInput(format!("invalid state {state:?}")));
    }

    let v = state.speed;
    let delta = cmd.steer * params.max_steer;
    let fade = (v / params.elec_fade_speed).min(1.0);
    let accel = params.max_traction * cmd.throttle
        - params.elec_brake_gain * cmd.brake_e * fade
        - params.mech_brake_gain * cmd.brake_m
        - params.drag * v;

    let dir = Vec2::from_angle(state.heading);
    Ok(TruckState {
        pos: state.pos + dir * (v * dt),
        heading: wrap_angle(state.heading + v * delta.tan() / params.wheelbase * dt),
        speed: (v + accel * dt).max(0.0),
        steer_angle: delta,
        odometer: state.odometer + v * dt,
        t: state.t + dt,
    })
}
