//! Route-following controller: pure-pursuit steering, anticipatory speed
//! planning, and a throttle/brake split that never overlaps pedals.

use crate::config::ExpertConfig;
use crate::expert::route::Route;
use crate::world::{wrap_angle, ControlCommand, TruckParams, TruckState};
use crate::{Error, Result};

/// Lateral acceleration budget for curve speed caps [m/s^2].
const LAT_ACCEL: f64 = 1.5;
/// Sample spacing for the speed plan [m].
const PLAN_STEP: f64 = 2.0;
/// Distance short of the route end where the stop point sits [m].
const STOP_MARGIN: f64 = 2.0;
/// Speed error tolerated without touching any pedal [m/s].
const DEAD_BAND: f64 = 0.05;
/// Gap-keeping only engages when the road ahead is nearly straight; curve
/// walls otherwise masquerade as obstacles on the scan.
const STRAIGHT_CURVATURE: f64 = 1.0 / 150.0;
const STRAIGHT_HORIZON: f64 = 60.0;

/// One control decision plus the situational values behind it.
#[derive(Debug, Clone)]
pub struct ExpertDecision {
    pub cmd: ControlCommand,
    /// Arc-length position on the route [m].
    pub s: f64,
    /// Signed lateral offset from the route [m].
    pub offset: f64,
    /// Speed the planner allows here [m/s].
    pub v_allow: f64,
    /// True once the route end is reached at standstill.
    pub done: bool,
}

/// Splits a desired speed correction into pedal commands. Positive error
/// requests throttle with a feed-forward for drag; negative error requests
/// the electric retarder first and the mechanical brake for the remainder
/// or at crawl speeds where the retarder has faded.
pub fn longitudinal_split(
    v_err: f64,
    v: f64,
    v_allow: f64,
    cfg: &ExpertConfig,
    truck: &TruckParams,
) -> (f64, f64, f64) {
    if v_err.abs() < DEAD_BAND {
        return (0.0, 0.0, 0.0);
    }
    if v_err > 0.0 {
        let feed_forward = truck.drag * v_allow / truck.max_traction;
        let acc = (cfg.kp_throttle * v_err + feed_forward).clamp(0.0, 1.0);
        return (acc, 0.0, 0.0);
    }
    // Demand enough deceleration to close the error within a second,
    // capped slightly above the comfort rate.
    let demand = (-v_err).min(cfg.comfort_decel * 1.25);
    if v > truck.elec_fade_speed {
        let dec_e = (demand / truck.elec_brake_gain).clamp(0.0, 1.0);
        let unmet = demand - dec_e * truck.elec_brake_gain;
        let dec_m = (unmet / truck.mech_brake_gain).clamp(0.0, 1.0);
        (0.0, dec_e, dec_m)
    } else {
        (0.0, 0.0, (demand / truck.mech_brake_gain).clamp(0.0, 1.0))
    }
}

/// Follows one route from start to end.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    cfg: ExpertConfig,
    truck: TruckParams,
    route: Route,
    /// Last route position, used as the projection hint; `None` until the
    /// first decision projects globally.
    last_s: Option<f64>,
}

impl ExpertPolicy {
    pub fn new(cfg: ExpertConfig, truck: TruckParams, route: Route) -> ExpertPolicy {
        ExpertPolicy {
            cfg,
            truck,
            route,
            last_s: None,
        }
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn progress(&self) -> f64 {
        self.last_s.unwrap_or(0.0)
    }

    /// Speed allowed at route position `s` moving at `v`, considering the
    /// limit, curve caps ahead, the route end, and an optional measured gap
    /// to something ahead.
    fn allowed_speed(&self, s: f64, v: f64, forward_range: Option<f64>) -> f64 {
        let a = self.cfg.comfort_decel;
        let mut allow = self.cfg.max_speed;
        // Anticipate curve caps over the braking horizon.
        let horizon = v * v / (2.0 * a) + 20.0;
        let mut d = 0.0;
        while d <= horizon {
            let k = self.route.path.curvature_at(s + d, 4.0).abs();
            if k > 1e-9 {
                let cap = (LAT_ACCEL / k).sqrt();
                allow = allow.min((cap * cap + 2.0 * a * d).sqrt());
            }
            d += PLAN_STEP;
        }
        // Stop at the route end.
        let remaining = (self.route.len() - STOP_MARGIN - s).max(0.0);
        allow = allow.min((2.0 * a * remaining).sqrt());
        // Keep a standstill gap behind anything ahead on a straight. A
        // speed-scaled reaction margin starts the braking early enough that
        // the pedal controller, which lags the plan, does not overshoot.
        if let Some(r) = forward_range {
            let straight_ahead =
                self.route.max_abs_curvature(s, s + STRAIGHT_HORIZON) < STRAIGHT_CURVATURE;
            if straight_ahead {
                let slack = (r - self.cfg.target_gap - 1.5 * v).max(0.0);
                allow = allow.min((2.0 * a * slack).sqrt());
            }
        }
        allow
    }

    /// One control decision. `forward_range` is the measured distance to the
    /// nearest thing ahead, if any sensor provides one.
    pub fn decide(
        &mut self,
        state: &TruckState,
        forward_range: Option<f64>,
    ) -> Result<ExpertDecision> {
        let proj = self.route.path.project(state.pos, self.last_s, 40.0);
        // Never move the hint backward; projection jitter near self-crossing
        // layouts must not restart the route.
        let s = match self.last_s {
            Some(prev) => prev.max(proj.s),
            None => proj.s,
        };
        self.last_s = Some(s);
        let offset = proj.offset;
        if offset.abs() > self.cfg.lost_offset_factor * self.route.width {
            return Err(Error::ExpertLost { s, offset });
        }

        // Pure pursuit toward a speed-scaled carrot point.
        let ld = (self.cfg.lookahead_gain * state.speed)
            .clamp(self.cfg.lookahead_min, self.cfg.lookahead_max);
        let target = self.route.path.point_at(s + ld);
        let to_target = target - state.pos;
        let alpha = wrap_angle(to_target.angle() - state.heading);
        let kappa = 2.0 * alpha.sin() / ld;
        let steer = (kappa * self.truck.wheelbase).atan();
        let a_str = (steer / self.truck.max_steer).clamp(-1.0, 1.0);

        let v_allow = self.allowed_speed(s, state.speed, forward_range);
        let v_err = v_allow - state.speed;
        let (acc, dec_e, dec_m) = longitudinal_split(
            v_err,
            state.speed,
            v_allow,
            &self.cfg,
            &self.truck,
        );

        let done = self.route.len() - s < STOP_MARGIN + 1.0 && state.speed < 0.05;
        Ok(ExpertDecision {
            cmd: ControlCommand {
                steer: a_str,
                throttle: acc,
                brake_e: dec_e,
                brake_m: dec_m,
            },
            s,
            offset,
            v_allow,
            done,
        })
    }
}
