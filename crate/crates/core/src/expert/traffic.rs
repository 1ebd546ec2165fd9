//! Multi-truck simulation: several route followers sharing one map, with
//! geometric forward-gap sensing between them.

use crate::expert::policy::ExpertPolicy;
use crate::world::{step_dynamics, wrap_angle, OrientedRect, PreparedMap, TruckParams, TruckState};
use crate::Result;

/// Cone half-angle within which another vehicle counts as "ahead" [rad].
const AHEAD_CONE: f64 = 30.0 * std::f64::consts::PI / 180.0;
/// Lateral corridor within which another vehicle counts as "ahead" [m].
const AHEAD_LATERAL: f64 = 8.0;
/// Sensing limit for the forward gap [m].
const AHEAD_RANGE: f64 = 120.0;

/// Bumper-to-bumper distance to the nearest vehicle ahead, if any.
pub fn forward_gap(
    state: &TruckState,
    params: &TruckParams,
    others: &[OrientedRect],
) -> Option<f64> {
    let dir = crate::world::Vec2::from_angle(state.heading);
    let mut best: Option<f64> = None;
    for other in others {
        let rel = other.center - state.pos;
        let along = rel.dot(dir);
        let lateral = rel.cross(dir).abs();
        if along <= 0.0 || along > AHEAD_RANGE || lateral > AHEAD_LATERAL {
            continue;
        }
        if wrap_angle(rel.angle() - state.heading).abs() > AHEAD_CONE {
            continue;
        }
        let gap = along - params.length / 2.0 - other.half_len;
        let gap = gap.max(0.0);
        best = Some(best.map_or(gap, |b: f64| b.min(gap)));
    }
    best
}

/// One truck in the shared world.
#[derive(Debug, Clone)]
pub struct TrafficTruck {
    pub state: TruckState,
    pub policy: ExpertPolicy,
    /// Reached the end of its route.
    pub done: bool,
    /// Left its route corridor; parked where it stood.
    pub lost: bool,
}

/// Steps every truck with its own expert policy in lock step.
#[derive(Debug)]
pub struct TrafficSim {
    pub map: PreparedMap,
    pub trucks: Vec<TrafficTruck>,
    params: TruckParams,
    dt: f64,
    pub time: f64,
    /// Decision each truck acted on during the latest [`Self::step`], indexed
    /// like `trucks`; `None` for parked or finished trucks. The decision was
    /// computed from the pre-step state, so recorders pair it with the state
    /// captured before stepping.
    pub last_decisions: Vec<Option<crate::expert::ExpertDecision>>,
}

impl TrafficSim {
    pub fn new(map: PreparedMap, params: TruckParams, dt: f64) -> TrafficSim {
        TrafficSim {
            map,
            trucks: Vec::new(),
            params,
            dt,
            time: 0.0,
            last_decisions: Vec::new(),
        }
    }

    pub fn params(&self) -> &TruckParams {
        &self.params
    }

    /// Places a truck on its policy's route at arc length `start_s`, shifted
    /// `offset` metres left of the centerline.
    pub fn add_truck(&mut self, policy: ExpertPolicy, start_s: f64, offset: f64, speed: f64) -> usize {
        let tangent = policy.route().path.tangent_at(start_s);
        let pos = policy.route().path.point_at(start_s) + tangent.perp() * offset;
        let mut state = TruckState::at(pos, tangent.angle());
        state.speed = speed;
        self.trucks.push(TrafficTruck {
            state,
            policy,
            done: false,
            lost: false,
        });
        self.trucks.len() - 1
    }

    /// Footprints of every truck except `skip` (pass `usize::MAX` for all).
    pub fn footprints_except(&self, skip: usize) -> Vec<OrientedRect> {
        self.trucks
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, t)| t.state.footprint(&self.params))
            .collect()
    }

    /// Advances every active truck by one step.
    pub fn step(&mut self) -> Result<()> {
        let n = self.trucks.len();
        self.last_decisions.clear();
        self.last_decisions.resize(n, None);
        for i in 0..n {
            if self.trucks[i].done || self.trucks[i].lost {
                continue;
            }
            let others = self.footprints_except(i);
            let state = self.trucks[i].state;
            let gap = forward_gap(&state, &self.params, &others);
            match self.trucks[i].policy.decide(&state, gap) {
                Ok(d) => {
                    self.trucks[i].state = step_dynamics(&state, &d.cmd, &self.params, self.dt)?;
                    self.trucks[i].done = d.done;
                    self.last_decisions[i] = Some(d);
                }
                Err(crate::Error::ExpertLost { .. }) => {
                    self.trucks[i].lost = true;
                }
                Err(e) => return Err(e),
            }
        }
        self.time += self.dt;
        Ok(())
    }
}
