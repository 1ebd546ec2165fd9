//! Runtime deployment: distance-binned fusion of lookahead predictions and
//! the fixed-rate closed-loop executor that drives the truck from them.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FusionMode;
use crate::expert::{ExpertPolicy, Route};
use crate::loss::{Evidential, COMMAND_COUNT};
use crate::model::{
    lateral_hlc, longitudinal_hlc, load_checkpoint, Observation, Planner, PlannerCache,
    PlannerInput,
};
use crate::world::{
    cast_scan, check_collision, sample_gnss, step_dynamics, wrap_angle, ControlCommand,
    PreparedMap, SpeedEstimator, TruckState,
};
use crate::{Error, ParamStore, Real, RunConfig, Result};

/// Interventions trigger when the heading error exceeds this [rad].
const HEADING_LIMIT: f64 = std::f64::consts::FRAC_PI_2;
/// Speed assigned when the truck is placed back on the reference line [m/s].
const RESET_SPEED: f64 = 1.0;
/// Distance from the route end that counts as arrival [m].
const ARRIVAL_MARGIN: f64 = 2.0;

/// One stored prediction: per-channel command values with their confidences.
#[derive(Debug, Clone)]
struct BinEntry {
    chi: [Real; COMMAND_COUNT],
    lambda: [Real; COMMAND_COUNT],
}

/// Ring of integer-meter bins holding lookahead predictions and confidences.
///
/// A prediction set ingested at odometer `s` lands in bins `round(s) + k`;
/// bins whose meter lies fully behind the truck (`d < floor(s)`) are evicted,
/// so at most `K + 1` bins are live at any time.
#[derive(Debug)]
pub struct FusionBuffer {
    k: usize,
    cap: usize,
    bins: BTreeMap<i64, VecDeque<BinEntry>>,
    reads: u64,
}

impl FusionBuffer {
    pub fn new(k: usize, cap: usize) -> Result<FusionBuffer> {
        if k < 1 || cap < 1 {
            return Err(Error::Config(format!(
                "fusion buffer needs k >= 1 and cap >= 1, got k={k} cap={cap}"
            )));
        }
        Ok(FusionBuffer {
            k,
            cap,
            bins: BTreeMap::new(),
            reads: 0,
        })
    }

    /// Stores one prediction set taken at odometer `s`. `preds` is
    /// channel-major (`t * K + k`); confidences are the inverse predictive
    /// variances.
    pub fn ingest(&mut self, s: f64, preds: &[Evidential<Real>]) -> Result<()> {
        let want = COMMAND_COUNT * self.k;
        if preds.len() != want {
            return Err(Error::Dimension {
                what: "fusion ingest".into(),
                expected: want,
                got: preds.len(),
            });
        }
        if !s.is_finite() {
            return Err(Error::Domain(format!("odometer {s} not finite")));
        }
        // Validate the whole set before touching any bin.
        let mut lambdas = vec![0.0; preds.len()];
        for (i, p) in preds.iter().enumerate() {
            let l = p.precision()?;
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::Domain(format!("confidence {l} not positive")));
            }
            lambdas[i] = l;
        }
        let base = s.round() as i64;
        for step in 0..self.k {
            let mut chi = [0.0; COMMAND_COUNT];
            let mut lambda = [0.0; COMMAND_COUNT];
            for t in 0..COMMAND_COUNT {
                chi[t] = preds[t * self.k + step].gamma;
                lambda[t] = lambdas[t * self.k + step];
            }
            let bin = self.bins.entry(base + step as i64).or_default();
            bin.push_back(BinEntry { chi, lambda });
            while bin.len() > self.cap {
                bin.pop_front();
            }
        }
        self.advance(s);
        Ok(())
    }

    /// Evicts bins whose meter lies behind odometer `s`.
    pub fn advance(&mut self, s: f64) {
        let floor = s.floor() as i64;
        self.bins.retain(|&d, _| d >= floor);
    }

    /// Drops all stored predictions (used after an intervention reset).
    pub fn clear(&mut self) {
        self.bins.clear();
    }

    /// Fused command for bin `d`. Instantaneous mode returns the freshest
    /// zero-distance prediction and never consults the bins; the other modes
    /// fall back to it when bin `d` is empty. Output is clamped to each
    /// channel's command range.
    pub fn fuse(
        &mut self,
        d: i64,
        mode: FusionMode,
        latest: &[Evidential<Real>],
    ) -> Result<ControlCommand> {
        let want = COMMAND_COUNT * self.k;
        if latest.len() != want {
            return Err(Error::Dimension {
                what: "fusion latest prediction".into(),
                expected: want,
                got: latest.len(),
            });
        }
        let instantaneous =
            |l: &[Evidential<Real>]| -> [Real; COMMAND_COUNT] {
                let mut out = [0.0; COMMAND_COUNT];
                for t in 0..COMMAND_COUNT {
                    out[t] = l[t * self.k].gamma;
                }
                out
            };
        let mut vals = match mode {
            FusionMode::Instantaneous => instantaneous(latest),
            FusionMode::Uniform | FusionMode::Evidential => {
                self.reads += 1;
                match self.bins.get(&d).filter(|b| !b.is_empty()) {
                    None => instantaneous(latest),
                    Some(bin) => {
                        let mut out = [0.0; COMMAND_COUNT];
                        for t in 0..COMMAND_COUNT {
                            out[t] = match mode {
                                FusionMode::Uniform => {
                                    bin.iter().map(|e| e.chi[t]).sum::<f64>() / bin.len() as f64
                                }
                                _ => {
                                    let num: f64 =
                                        bin.iter().map(|e| e.chi[t] * e.lambda[t]).sum();
                                    let den: f64 = bin.iter().map(|e| e.lambda[t]).sum();
                                    num / den
                                }
                            };
                        }
                        out
                    }
                }
            }
        };
        vals[0] = vals[0].clamp(-1.0, 1.0);
        for v in &mut vals[1..] {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(ControlCommand::from_channels(vals))
    }

    /// How many times a fuse call consulted the bins.
    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    /// Stored predictions in bin `d`.
    pub fn bin_len(&self, d: i64) -> usize {
        self.bins.get(&d).map_or(0, VecDeque::len)
    }
}

/// Something that turns an observation into lookahead predictions.
pub trait Predictor {
    /// Lookahead steps per channel.
    fn k(&self) -> usize;
    /// Channel-major (`t * K + k`) evidential predictions.
    fn predict(&mut self, obs: &Observation) -> Result<Vec<Evidential<Real>>>;
}

/// The trained planner network as a predictor.
pub struct PlannerPredictor {
    planner: Planner,
    store: ParamStore,
    cache: PlannerCache,
    cfg: RunConfig,
}

impl PlannerPredictor {
    pub fn new(planner: Planner, store: ParamStore, cfg: RunConfig) -> PlannerPredictor {
        PlannerPredictor {
            planner,
            store,
            cache: PlannerCache::default(),
            cfg,
        }
    }

    /// Loads a checkpoint and refuses one built under an incompatible
    /// pipeline configuration unless `force` is set.
    pub fn from_checkpoint(path: &Path, cfg: &RunConfig, force: bool) -> Result<PlannerPredictor> {
        let (planner, store, _, meta) = load_checkpoint(path)?;
        if !force && meta.training_hash != cfg.training_hash() {
            return Err(Error::ConfigMismatch {
                stored: meta.training_hash,
                current: cfg.training_hash(),
            });
        }
        Ok(PlannerPredictor::new(planner, store, meta.config))
    }
}

impl Predictor for PlannerPredictor {
    fn k(&self) -> usize {
        self.planner.k()
    }

    fn predict(&mut self, obs: &Observation) -> Result<Vec<Evidential<Real>>> {
        let scan = crate::model::scan_features(&obs.scan, &self.cfg.world.scan)?;
        let meas = crate::model::meas_features(&obs.gnss, obs.speed, self.cfg.data.speed_norm);
        let x = PlannerInput {
            scan: &scan,
            meas: &meas,
            lat: obs.lat,
            lon: obs.lon,
        };
        let out = self.planner.forward(&self.store, &x, &mut self.cache)?;
        Ok(out.evidential)
    }
}

/// Everything that varies between closed-loop episodes.
#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub mode: FusionMode,
    /// Episode length [s].
    pub limit_s: f64,
    /// Per-tick probability of losing the position fix.
    pub gnss_failure_prob: f64,
    pub seed: u64,
    /// Start pose along the route [m] with optional disturbance.
    pub start_s: f64,
    /// Initial lateral offset, positive left [m].
    pub start_offset: f64,
    /// Initial heading error versus the route tangent [rad].
    pub start_heading_err: f64,
    pub start_speed: f64,
    /// Place the truck back on the reference line after an intervention and
    /// continue; otherwise the episode ends at the first intervention.
    pub reset_on_intervention: bool,
    /// Keep the full 50 Hz track in memory.
    pub record_track: bool,
}

impl EpisodeOptions {
    pub fn standard(mode: FusionMode, limit_s: f64, seed: u64) -> EpisodeOptions {
        EpisodeOptions {
            mode,
            limit_s,
            gnss_failure_prob: 0.0,
            seed,
            start_s: 0.0,
            start_offset: 0.0,
            start_heading_err: 0.0,
            start_speed: 0.0,
            reset_on_intervention: true,
            record_track: true,
        }
    }
}

/// Discrete episode events, logged with odometer position and time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    Intervention,
    GnssLoss,
    SafetyStop,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Collision => "collision",
            EventKind::Intervention => "intervention",
            EventKind::GnssLoss => "gnss_loss",
            EventKind::SafetyStop => "safety_stop",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Event {
    pub event: EventKind,
    /// Simulation time [s].
    pub t: f64,
    /// Route arc position [m].
    pub s: f64,
}

/// One 50 Hz sample of the executed trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub cmd: ControlCommand,
    /// Signed offset from the route centerline [m].
    pub lat_err: f64,
    /// Heading error versus the route tangent [rad].
    pub head_err: f64,
    pub event: Option<EventKind>,
}

/// What happened over one closed-loop episode.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    /// Fraction of the remaining route covered, in [0, 1].
    pub completion: f64,
    /// Final route arc position [m].
    pub final_s: f64,
    pub collisions: usize,
    pub interventions: usize,
    pub gnss_losses: usize,
    /// Highest speed reached [m/s].
    pub max_speed: f64,
    /// True when a safety stop aborted the episode.
    pub failed: bool,
    pub inferences: u64,
    pub steps: u64,
    pub buffer_reads: u64,
    pub events: Vec<Event>,
    pub track: Vec<TrackPoint>,
}

/// Pose on the route at `s` with a lateral/heading disturbance applied.
fn disturbed_start(route: &Route, opts: &EpisodeOptions) -> TruckState {
    let tangent = route.path.tangent_at(opts.start_s);
    let pos = route.path.point_at(opts.start_s) + tangent.perp() * opts.start_offset;
    let mut state = TruckState::at(pos, wrap_angle(tangent.angle() + opts.start_heading_err));
    state.speed = opts.start_speed;
    state
}

/// Runs one closed-loop episode: sensors and inference at the control rate,
/// dynamics at the physics rate under zero-order hold, fusion refreshed on
/// ingest and on each new integer-meter bin.
pub fn run_episode(
    map: &PreparedMap,
    route: &Route,
    predictor: &mut dyn Predictor,
    cfg: &RunConfig,
    opts: &EpisodeOptions,
) -> Result<EpisodeLog> {
    if predictor.k() != cfg.data.k_lookahead {
        return Err(Error::Dimension {
            what: "predictor lookahead".into(),
            expected: cfg.data.k_lookahead,
            got: predictor.k(),
        });
    }
    let dt = cfg.world.dt;
    let period = cfg.world.control_period;
    let n_steps = (opts.limit_s / dt).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut estimator = SpeedEstimator::new();
    // The expert's speed planner supplies the allowed speed that drives the
    // longitudinal high-level command; its steering output is unused.
    let mut hlc = ExpertPolicy::new(cfg.expert.clone(), cfg.world.truck.clone(), route.clone());
    let mut buffer = FusionBuffer::new(cfg.data.k_lookahead, cfg.deploy.bin_cap)?;
    let mut state = disturbed_start(route, opts);
    let mut s = opts.start_s;
    let mut cmd = ControlCommand::from_channels([0.0; COMMAND_COUNT]);
    let mut latest: Option<Vec<Evidential<Real>>> = None;
    let mut current_bin = s.round() as i64;

    let mut log = EpisodeLog {
        completion: 0.0,
        final_s: s,
        collisions: 0,
        interventions: 0,
        gnss_losses: 0,
        max_speed: 0.0,
        failed: false,
        inferences: 0,
        steps: 0,
        buffer_reads: 0,
        events: Vec::new(),
        track: if opts.record_track {
            Vec::with_capacity(n_steps as usize)
        } else {
            Vec::new()
        },
    };

    'episode: for step in 0..n_steps {
        let mut tick_event: Option<EventKind> = None;
        if step % period as u64 == 0 {
            // Sensor tick: observe, infer, ingest, re-fuse.
            let scan = cast_scan(&state, map, &[], &cfg.world.scan)?;
            let fix = sample_gnss(&state, opts.gnss_failure_prob, &mut rng);
            if !fix.valid {
                log.gnss_losses += 1;
                log.events.push(Event {
                    event: EventKind::GnssLoss,
                    t: state.t,
                    s,
                });
            }
            let speed_est = estimator.update(&fix, state.t);
            let v_allow = match hlc.decide(&state, None) {
                Ok(d) => d.v_allow,
                // Too far off the route for the speed planner: the geometry
                // check below raises the intervention; crawl until then.
                Err(Error::ExpertLost { .. }) => RESET_SPEED,
                Err(e) => return Err(e),
            };
            let obs = Observation {
                scan,
                gnss: fix,
                speed: speed_est,
                lat: lateral_hlc(route, s),
                lon: longitudinal_hlc(v_allow, speed_est),
            };
            log.inferences += 1;
            let safe = match predictor.predict(&obs) {
                Ok(preds) if preds.iter().all(|p| p.validate().is_ok()) => {
                    buffer.ingest(s, &preds)?;
                    latest = Some(preds);
                    true
                }
                Ok(_) | Err(Error::Domain(_)) => false,
                Err(e) => return Err(e),
            };
            if !safe {
                log.failed = true;
                log.events.push(Event {
                    event: EventKind::SafetyStop,
                    t: state.t,
                    s,
                });
                push_track(&mut log, opts, &state, &cmd, route, s, Some(EventKind::SafetyStop));
                break 'episode;
            }
            cmd = buffer.fuse(s.round() as i64, opts.mode, latest.as_ref().unwrap())?;
        } else if s.round() as i64 != current_bin {
            // Crossed into a new meter between sensor ticks.
            if let Some(l) = &latest {
                cmd = buffer.fuse(s.round() as i64, opts.mode, l)?;
            }
        }
        current_bin = s.round() as i64;

        state = step_dynamics(&state, &cmd, &cfg.world.truck, dt)?;
        log.steps += 1;
        log.max_speed = log.max_speed.max(state.speed);
        buffer.advance(state.odometer.max(s));

        // Route-relative geometry; the projection hint never moves backward.
        let proj = route.path.project(state.pos, Some(s), 40.0);
        s = s.max(proj.s);
        let lat_err = proj.offset;
        let head_err = wrap_angle(state.heading - route.path.tangent_at(s).angle());

        let report = check_collision(&state, &cfg.world.truck, map, &[]);
        if report.wall_hit {
            log.collisions += 1;
            log.events.push(Event {
                event: EventKind::Collision,
                t: state.t,
                s,
            });
            tick_event = Some(EventKind::Collision);
        }
        let departed = lat_err.abs() > route.width / 2.0 || head_err.abs() > HEADING_LIMIT;
        if report.wall_hit || departed {
            log.interventions += 1;
            log.events.push(Event {
                event: EventKind::Intervention,
                t: state.t,
                s,
            });
            tick_event = Some(EventKind::Intervention);
            push_track(&mut log, opts, &state, &cmd, route, s, tick_event);
            if !opts.reset_on_intervention {
                break 'episode;
            }
            // Back onto the reference line at the same arc position.
            let tangent = route.path.tangent_at(s);
            state = TruckState {
                pos: route.path.point_at(s),
                heading: tangent.angle(),
                speed: RESET_SPEED,
                steer_angle: 0.0,
                odometer: state.odometer,
                t: state.t,
            };
            buffer.clear();
            latest = None;
            cmd = ControlCommand::from_channels([0.0; COMMAND_COUNT]);
            continue;
        }
        push_track(&mut log, opts, &state, &cmd, route, s, tick_event);
        if s >= route.len() - ARRIVAL_MARGIN {
            break 'episode;
        }
    }

    log.final_s = s;
    let span = route.len() - opts.start_s;
    log.completion = if span > 0.0 {
        ((s - opts.start_s) / span).clamp(0.0, 1.0)
    } else {
        1.0
    };
    log.buffer_reads = buffer.reads();
    Ok(log)
}

fn push_track(
    log: &mut EpisodeLog,
    opts: &EpisodeOptions,
    state: &TruckState,
    cmd: &ControlCommand,
    route: &Route,
    s: f64,
    event: Option<EventKind>,
) {
    if !opts.record_track {
        return;
    }
    let head_err = wrap_angle(state.heading - route.path.tangent_at(s).angle());
    let lat_err = route.path.project(state.pos, Some(s), 40.0).offset;
    log.track.push(TrackPoint {
        t: state.t,
        x: state.pos.x,
        y: state.pos.y,
        heading: state.heading,
        speed: state.speed,
        cmd: *cmd,
        lat_err,
        head_err,
        event,
    });
}

/// Runs the scripted expert through the same episode accounting: decisions at
/// the control rate, zero-order hold in between, identical intervention and
/// collision bookkeeping. The fusion machinery is not involved.
pub fn run_expert_episode(
    map: &PreparedMap,
    route: &Route,
    cfg: &RunConfig,
    opts: &EpisodeOptions,
) -> Result<EpisodeLog> {
    // The expert gets its own loop rather than run_episode because it
    // produces commands, not distributions; the accounting is identical.
    let dt = cfg.world.dt;
    let period = cfg.world.control_period;
    let n_steps = (opts.limit_s / dt).round() as u64;
    let mut policy = ExpertPolicy::new(cfg.expert.clone(), cfg.world.truck.clone(), route.clone());
    let mut state = disturbed_start(route, opts);
    let mut s = opts.start_s;
    let mut cmd = ControlCommand::from_channels([0.0; COMMAND_COUNT]);
    let mut log = EpisodeLog {
        completion: 0.0,
        final_s: s,
        collisions: 0,
        interventions: 0,
        gnss_losses: 0,
        max_speed: 0.0,
        failed: false,
        inferences: 0,
        steps: 0,
        buffer_reads: 0,
        events: Vec::new(),
        track: Vec::new(),
    };

    'episode: for step in 0..n_steps {
        let mut tick_event = None;
        if step % period as u64 == 0 {
            match policy.decide(&state, None) {
                Ok(d) => {
                    cmd = d.cmd;
                    if d.done {
                        s = s.max(d.s);
                        break 'episode;
                    }
                }
                Err(Error::ExpertLost { .. }) => {
                    // Handled as an intervention by the geometry check below.
                    cmd = ControlCommand::from_channels([0.0; COMMAND_COUNT]);
                }
                Err(e) => return Err(e),
            }
        }
        state = step_dynamics(&state, &cmd, &cfg.world.truck, dt)?;
        log.steps += 1;
        log.max_speed = log.max_speed.max(state.speed);
        let proj = route.path.project(state.pos, Some(s), 40.0);
        s = s.max(proj.s);
        let lat_err = proj.offset;
        let head_err = wrap_angle(state.heading - route.path.tangent_at(s).angle());
        let report = check_collision(&state, &cfg.world.truck, map, &[]);
        if report.wall_hit {
            log.collisions += 1;
            log.events.push(Event {
                event: EventKind::Collision,
                t: state.t,
                s,
            });
            tick_event = Some(EventKind::Collision);
        }
        if report.wall_hit || lat_err.abs() > route.width / 2.0 || head_err.abs() > HEADING_LIMIT {
            log.interventions += 1;
            log.events.push(Event {
                event: EventKind::Intervention,
                t: state.t,
                s,
            });
            tick_event = Some(EventKind::Intervention);
            push_track(&mut log, opts, &state, &cmd, route, s, tick_event);
            if !opts.reset_on_intervention {
                break 'episode;
            }
            let tangent = route.path.tangent_at(s);
            state = TruckState {
                pos: route.path.point_at(s),
                heading: tangent.angle(),
                speed: RESET_SPEED,
                steer_angle: 0.0,
                odometer: state.odometer,
                t: state.t,
            };
            policy = ExpertPolicy::new(cfg.expert.clone(), cfg.world.truck.clone(), route.clone());
            cmd = ControlCommand::from_channels([0.0; COMMAND_COUNT]);
            continue;
        }
        push_track(&mut log, opts, &state, &cmd, route, s, tick_event);
        if s >= route.len() - ARRIVAL_MARGIN {
            break 'episode;
        }
    }
    log.final_s = s;
    let span = route.len() - opts.start_s;
    log.completion = if span > 0.0 {
        ((s - opts.start_s) / span).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(log)
}

/// Writes the 50 Hz track as CSV:
/// `t,x,y,heading,speed,steer_cmd,acc_cmd,dec_e_cmd,dec_m_cmd,lat_err,head_err,event`.
pub fn write_trajectory_csv(w: &mut impl Write, track: &[TrackPoint]) -> Result<()> {
    writeln!(
        w,
        "t,x,y,heading,speed,steer_cmd,acc_cmd,dec_e_cmd,dec_m_cmd,lat_err,head_err,event"
    )?;
    for p in track {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.t,
            p.x,
            p.y,
            p.heading,
            p.speed,
            p.cmd.steer,
            p.cmd.throttle,
            p.cmd.brake_e,
            p.cmd.brake_m,
            p.lat_err,
            p.head_err,
            p.event.map_or("", EventKind::as_str)
        )?;
    }
    Ok(())
}

/// Writes one JSON object per line: `{"event": ..., "t": ..., "s": ...}`.
pub fn write_events_jsonl(w: &mut impl Write, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, e)?;
        writeln!(w)?;
    }
    Ok(())
}
