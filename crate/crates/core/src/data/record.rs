//! Demonstration recording: the scripted expert drives while the sensors a
//! planner would see are sampled at the control rate.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::expert::{plan_route, route_from_edges, ExpertPolicy, Route, TrafficSim};
use crate::model::{lateral_hlc, longitudinal_hlc, LateralHlc, LongitudinalHlc};
use crate::world::{cast_scan, sample_gnss, ControlCommand, GnssFix, MineMap, RangeScan, SpeedEstimator};
use crate::{Error, Result};

/// One recorded frame at the control rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFrame {
    /// Frame index within the episode before any filtering; gaps in this
    /// sequence mark removed frames.
    pub idx: u64,
    /// Simulation time [s].
    pub t: f64,
    /// Route arc-length position [m].
    pub s: f64,
    pub scan: RangeScan,
    pub gnss: GnssFix,
    /// Speed estimate from consecutive fixes [m/s].
    pub speed_est: f64,
    /// Ground-truth speed [m/s].
    pub speed_true: f64,
    pub lat: LateralHlc,
    pub lon: LongitudinalHlc,
    /// Command the expert issued on this frame.
    pub cmd: ControlCommand,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoEpisode {
    pub name: String,
    pub frames: Vec<DemoFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub file: String,
    pub name: String,
    pub frames: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoManifest {
    pub seed: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeMeta>,
}

/// A slower truck placed ahead of the recorder to provoke gap keeping.
#[derive(Debug, Clone)]
pub struct LeadSpec {
    /// Start position along the same route [m].
    pub start_s: f64,
    /// Speed limit for the lead truck [m/s].
    pub max_speed: f64,
}

/// One planned recording run.
pub struct DemoSpec {
    pub name: String,
    pub map: MineMap,
    pub route: Route,
    /// Arc position where the recording starts [m]; nonzero values focus an
    /// episode on a later stretch, e.g. a junction.
    pub start_s: f64,
    /// Lateral offset at the start [m]; the expert recovering it on camera is
    /// the only supervision the planner gets for off-centerline states.
    pub start_offset: f64,
    pub lead: Option<LeadSpec>,
    /// Wall-clock cap on the episode [s]; `None` runs to route completion.
    pub limit_s: Option<f64>,
}

/// Drives `route` with the scripted expert and records frames every control
/// period. Demonstrations assume healthy sensors, so fixes never drop out.
pub fn record_episode(
    map: MineMap,
    route: &Route,
    cfg: &RunConfig,
    seed: u64,
    start_s: f64,
    start_offset: f64,
    lead: Option<LeadSpec>,
    limit_s: Option<f64>,
) -> Result<Vec<DemoFrame>> {
    let prepared = map.prepare();
    let mut sim = TrafficSim::new(prepared, cfg.world.truck.clone(), cfg.world.dt);
    let ego = sim.add_truck(
        ExpertPolicy::new(cfg.expert.clone(), cfg.world.truck.clone(), route.clone()),
        start_s,
        start_offset,
        0.0,
    );
    if let Some(l) = &lead {
        let mut lead_cfg = cfg.expert.clone();
        lead_cfg.max_speed = l.max_speed;
        sim.add_truck(
            ExpertPolicy::new(lead_cfg, cfg.world.truck.clone(), route.clone()),
            l.start_s,
            0.0,
            0.0,
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimator = SpeedEstimator::new();
    let mut frames = Vec::new();
    // Cap runaway episodes at triple the crawl-speed traversal.
    let max_t = limit_s.unwrap_or(3.0 * route.len().max(100.0) + 300.0);
    let mut step = 0u64;
    loop {
        if sim.trucks[ego].done || sim.time >= max_t {
            break;
        }
        let pre = if step % cfg.world.control_period as u64 == 0 {
            let state = sim.trucks[ego].state;
            let others = sim.footprints_except(ego);
            let scan = cast_scan(&state, &sim.map, &others, &cfg.world.scan)?;
            let gnss = sample_gnss(&state, 0.0, &mut rng);
            let speed_est = estimator.update(&gnss, state.t);
            Some((state, scan, gnss, speed_est))
        } else {
            None
        };
        sim.step()?;
        if sim.trucks[ego].lost {
            let s = sim.trucks[ego].policy.progress();
            return Err(Error::ExpertLost { s, offset: f64::NAN });
        }
        if let Some((state, scan, gnss, speed_est)) = pre {
            if let Some(d) = sim.last_decisions[ego].clone() {
                frames.push(DemoFrame {
                    idx: frames.len() as u64,
                    t: state.t,
                    s: d.s,
                    scan,
                    gnss,
                    speed_est,
                    speed_true: state.speed,
                    lat: lateral_hlc(route, d.s),
                    lon: longitudinal_hlc(d.v_allow, speed_est),
                    cmd: d.cmd,
                });
            }
        }
        step += 1;
    }
    if frames.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(frames)
}

/// The standard recording plan: the haul loop both ways, the junction hook
/// both ways, two cross-network sweeps that each take two corners, four slow
/// corner takes from near standstill, and a short car-following episode.
/// Corners appear at cruise and at crawl entry speeds so the turn branches
/// see the whole regime a recovery passes through.
pub fn standard_demo_plan() -> Result<Vec<DemoSpec>> {
    let (loop_map, network) = crate::world::build_test_maps()?;
    let lap_fwd = route_from_edges(&loop_map, &[(0, true), (1, true)])?;
    let lap_rev = route_from_edges(&loop_map, &[(1, false), (0, false)])?;
    let hook = plan_route(&network, 8, 9)?;
    let hook_rev = plan_route(&network, 9, 8)?;
    // L1 -> D2 bends right then left; D1 -> L2 bends left then right.
    let cross = plan_route(&network, 0, 9)?;
    let cross_rev = plan_route(&network, 4, 8)?;
    let first_bend = |r: &Route| {
        r.events
            .iter()
            .find(|e| e.dir != 0.0)
            .map(|e| e.s)
            .unwrap_or(100.0)
    };

    let mut specs = vec![
        DemoSpec {
            name: "loop_cw".into(),
            map: loop_map.clone(),
            route: lap_fwd.clone(),
            start_s: 0.0,
            start_offset: 0.0,
            lead: None,
            limit_s: None,
        },
        DemoSpec {
            name: "loop_ccw".into(),
            map: loop_map.clone(),
            route: lap_rev,
            start_s: 0.0,
            start_offset: 0.0,
            lead: None,
            limit_s: None,
        },
        DemoSpec {
            name: "hook".into(),
            map: network.clone(),
            route: hook.clone(),
            start_s: 0.0,
            start_offset: 0.0,
            lead: None,
            limit_s: Some(170.0),
        },
        DemoSpec {
            name: "hook_rev".into(),
            map: network.clone(),
            route: hook_rev.clone(),
            start_s: 0.0,
            start_offset: 0.0,
            lead: None,
            limit_s: Some(200.0),
        },
        // The sweeps skip their long corner-free lead-in and stop once both
        // corners are behind them.
        DemoSpec {
            name: "cross".into(),
            map: network.clone(),
            route: cross.clone(),
            start_s: (first_bend(&cross) - 100.0).max(0.0),
            start_offset: 0.0,
            lead: None,
            limit_s: Some(190.0),
        },
        DemoSpec {
            name: "cross_rev".into(),
            map: network.clone(),
            route: cross_rev.clone(),
            start_s: (first_bend(&cross_rev) - 100.0).max(0.0),
            start_offset: 0.0,
            lead: None,
            limit_s: Some(190.0),
        },
    ];
    // Slow takes: standstill 50 m before a corner reaches it at crawl speed,
    // the regime a disturbance recovery crosses the turn window in. Each take
    // starts a metre off centerline so the recovery itself is demonstrated,
    // from both sides of every corner.
    for (name, route, offset) in [
        ("creep_r", &hook, 1.0),
        ("creep_rb", &hook, -1.0),
        ("creep_l", &hook_rev, -1.0),
        ("creep_lb", &hook_rev, 1.0),
        ("creep_r2", &cross, -1.0),
        ("creep_r2b", &cross, 1.0),
        ("creep_l2", &cross_rev, 1.0),
        ("creep_l2b", &cross_rev, -1.0),
    ] {
        specs.push(DemoSpec {
            name: name.into(),
            map: network.clone(),
            route: route.clone(),
            start_s: (first_bend(route) - 50.0).max(0.0),
            start_offset: offset,
            lead: None,
            limit_s: Some(55.0),
        });
    }
    specs.push(DemoSpec {
        name: "follow".into(),
        map: loop_map,
        route: lap_fwd,
        start_s: 0.0,
        start_offset: 0.0,
        lead: Some(LeadSpec {
            start_s: 80.0,
            max_speed: 2.0,
        }),
        limit_s: Some(100.0),
    });
    Ok(specs)
}

/// Writes episodes as JSON Lines plus a manifest into `dir`.
pub fn save_demos(dir: &Path, episodes: &[DemoEpisode], seed: u64, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let file = format!("ep_{i:03}.jsonl");
        let mut out = Vec::new();
        for f in &ep.frames {
            serde_json::to_writer(&mut out, f)?;
            out.push(b'\n');
        }
        fs::write(dir.join(&file), out)?;
        let duration = ep.frames.last().map(|f| f.t).unwrap_or(0.0)
            - ep.frames.first().map(|f| f.t).unwrap_or(0.0);
        metas.push(EpisodeMeta {
            file,
            name: ep.name.clone(),
            frames: ep.frames.len(),
            duration_s: duration,
        });
    }
    let manifest = DemoManifest {
        seed,
        config_hash: config_hash.to_string(),
        episodes: metas,
    };
    let mut buf = serde_json::to_vec_pretty(&manifest)?;
    buf.push(b'\n');
    fs::write(dir.join("manifest.json"), buf)?;
    Ok(())
}

/// Loads a demo directory written by [`save_demos`].
pub fn load_demos(dir: &Path) -> Result<(Vec<DemoEpisode>, DemoManifest)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|_| Error::MissingInput(format!("{}", manifest_path.display())))?;
    let manifest: DemoManifest = serde_json::from_str(&text)?;
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for meta in &manifest.episodes {
        let path = dir.join(&meta.file);
        let file = fs::File::open(&path)
            .map_err(|_| Error::MissingInput(format!("{}", path.display())))?;
        let mut frames = Vec::with_capacity(meta.frames);
        for (ln, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let frame: DemoFrame = serde_json::from_str(&line).map_err(|e| {
                Error::InvalidInput(format!("{}:{}: {e}", meta.file, ln + 1))
            })?;
            frames.push(frame);
        }
        episodes.push(DemoEpisode {
            name: meta.name.clone(),
            frames,
        });
    }
    Ok((episodes, manifest))
}

/// Convenience used by tests and the CLI: run the full plan.
pub fn record_plan(cfg: &RunConfig, seed: u64) -> Result<Vec<DemoEpisode>> {
    let mut episodes = Vec::new();
    for (i, spec) in standard_demo_plan()?.into_iter().enumerate() {
        let frames = record_episode(
            spec.map,
            &spec.route,
            cfg,
            seed.wrapping_add(i as u64),
            spec.start_s,
            spec.start_offset,
            spec.lead,
            spec.limit_s,
        )?;
        episodes.push(DemoEpisode {
            name: spec.name,
            frames,
        });
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::build_test_maps;

    fn short_lap_cfg() -> RunConfig {
        RunConfig::default()
    }

    #[test]
    fn recording_pairs_sensors_with_commands() {
        let cfg = short_lap_cfg();
        let (loop_map, _) = build_test_maps().unwrap();
        let route = route_from_edges(&loop_map, &[(0, true), (1, true)]).unwrap();
        let frames = record_episode(loop_map, &route, &cfg, 9, 0.0, 0.0, None, Some(40.0)).unwrap();
        // 40 s at 10 Hz, minus nothing: one frame per control tick.
        assert!(frames.len() >= 398 && frames.len() <= 401, "{}", frames.len());
        let mut prev_s = -1.0;
        for f in &frames {
            assert!(f.s >= prev_s);
            prev_s = f.s;
            assert!(f.cmd.in_range());
            assert!(f.scan.valid.iter().any(|&v| v));
            assert!(f.gnss.valid);
        }
        // After the start-up transient the estimate tracks the true speed.
        let late = &frames[frames.len() - 1];
        assert!((late.speed_est - late.speed_true).abs() < 0.5);
        // Accelerating from rest on a straight: expect acceleration frames.
        assert!(frames
            .iter()
            .any(|f| f.lon == LongitudinalHlc::Accelerate));
    }

    #[test]
    fn same_seed_records_identical_frames() {
        let cfg = short_lap_cfg();
        let (loop_map, _) = build_test_maps().unwrap();
        let route = route_from_edges(&loop_map, &[(0, true)]).unwrap();
        let a = record_episode(loop_map.clone(), &route, &cfg, 4, 0.0, 0.0, None, Some(20.0)).unwrap();
        let b = record_episode(loop_map, &route, &cfg, 4, 0.0, 0.0, None, Some(20.0)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn demo_files_round_trip() {
        let cfg = short_lap_cfg();
        let (loop_map, _) = build_test_maps().unwrap();
        let route = route_from_edges(&loop_map, &[(0, true)]).unwrap();
        let frames = record_episode(loop_map, &route, &cfg, 5, 0.0, 0.0, None, Some(15.0)).unwrap();
        let eps = vec![DemoEpisode {
            name: "t".into(),
            frames,
        }];
        let dir = tempfile::tempdir().unwrap();
        save_demos(dir.path(), &eps, 5, "hash").unwrap();
        let (back, manifest) = load_demos(dir.path()).unwrap();
        assert_eq!(manifest.episodes.len(), 1);
        assert_eq!(back[0].frames, eps[0].frames);
        assert_eq!(manifest.seed, 5);
    }

    #[test]
    fn missing_demo_directory_is_reported() {
        let err = load_demos(Path::new("/nonexistent/demos")).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
