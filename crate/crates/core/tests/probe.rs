//! Scratch diagnostics; not part of the suite.

use minehaul_core::bench::find_disturbance_sites;
use minehaul_core::config::FusionMode;
use minehaul_core::deploy::{Predictor, run_episode, EpisodeOptions, PlannerPredictor};
use minehaul_core::expert::plan_route;
use minehaul_core::world::build_test_maps;
use minehaul_core::RunConfig;

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.scan_hidden = vec![64, 64];
    cfg.model.meas_hidden = vec![128, 128, 64];
    cfg.model.trunk_hidden = vec![64, 64];
    cfg.model.branch_hidden = vec![32];
    cfg.model.speed_hidden = vec![16];
    cfg
}

#[test]
#[ignore]
fn disturbance_mode_sweep() {
    use minehaul_core::bench::{bootstrap_gap_lower_bound, run_disturbance, Pilot};
    let cfg = desk_config();
    let ckpt = std::path::Path::new("/tmp/fixture/train5/final.ckpt");
    let (_, network) = build_test_maps().unwrap();
    let routes = vec![
        plan_route(&network, 8, 9).unwrap(),
        plan_route(&network, 9, 8).unwrap(),
    ];
    let sites = find_disturbance_sites(&routes).unwrap();
    let prepared = network.prepare();
    let n = cfg.bench.disturbance_per_class;
    let mut success: Vec<Vec<f64>> = Vec::new();
    for mode in [
        FusionMode::Instantaneous,
        FusionMode::Uniform,
        FusionMode::Evidential,
    ] {
        let mut predictor = PlannerPredictor::from_checkpoint(ckpt, &cfg, true).unwrap();
        let mut pilot = Pilot::Model {
            predictor: &mut predictor,
            mode,
        };
        let report = run_disturbance(&prepared, &routes, &sites, &mut pilot, &cfg, n, 7).unwrap();
        eprint!("{mode:?}: sr {:.3}", report.aggregates["success_rate"]);
        for cls in ["disturb_straight", "disturb_turn_left", "disturb_turn_right"] {
            eprint!("  {} {:.3}", cls, report.aggregates[&format!("success_{cls}")]);
        }
        eprintln!();
        success.push(report.episodes.iter().map(|e| e.success).collect());
    }
    let lb = bootstrap_gap_lower_bound(&success[2], &success[0], 1000, 0.90, 7).unwrap();
    eprintln!("evid-inst gap lb (unpaired): {lb:.4}");
}

#[test]
#[ignore]
fn route_event_survey() {
    let (_, network) = build_test_maps().unwrap();
    for (a, b) in [(8usize, 9usize), (9, 8), (0, 9), (9, 0), (4, 8), (8, 4), (0, 6), (6, 0), (0, 4)] {
        let r = plan_route(&network, a, b).unwrap();
        eprint!("{a}->{b} len {:6.0}:", r.len());
        for ev in &r.events {
            eprint!(
                "  [node {} s {:.0} dir {:+.0} ang {:+.0}deg]",
                ev.node,
                ev.s,
                ev.dir,
                ev.angle.to_degrees()
            );
        }
        eprintln!();
    }
}

#[test]
#[ignore]
fn expert_per_class_recovery() {
    use minehaul_core::bench::{run_disturbance, Pilot};
    let cfg = desk_config();
    let (_, network) = build_test_maps().unwrap();
    let routes = vec![
        plan_route(&network, 8, 9).unwrap(),
        plan_route(&network, 9, 8).unwrap(),
    ];
    let sites = find_disturbance_sites(&routes).unwrap();
    let prepared = network.prepare();
    let report = run_disturbance(&prepared, &routes, &sites, &mut Pilot::Expert, &cfg, 10, 7).unwrap();
    for e in &report.episodes {
        eprintln!("{} seed {} success {}", e.scenario, e.seed, e.success);
    }
    for (k, v) in &report.aggregates {
        eprintln!("{k} = {v:.3}");
    }
}

#[test]
#[ignore]
fn turn_track_inspection() {
    let cfg = desk_config();
    let ckpt = std::path::Path::new("/tmp/fixture/train5/final.ckpt");
    let (_, network) = build_test_maps().unwrap();
    let routes = vec![
        plan_route(&network, 8, 9).unwrap(),
        plan_route(&network, 9, 8).unwrap(),
    ];
    let sites = find_disturbance_sites(&routes).unwrap();
    for s in &sites {
        eprintln!("site {:?} route {} s {:.1}", s.class, s.route, s.s);
    }
    let prepared = network.prepare();
    let hold = (cfg.bench.success_hold_s / cfg.world.dt).round() as usize;

    for site in &sites {
        for (label, lat0, yaw0) in [("clean", 0.0, 0.0), ("pert", 0.8, 8.0f64.to_radians())] {
            let mut predictor = PlannerPredictor::from_checkpoint(ckpt, &cfg, true).unwrap();
            let mut opts = EpisodeOptions::standard(
                FusionMode::Evidential,
                cfg.bench.disturbance_timeout_s,
                7,
            );
            opts.start_s = site.s;
            opts.start_offset = lat0;
            opts.start_heading_err = yaw0;
            opts.start_speed = 3.0;
            opts.reset_on_intervention = false;
            let log = run_episode(&prepared, &routes[site.route], &mut predictor, &cfg, &opts)
                .map_err(|e| panic!("{e}"))
                .unwrap();
            // Tightest 1-s window, scored by its worst point.
            let mut best_lat = f64::INFINITY;
            let mut best_head = f64::INFINITY;
            for w in log.track.windows(hold) {
                let lat = w.iter().map(|p| p.lat_err.abs()).fold(0.0, f64::max);
                let head = w.iter().map(|p| p.head_err.abs()).fold(0.0, f64::max);
                if lat < best_lat {
                    best_lat = lat;
                    best_head = head;
                }
            }
            let min_lat = log.track.iter().map(|p| p.lat_err.abs()).fold(f64::INFINITY, f64::min);
            let end = log.track.last().unwrap();
            eprintln!(
                "{:?} {label}: final_s {:.1} (start {:.1}) cols {} int {} win_lat {:.2} win_head {:.1}deg min_lat {:.2} end_lat {:.2}",
                site.class,
                log.final_s,
                site.s,
                log.collisions,
                log.interventions,
                best_lat,
                best_head.to_degrees(),
                min_lat,
                end.lat_err,
            );
            if site.class != minehaul_core::bench::TurnClass::Straight {
                for p in &log.track {
                    eprintln!(
                        "  t {:5.1} x {:8.2} y {:8.2} hd {:6.1} v {:4.1} steer {:+.2} thr {:.2} brk {:.2} lat {:+6.2} head {:+6.1} {:?}",
                        p.t,
                        p.x,
                        p.y,
                        p.heading.to_degrees(),
                        p.speed,
                        p.cmd.steer,
                        p.cmd.throttle,
                        p.cmd.brake_e + p.cmd.brake_m,
                        p.lat_err,
                        p.head_err.to_degrees(),
                        p.event,
                    );
                }
            }
        }
    }
}

#[test]
#[ignore]
fn wall_survey_near_crash() {
    let (_, network) = build_test_maps().unwrap();
    let prepared = network.prepare();
    let min = minehaul_core::world::Vec2 { x: 1107.0, y: -839.0 };
    let max = minehaul_core::world::Vec2 { x: 1147.0, y: -799.0 };
    for idx in prepared.walls_grid.query_aabb(min, max) {
        let (a, b) = prepared.walls_grid.segments()[idx];
        eprintln!("wall ({:.1},{:.1}) -> ({:.1},{:.1})", a.x, a.y, b.x, b.y);
    }
}


#[test]
#[ignore]
fn crash_pose_footprint() {
    let cfg = desk_config();
    let (_, network) = build_test_maps().unwrap();
    let prepared = network.prepare();
    let mut state = minehaul_core::world::TruckState::at(
        minehaul_core::world::Vec2 { x: 1127.32, y: -819.19 },
        154.4f64.to_radians(),
    );
    state.speed = 3.8;
    let rect = state.footprint(&cfg.world.truck);
    eprintln!("params: length {} width {}", cfg.world.truck.length, cfg.world.truck.width);
    for c in rect.corners() {
        eprintln!("corner ({:.2},{:.2})", c.x, c.y);
    }
    let (min, max) = rect.aabb();
    for idx in prepared.walls_grid.query_aabb(min, max) {
        let (a, b) = prepared.walls_grid.segments()[idx];
        let hit = rect.intersects_segment(a, b);
        eprintln!("wall ({:.2},{:.2})->({:.2},{:.2}) hit={}", a.x, a.y, b.x, b.y, hit);
    }
    let rep = minehaul_core::world::check_collision(&state, &cfg.world.truck, &prepared, &[]);
    eprintln!("wall_hit={}", rep.wall_hit);
}


#[test]
#[ignore]
fn branch_replay_on_fillet_frames() {
    let cfg = desk_config();
    let ckpt = std::path::Path::new("/tmp/fixture/train5/final.ckpt");
    let mut predictor = PlannerPredictor::from_checkpoint(ckpt, &cfg, true).unwrap();
    let (episodes, _) = minehaul_core::data::load_demos(std::path::Path::new("/tmp/fixture/filtered5")).unwrap();
    let k = predictor.k();
    for hlc in [minehaul_core::model::LateralHlc::TurnLeft, minehaul_core::model::LateralHlc::TurnRight] {
        let mut rows = 0;
        eprintln!("== {:?}", hlc);
        for ep in &episodes {
            for f in &ep.frames {
                if f.lat != hlc || f.cmd.steer.abs() < 0.40 {
                    continue;
                }
                if rows >= 8 {
                    break;
                }
                let obs = minehaul_core::model::Observation {
                    scan: f.scan.clone(),
                    gnss: f.gnss,
                    speed: f.speed_est,
                    lat: f.lat,
                    lon: f.lon,
                };
                let preds = predictor.predict(&obs).unwrap();
                let j: Vec<String> = (0..k).map(|i| format!("{:+.2}", preds[i].gamma)).collect();
                eprintln!(
                    "{} s {:7.1} v {:3.1} label {:+.2} pred [{}]",
                    ep.name, f.s, f.speed_true, f.cmd.steer, j.join(" ")
                );
                rows += 1;
            }
        }
    }
}
