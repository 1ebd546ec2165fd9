//! Benchmark suite: lane keeping, disturbance recovery and network-wide
//! navigation, with per-episode rows, aggregate checks and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FusionMode;
use crate::data::quantile;
use crate::deploy::{
    run_episode, run_expert_episode, EpisodeLog, EpisodeOptions, EventKind, Predictor,
};
use crate::expert::{plan_route, Route};
use crate::world::{MineMap, PreparedMap};
use crate::{Error, Result, RunConfig};

/// Schema version stamped into every report.
pub const REPORT_VERSION: u32 = 1;
/// Arc-length window around a junction that counts as its steering process
/// [m].
const INTERSECTION_WINDOW: f64 = 50.0;
/// Moving start speed for disturbance trials [m/s].
const DISTURB_SPEED: f64 = 3.0;
/// Yaw disturbance amplitude [rad].
const DISTURB_YAW: f64 = 10.0 * std::f64::consts::PI / 180.0;
/// Lateral disturbance amplitude [m].
const DISTURB_LAT: f64 = 1.0;

/// Who drives an episode.
pub enum Pilot<'a> {
    /// The scripted route follower.
    Expert,
    /// A prediction source executed under the given fusion mode.
    Model {
        predictor: &'a mut dyn Predictor,
        mode: FusionMode,
    },
}

impl Pilot<'_> {
    fn label(&self) -> String {
        match self {
            Pilot::Expert => "expert".into(),
            Pilot::Model { mode, .. } => mode.to_string(),
        }
    }

    fn run(
        &mut self,
        map: &PreparedMap,
        route: &Route,
        cfg: &RunConfig,
        opts: &EpisodeOptions,
    ) -> Result<EpisodeLog> {
        match self {
            Pilot::Expert => run_expert_episode(map, route, cfg, opts),
            Pilot::Model { predictor, mode } => {
                let opts = EpisodeOptions {
                    mode: *mode,
                    ..opts.clone()
                };
                run_episode(map, route, &mut **predictor, cfg, &opts)
            }
        }
    }
}

/// One benchmark episode, flattened for CSV emission.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    /// Scenario label, e.g. `lane_cw` or `disturb_turn_left`.
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub collisions: usize,
    pub interventions: usize,
    pub gnss_losses: usize,
    /// Fraction of the route covered, in [0, 1].
    pub completion: f64,
    /// Task success flag as 0/1 (recovery for disturbance, arrival
    /// otherwise).
    pub success: f64,
    pub final_s: f64,
    pub max_speed: f64,
}

/// Pass flag for one junction traversal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionRow {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub node: usize,
    /// Turn side: `left`, `right` or `straight`.
    pub side: String,
    /// Corner angle [deg], positive left.
    pub angle_deg: f64,
    /// Junction arc position on the route [m].
    pub s: f64,
    /// 1 when the whole steering window completed without intervention.
    pub passed: f64,
}

/// Complete result of one benchmark task under one mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    /// Task kind: `lane_stable`, `disturbance` or `navigation`.
    pub task: String,
    pub mode: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub episodes: Vec<EpisodeRow>,
    pub intersections: Vec<IntersectionRow>,
    /// Means over episodes plus task-specific success rates.
    pub aggregates: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl BenchmarkReport {
    fn new(task: &str, mode: String, cfg: &RunConfig) -> BenchmarkReport {
        BenchmarkReport {
            version: REPORT_VERSION,
            task: task.into(),
            mode,
            config_hash: cfg.config_hash(),
            seeds: Vec::new(),
            episodes: Vec::new(),
            intersections: Vec::new(),
            aggregates: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Computes the aggregate map from the per-episode rows.
    fn finalize(&mut self) {
        let n = self.episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeRow) -> f64| -> f64 {
            if self.episodes.is_empty() {
                0.0
            } else {
                self.episodes.iter().map(|r| f(r)).sum::<f64>() / n
            }
        };
        self.aggregates
            .insert("collisions_mean".into(), mean(&|r| r.collisions as f64));
        self.aggregates.insert(
            "interventions_mean".into(),
            mean(&|r| r.interventions as f64),
        );
        self.aggregates
            .insert("gnss_losses_mean".into(), mean(&|r| r.gnss_losses as f64));
        self.aggregates
            .insert("completion_mean".into(), mean(&|r| r.completion));
        self.aggregates
            .insert("success_rate".into(), mean(&|r| r.success));
        // Disruption events per episode: collisions and interventions, the
        // red-dot analogue. Position-fix dropouts are tracked separately.
        self.aggregates.insert(
            "events_mean".into(),
            mean(&|r| (r.collisions + r.interventions) as f64),
        );
        let mut classes: Vec<String> = self
            .episodes
            .iter()
            .map(|r| r.scenario.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if classes.len() > 1 {
            for class in classes.drain(..) {
                let rows: Vec<&EpisodeRow> = self
                    .episodes
                    .iter()
                    .filter(|r| r.scenario == class)
                    .collect();
                let rate = rows.iter().map(|r| r.success).sum::<f64>() / rows.len() as f64;
                self.aggregates.insert(format!("success_{class}"), rate);
            }
        }
        if !self.intersections.is_empty() {
            let rate = |rows: &[&IntersectionRow]| -> f64 {
                rows.iter().map(|r| r.passed).sum::<f64>() / rows.len() as f64
            };
            let all: Vec<&IntersectionRow> = self.intersections.iter().collect();
            self.aggregates.insert("pass_rate".into(), rate(&all));
            for side in ["left", "right", "straight"] {
                let rows: Vec<&IntersectionRow> = self
                    .intersections
                    .iter()
                    .filter(|r| r.side == side)
                    .collect();
                if !rows.is_empty() {
                    self.aggregates.insert(format!("pass_{side}"), rate(&rows));
                }
            }
        }
    }

    /// Verifies that every aggregate equals the mean it claims to be.
    pub fn check_aggregates(&self) -> Result<()> {
        let mut recomputed = self.clone();
        recomputed.aggregates.clear();
        recomputed.finalize();
        for (key, want) in &recomputed.aggregates {
            let got = self.aggregates.get(key).copied().unwrap_or(f64::NAN);
            if (got - want).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "aggregate {key}: stored {got}, recomputed {want}"
                )));
            }
        }
        for rate in ["success_rate", "pass_rate"] {
            if let Some(v) = self.aggregates.get(rate) {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Domain(format!("{rate} {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

fn row_from_log(
    scenario: &str,
    mode: &str,
    seed: u64,
    log: &EpisodeLog,
    success: bool,
) -> EpisodeRow {
    EpisodeRow {
        scenario: scenario.into(),
        mode: mode.into(),
        seed,
        collisions: log.collisions,
        interventions: log.interventions,
        gnss_losses: log.gnss_losses,
        completion: log.completion,
        success: if success { 1.0 } else { 0.0 },
        final_s: log.final_s,
        max_speed: log.max_speed,
    }
}

/// Lane keeping: full-length runs over the loop in both directions, one
/// episode per seed and direction. Success means arriving (completion ≥ 0.9)
/// without a safety stop.
pub fn run_lane_stable(
    map: &PreparedMap,
    routes: &[(&str, &Route)],
    pilot: &mut Pilot,
    cfg: &RunConfig,
    gnss_failure_prob: f64,
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    for (name, route) in routes {
        if route.len() < 1000.0 {
            return Err(Error::Config(format!(
                "lane route {name} is {:.0} m; 1000 m required",
                route.len()
            )));
        }
    }
    let mut report = BenchmarkReport::new("lane_stable", pilot.label(), cfg);
    report.seeds = seeds.to_vec();
    for &seed in seeds {
        for (name, route) in routes {
            let mut opts =
                EpisodeOptions::standard(cfg.deploy.mode, cfg.bench.lane_episode_s, seed);
            opts.gnss_failure_prob = gnss_failure_prob;
            opts.record_track = false;
            let log = pilot.run(map, route, cfg, &opts)?;
            let success = !log.failed && log.completion >= 0.9;
            report
                .episodes
                .push(row_from_log(&format!("lane_{name}"), &report.mode, seed, &log, success));
        }
    }
    report.finalize();
    Ok(report)
}

/// Scenario class of a disturbance site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnClass {
    Straight,
    TurnLeft,
    TurnRight,
}

impl TurnClass {
    pub fn label(self) -> &'static str {
        match self {
            TurnClass::Straight => "straight",
            TurnClass::TurnLeft => "turn_left",
            TurnClass::TurnRight => "turn_right",
        }
    }
}

/// A place to start perturbed trials: the approach to a junction of the
/// wanted turn side, or open road for the straight class.
#[derive(Debug, Clone, Copy)]
pub struct DisturbanceSite {
    pub class: TurnClass,
    /// Index into the route list the site was found on.
    pub route: usize,
    /// Start arc position [m].
    pub s: f64,
}

/// Finds one site per class across `routes`: turn sites 40 m before a
/// junction of the matching side, the straight site on open road at least
/// 100 m from any junction.
pub fn find_disturbance_sites(routes: &[Route]) -> Result<Vec<DisturbanceSite>> {
    let mut sites = Vec::new();
    let mut have = [false; 3];
    for (ri, route) in routes.iter().enumerate() {
        for ev in &route.events {
            let class = if ev.dir > 0.0 {
                TurnClass::TurnLeft
            } else if ev.dir < 0.0 {
                TurnClass::TurnRight
            } else {
                continue;
            };
            let idx = if class == TurnClass::TurnLeft { 1 } else { 2 };
            let s = ev.s - 40.0;
            if !have[idx] && s > 30.0 {
                have[idx] = true;
                sites.push(DisturbanceSite {
                    class,
                    route: ri,
                    s,
                });
            }
        }
        if !have[0] {
            // Open road: a point with no junction within 100 m either way
            // and at least 200 m of route left to drive.
            let mut s = 60.0;
            while s + 200.0 < route.len() {
                if route
                    .events
                    .iter()
                    .all(|ev| (ev.s - s).abs() > 100.0)
                {
                    have[0] = true;
                    sites.push(DisturbanceSite {
                        class: TurnClass::Straight,
                        route: ri,
                        s,
                    });
                    break;
                }
                s += 20.0;
            }
        }
    }
    if !(have[0] && have[1] && have[2]) {
        return Err(Error::Config(
            "routes lack a straight stretch, a left turn and a right turn".into(),
        ));
    }
    sites.sort_by_key(|s| s.class.label());
    Ok(sites)
}

/// Whether the track holds a safe window: lateral and heading inside the
/// configured limits for `success_hold_s` consecutive seconds.
fn recovered(log: &EpisodeLog, cfg: &RunConfig) -> bool {
    if log.collisions > 0 || log.interventions > 0 || log.failed {
        return false;
    }
    let hold = (cfg.bench.success_hold_s / cfg.world.dt).round() as usize;
    let head_limit = cfg.bench.success_heading_deg.to_radians();
    let mut run = 0usize;
    for p in &log.track {
        if p.lat_err.abs() <= cfg.bench.success_lat && p.head_err.abs() <= head_limit {
            run += 1;
            if run >= hold {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Disturbance recovery: `n_per_class` trials per scenario class, each from
/// a uniformly drawn yaw/lateral perturbation at the class site.
pub fn run_disturbance(
    map: &PreparedMap,
    routes: &[Route],
    sites: &[DisturbanceSite],
    pilot: &mut Pilot,
    cfg: &RunConfig,
    n_per_class: usize,
    seed0: u64,
) -> Result<BenchmarkReport> {
    let mut report = BenchmarkReport::new("disturbance", pilot.label(), cfg);
    for site in sites {
        for trial in 0..n_per_class {
            let seed = seed0
                .wrapping_add(trial as u64)
                .wrapping_mul(1 + site.class as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let yaw = rng.gen_range(-DISTURB_YAW..=DISTURB_YAW);
            let lat = rng.gen_range(-DISTURB_LAT..=DISTURB_LAT);
            let mut opts =
                EpisodeOptions::standard(cfg.deploy.mode, cfg.bench.disturbance_timeout_s, seed);
            opts.start_s = site.s;
            opts.start_offset = lat;
            opts.start_heading_err = yaw;
            opts.start_speed = DISTURB_SPEED;
            opts.reset_on_intervention = false;
            let log = pilot.run(map, &routes[site.route], cfg, &opts)?;
            let success = recovered(&log, cfg);
            report.seeds.push(seed);
            report.episodes.push(row_from_log(
                &format!("disturb_{}", site.class.label()),
                &report.mode,
                seed,
                &log,
                success,
            ));
        }
    }
    report.finalize();
    Ok(report)
}

/// Picks start/goal routes over the road network until their combined length
/// reaches `total_m`. Every route is at least 1000 m long and passes at
/// least one junction; infeasible pairs are skipped with a note.
pub fn navigation_routes(
    map: &MineMap,
    total_m: f64,
    seed: u64,
) -> Result<(Vec<(String, Route)>, Vec<String>)> {
    let n = map.nodes.len();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let mut notes = Vec::new();
    let mut out: Vec<(String, Route)> = Vec::new();
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut len_sum = 0.0;
    // Small networks may need several passes over the pair list; a capped
    // pass count keeps absurd demands from grinding instead of failing.
    let mut passes = 0;
    'outer: while passes < 32 {
        passes += 1;
        let before = len_sum;
        for &(i, j) in &pairs {
            if len_sum >= total_m {
                break 'outer;
            }
            let route = match plan_route(map, i, j) {
                Ok(r) => r,
                Err(e) => {
                    if passes == 1 {
                        notes.push(format!("pair {i}->{j} skipped: {e}"));
                    }
                    continue;
                }
            };
            if route.len() < 1000.0 || route.events.is_empty() {
                continue;
            }
            let repeat = counts.entry((i, j)).or_insert(0usize);
            *repeat += 1;
            let name = if *repeat == 1 {
                format!("{i}->{j}")
            } else {
                format!("{i}->{j}#{repeat}")
            };
            len_sum += route.len();
            out.push((name, route));
        }
        // All pairs consumed; repeat the pass only while it adds length.
        if len_sum >= total_m || len_sum == before {
            break;
        }
    }
    if len_sum < total_m {
        return Err(Error::Config(format!(
            "network offers {len_sum:.0} m of qualifying routes; {total_m:.0} m required"
        )));
    }
    Ok((out, notes))
}

/// Navigation: drives each route end to end and scores every junction
/// traversal. A junction passes when its ±50 m steering window saw no
/// intervention and was fully traversed.
pub fn run_navigation(
    map: &PreparedMap,
    routes: &[(String, Route)],
    pilot: &mut Pilot,
    cfg: &RunConfig,
    seed0: u64,
) -> Result<BenchmarkReport> {
    let mut report = BenchmarkReport::new("navigation", pilot.label(), cfg);
    for (idx, (name, route)) in routes.iter().enumerate() {
        let seed = seed0.wrapping_add(idx as u64);
        // Enough time for the route at half the speed limit, plus slack.
        let limit = route.len() / (cfg.expert.max_speed * 0.5) + 60.0;
        let mut opts = EpisodeOptions::standard(cfg.deploy.mode, limit, seed);
        opts.record_track = false;
        let log = pilot.run(map, route, cfg, &opts)?;
        let success = !log.failed && log.completion >= 0.9;
        report.seeds.push(seed);
        report.episodes.push(row_from_log(
            &format!("nav_{name}"),
            &report.mode,
            seed,
            &log,
            success,
        ));
        for ev in &route.events {
            let reached = log.final_s >= ev.s + INTERSECTION_WINDOW;
            let clean = log
                .events
                .iter()
                .filter(|e| {
                    matches!(e.event, EventKind::Intervention | EventKind::Collision)
                })
                .all(|e| (e.s - ev.s).abs() > INTERSECTION_WINDOW);
            let side = if ev.dir > 0.0 {
                "left"
            } else if ev.dir < 0.0 {
                "right"
            } else {
                "straight"
            };
            report.intersections.push(IntersectionRow {
                scenario: format!("nav_{name}"),
                mode: report.mode.clone(),
                seed,
                node: ev.node,
                side: side.into(),
                angle_deg: ev.angle.to_degrees(),
                s: ev.s,
                passed: if reached && clean { 1.0 } else { 0.0 },
            });
        }
    }
    report.finalize();
    Ok(report)
}

/// One-sided lower confidence bound at `level` for `mean(a) - mean(b)` by
/// independent bootstrap resampling. The gap excludes zero when the bound is
/// positive.
pub fn bootstrap_gap_lower_bound(
    a: &[f64],
    b: &[f64],
    iters: usize,
    level: f64,
    seed: u64,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
        });
    }
    if !(0.5..1.0).contains(&level) {
        return Err(Error::Config(format!(
            "confidence level {level} outside [0.5, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut gaps = Vec::with_capacity(iters);
    for _ in 0..iters {
        let ra = mean(&(0..a.len()).map(|_| a[rng.gen_range(0..a.len())]).collect::<Vec<_>>());
        let rb = mean(&(0..b.len()).map(|_| b[rng.gen_range(0..b.len())]).collect::<Vec<_>>());
        gaps.push(ra - rb);
    }
    gaps.sort_by(f64::total_cmp);
    Ok(quantile(&gaps, 1.0 - level))
}

/// One-sided lower confidence bound at `level` for the mean of the paired
/// differences `a[i] - b[i]`, by bootstrap resampling of pairs. Use when the
/// two arms share trial conditions index by index (same seeds, same sites);
/// the pairing removes between-trial variance the independent bound keeps.
pub fn bootstrap_paired_gap_lower_bound(
    a: &[f64],
    b: &[f64],
    iters: usize,
    level: f64,
    seed: u64,
) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InsufficientData {
            needed: a.len().max(1),
            got: b.len(),
        });
    }
    if !(0.5..1.0).contains(&level) {
        return Err(Error::Config(format!(
            "confidence level {level} outside [0.5, 1)"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut gaps = Vec::with_capacity(iters);
    for _ in 0..iters {
        let r = (0..diffs.len())
            .map(|_| diffs[rng.gen_range(0..diffs.len())])
            .collect::<Vec<_>>();
        gaps.push(mean(&r));
    }
    gaps.sort_by(f64::total_cmp);
    Ok(quantile(&gaps, 1.0 - level))
}

/// Writes `<task>_<mode>.json`, `<task>_<mode>_episodes.csv` and, when
/// junction rows exist, `<task>_<mode>_intersections.csv` into `dir`.
pub fn emit_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stem = format!("{}_{}", report.task, report.mode);
    let json = serde_json::to_string_pretty(report)?;
    fs::write(dir.join(format!("{stem}.json")), json)?;

    let mut csv = Vec::new();
    writeln!(
        csv,
        "scenario,mode,seed,collisions,interventions,gnss_losses,completion,success,final_s,max_speed"
    )?;
    for r in &report.episodes {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.mode,
            r.seed,
            r.collisions,
            r.interventions,
            r.gnss_losses,
            r.completion,
            r.success,
            r.final_s,
            r.max_speed
        )?;
    }
    fs::write(dir.join(format!("{stem}_episodes.csv")), csv)?;

    if !report.intersections.is_empty() {
        let mut csv = Vec::new();
        writeln!(csv, "scenario,mode,seed,node,side,angle_deg,s,passed")?;
        for r in &report.intersections {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.scenario, r.mode, r.seed, r.node, r.side, r.angle_deg, r.s, r.passed
            )?;
        }
        fs::write(dir.join(format!("{stem}_intersections.csv")), csv)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::route_from_edges;
    use crate::world::build_test_maps;

    fn lane_world() -> (PreparedMap, Route, Route, RunConfig) {
        let (loop_map, _) = build_test_maps().unwrap();
        let cw = route_from_edges(&loop_map, &[(0, true), (1, true)]).unwrap();
        let ccw = route_from_edges(&loop_map, &[(1, false), (0, false)]).unwrap();
        (loop_map.prepare(), cw, ccw, RunConfig::default())
    }

    #[test]
    fn expert_lane_keeping_is_clean_in_both_directions() {
        let (map, cw, ccw, cfg) = lane_world();
        let mut pilot = Pilot::Expert;
        let report = run_lane_stable(
            &map,
            &[("cw", &cw), ("ccw", &ccw)],
            &mut pilot,
            &cfg,
            0.0,
            &[1, 2],
        )
        .unwrap();
        assert_eq!(report.episodes.len(), 4);
        for row in &report.episodes {
            assert_eq!(row.collisions, 0, "{row:?}");
            assert_eq!(row.interventions, 0, "{row:?}");
            assert!(row.completion > 0.99, "{row:?}");
            assert!(row.max_speed <= cfg.expert.max_speed + 0.3);
        }
        assert_eq!(report.aggregates["success_rate"], 1.0);
        assert_eq!(report.aggregates["events_mean"], 0.0);
        report.check_aggregates().unwrap();
    }

    #[test]
    fn disturbance_sites_cover_all_three_classes() {
        let (_, network) = build_test_maps().unwrap();
        let routes = vec![
            plan_route(&network, 8, 9).unwrap(),
            plan_route(&network, 9, 8).unwrap(),
        ];
        let sites = find_disturbance_sites(&routes).unwrap();
        assert_eq!(sites.len(), 3);
        let classes: Vec<&str> = sites.iter().map(|s| s.class.label()).collect();
        assert!(classes.contains(&"straight"));
        assert!(classes.contains(&"turn_left"));
        assert!(classes.contains(&"turn_right"));
        // Straight-only route sets are rejected.
        let (loop_map, _) = build_test_maps().unwrap();
        let lap = route_from_edges(&loop_map, &[(0, true), (1, true)]).unwrap();
        assert!(find_disturbance_sites(&[lap]).is_err());
    }

    #[test]
    fn expert_recovers_from_perturbed_starts() {
        let (_, network) = build_test_maps().unwrap();
        let routes = vec![
            plan_route(&network, 8, 9).unwrap(),
            plan_route(&network, 9, 8).unwrap(),
        ];
        let sites = find_disturbance_sites(&routes).unwrap();
        let map = network.prepare();
        let cfg = RunConfig::default();
        let mut pilot = Pilot::Expert;
        let report =
            run_disturbance(&map, &routes, &sites, &mut pilot, &cfg, 5, 77).unwrap();
        assert_eq!(report.episodes.len(), 15);
        assert!(
            report.aggregates["success_rate"] >= 0.9,
            "expert recovery rate {}",
            report.aggregates["success_rate"]
        );
        for class in ["straight", "turn_left", "turn_right"] {
            assert!(report.aggregates.contains_key(&format!("success_disturb_{class}")));
        }
        report.check_aggregates().unwrap();
    }

    #[test]
    fn zero_perturbation_recovers_trivially() {
        let (_, network) = build_test_maps().unwrap();
        let route = plan_route(&network, 8, 9).unwrap();
        let map = network.prepare();
        let cfg = RunConfig::default();
        let mut opts = EpisodeOptions::standard(FusionMode::Instantaneous, 20.0, 5);
        opts.start_s = 100.0;
        opts.start_speed = DISTURB_SPEED;
        opts.reset_on_intervention = false;
        let log = run_expert_episode(&map, &route, &cfg, &opts).unwrap();
        assert!(recovered(&log, &cfg));
    }

    #[test]
    fn navigation_routes_meet_the_length_contract() {
        let (_, network) = build_test_maps().unwrap();
        let (routes, _notes) = navigation_routes(&network, 11_000.0, 3).unwrap();
        let total: f64 = routes.iter().map(|(_, r)| r.len()).sum();
        assert!(total >= 11_000.0, "total {total}");
        for (name, route) in &routes {
            assert!(route.len() >= 1000.0, "{name} too short");
            assert!(!route.events.is_empty(), "{name} has no junction");
        }
        // Same seed, same selection.
        let (again, _) = navigation_routes(&network, 11_000.0, 3).unwrap();
        let names: Vec<&String> = routes.iter().map(|(n, _)| n).collect();
        let names2: Vec<&String> = again.iter().map(|(n, _)| n).collect();
        assert_eq!(names, names2);
        // An impossible demand is reported, not silently truncated.
        assert!(navigation_routes(&network, 1e9, 3).is_err());
    }

    #[test]
    fn expert_navigation_passes_every_intersection() {
        let (_, network) = build_test_maps().unwrap();
        let (routes, _) = navigation_routes(&network, 11_000.0, 9).unwrap();
        let map = network.prepare();
        let cfg = RunConfig::default();
        let mut pilot = Pilot::Expert;
        let report = run_navigation(&map, &routes, &mut pilot, &cfg, 40).unwrap();
        assert!(!report.intersections.is_empty());
        assert_eq!(report.aggregates["pass_rate"], 1.0, "{:?}", report.aggregates);
        assert_eq!(report.aggregates["success_rate"], 1.0);
        report.check_aggregates().unwrap();
    }

    #[test]
    fn bootstrap_bound_separates_clear_gaps_only() {
        let a = vec![1.0; 40];
        let mut b = vec![0.0; 40];
        let lb = bootstrap_gap_lower_bound(&a, &b, 500, 0.9, 1).unwrap();
        assert!(lb > 0.9, "clear gap bound {lb}");
        // Identical samples: the bound must not exclude zero.
        b = a.clone();
        let lb = bootstrap_gap_lower_bound(&a, &b, 500, 0.9, 1).unwrap();
        assert!(lb <= 0.0, "no-gap bound {lb}");
        // Mixed outcomes with a real difference.
        let a: Vec<f64> = (0..50).map(|i| if i % 10 == 0 { 0.0 } else { 1.0 }).collect();
        let b: Vec<f64> = (0..50).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let lb = bootstrap_gap_lower_bound(&a, &b, 1000, 0.9, 2).unwrap();
        assert!(lb > 0.0, "mixed gap bound {lb}");
        assert!(bootstrap_gap_lower_bound(&[], &b, 10, 0.9, 1).is_err());
    }

    #[test]
    fn paired_bound_uses_within_pair_differences() {
        // Arm a beats arm b on every pair by exactly 0.1 while the pair
        // baselines swing far wider; pairing must still resolve the gap.
        let base: Vec<f64> = (0..60).map(|i| (i % 7) as f64 / 7.0).collect();
        let a: Vec<f64> = base.iter().map(|x| x + 0.1).collect();
        let lb = bootstrap_paired_gap_lower_bound(&a, &base, 500, 0.9, 3).unwrap();
        assert!((lb - 0.1).abs() < 1e-9, "constant-shift bound {lb}");
        // The independent bound on the same data is dominated by the swing.
        let ind = bootstrap_gap_lower_bound(&a, &base, 500, 0.9, 3).unwrap();
        assert!(ind < lb, "independent {ind} vs paired {lb}");
        // Identical arms: zero stays inside.
        let lb = bootstrap_paired_gap_lower_bound(&base, &base, 500, 0.9, 3).unwrap();
        assert!(lb <= 0.0, "no-gap bound {lb}");
        // Noisy pairs with a real mean shift.
        let b: Vec<f64> = (0..60).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let a: Vec<f64> = b.iter().enumerate().map(|(i, x)| if i % 2 == 0 { x + 1.0 } else { *x }).collect();
        let lb = bootstrap_paired_gap_lower_bound(&a, &b, 1000, 0.9, 4).unwrap();
        assert!(lb > 0.0, "shifted pairs bound {lb}");
        // Length mismatch is refused: pairing is positional.
        assert!(bootstrap_paired_gap_lower_bound(&a[..10], &b, 10, 0.9, 1).is_err());
        assert!(bootstrap_paired_gap_lower_bound(&[], &[], 10, 0.9, 1).is_err());
    }

    #[test]
    fn emitted_files_round_trip_with_matching_aggregates() {
        let (map, cw, _, cfg) = lane_world();
        let mut pilot = Pilot::Expert;
        let report =
            run_lane_stable(&map, &[("cw", &cw)], &mut pilot, &cfg, 0.0, &[4, 5, 6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();

        let json = fs::read_to_string(dir.path().join("lane_stable_expert.json")).unwrap();
        let back: BenchmarkReport = serde_json::from_str(&json).unwrap();
        back.check_aggregates().unwrap();
        assert_eq!(back.config_hash, cfg.config_hash());
        assert_eq!(back.seeds, vec![4, 5, 6]);

        // Recompute a mean from the CSV and compare against the aggregate.
        let csv =
            fs::read_to_string(dir.path().join("lane_stable_expert_episodes.csv")).unwrap();
        let mut completions = Vec::new();
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            completions.push(cols[6].parse::<f64>().unwrap());
        }
        let mean = completions.iter().sum::<f64>() / completions.len() as f64;
        assert!((mean - back.aggregates["completion_mean"]).abs() < 1e-9);
    }

    #[test]
    fn empty_reports_emit_valid_files() {
        let cfg = RunConfig::default();
        let mut report = BenchmarkReport::new("lane_stable", "expert".into(), &cfg);
        report.finalize();
        report.check_aggregates().unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("lane_stable_expert_episodes.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1, "header only");
    }
}
