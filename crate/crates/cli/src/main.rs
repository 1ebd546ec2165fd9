//! Pipeline driver: maps, demonstrations, filtering, training, closed-loop
//! evaluation, benchmarks and gradient verification, all from one config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use minehaul_core::bench::{
    bootstrap_paired_gap_lower_bound, emit_report, find_disturbance_sites, navigation_routes,
    run_disturbance, run_lane_stable, run_navigation, BenchmarkReport, DisturbanceSite, Pilot,
};
use minehaul_core::config::FusionMode;
use minehaul_core::data::{
    build_dataset, filter_bias, fit_thresholds, load_demos, record_plan, save_demos, save_dataset,
    DatasetManifest,
};
use minehaul_core::deploy::{
    run_episode, write_events_jsonl, write_trajectory_csv, EpisodeLog, EpisodeOptions,
    PlannerPredictor,
};
use minehaul_core::expert::{plan_route, route_from_edges, Route};
use minehaul_core::model::gradient_battery;
use minehaul_core::world::{build_test_maps, PreparedMap};
use minehaul_core::{Error, Result, RunConfig};

/// Gate for the gradient battery [relative error].
const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "minehaul", version, about = "Haul-road simulation and learning pipeline")]
struct Cli {
    /// Configuration file (TOML); built-in defaults apply when omitted.
    /// `MINEHAUL_*` environment variables override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configured training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the benchmark maps as JSON.
    MapGen {
        #[arg(long, default_value = "maps")]
        out: PathBuf,
    },
    /// Record expert demonstrations over the standard route plan.
    Collect {
        #[arg(long, default_value = "demos")]
        out: PathBuf,
        /// Cap each episode at this many simulated seconds.
        #[arg(long)]
        limit_s: Option<f64>,
    },
    /// Fit command-bias thresholds; write the filtered set and a report.
    Filter {
        #[arg(long, default_value = "demos")]
        demos: PathBuf,
        #[arg(long, default_value = "filtered")]
        out: PathBuf,
    },
    /// Build the dataset from demonstrations and train the planner.
    Train {
        #[arg(long, default_value = "demos")]
        demos: PathBuf,
        #[arg(long, default_value = "train")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Gradient worker threads; 0 keeps the single-threaded path.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run one closed-loop episode on the haul loop; write logs.
    Eval {
        #[arg(long, default_value = "train/final.ckpt")]
        checkpoint: PathBuf,
        /// Fusion mode: instantaneous, uniform or evidential.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Episode length [s]; defaults to the benchmark lane budget.
        #[arg(long)]
        duration: Option<f64>,
        /// GNSS dropout probability for this run.
        #[arg(long)]
        gnss: Option<f64>,
        /// Accept a checkpoint recorded under a different config hash.
        #[arg(long)]
        force: bool,
    },
    /// Run the benchmark suite; write one report per task and mode.
    Bench {
        #[arg(long, default_value = "train/final.ckpt")]
        checkpoint: PathBuf,
        /// Restrict model runs to one fusion mode (default: all three).
        #[arg(long)]
        mode: Option<String>,
        /// Lane-keeping seeds per direction.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
        /// Parallel report units; 1 runs everything sequentially.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Score the scripted expert only; no checkpoint needed.
        #[arg(long)]
        expert: bool,
        /// Accept a checkpoint recorded under a different config hash.
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference gradient verification; nonzero exit on failure.
    Gradcheck {
        /// Probes per check.
        #[arg(long, default_value_t = 96)]
        probes: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let seed = cfg.train.seed;
    match cli.cmd {
        Cmd::MapGen { out } => map_gen(&cfg, seed, &out),
        Cmd::Collect { out, limit_s } => collect(&cfg, seed, &out, limit_s),
        Cmd::Filter { demos, out } => filter(&cfg, &demos, &out),
        Cmd::Train {
            demos,
            out,
            epochs,
            jobs,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(j) = jobs {
                cfg.train.jobs = j;
            }
            train(&cfg, &demos, &out)
        }
        Cmd::Eval {
            checkpoint,
            mode,
            out,
            duration,
            gnss,
            force,
        } => eval(&cfg, seed, &checkpoint, mode.as_deref(), &out, duration, gnss, force),
        Cmd::Bench {
            checkpoint,
            mode,
            seeds,
            out,
            jobs,
            expert,
            force,
        } => bench(
            &cfg,
            seed,
            &checkpoint,
            mode.as_deref(),
            seeds,
            &out,
            jobs,
            expert,
            force,
        ),
        Cmd::Gradcheck { probes } => gradcheck(probes, seed),
    }
}

/// Writes the resolved configuration next to the artifacts so the run can be
/// replayed with `--config <out>/config.toml`.
fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

fn map_gen(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let (loop_map, network) = build_test_maps()?;
    write_config(cfg, out)?;
    for (file, map) in [("loop.json", &loop_map), ("network.json", &network)] {
        let mut buf = serde_json::to_vec_pretty(map)?;
        buf.push(b'\n');
        fs::write(out.join(file), buf)?;
    }
    let manifest = serde_json::json!({
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "files": ["loop.json", "network.json"],
    });
    fs::write(out.join("manifest.json"), format!("{manifest:#}\n"))?;
    println!("wrote loop.json and network.json to {}", out.display());
    Ok(())
}

fn collect(cfg: &RunConfig, seed: u64, out: &Path, limit_s: Option<f64>) -> Result<()> {
    let episodes = match limit_s {
        None => record_plan(cfg, seed)?,
        Some(cap) => {
            let mut episodes = Vec::new();
            for (i, mut spec) in minehaul_core::data::standard_demo_plan()?.into_iter().enumerate()
            {
                spec.limit_s = Some(cap);
                let frames = minehaul_core::data::record_episode(
                    spec.map,
                    &spec.route,
                    cfg,
                    seed.wrapping_add(i as u64),
                    spec.start_s,
                    spec.start_offset,
                    spec.lead,
                    spec.limit_s,
                )?;
                episodes.push(minehaul_core::data::DemoEpisode {
                    name: spec.name,
                    frames,
                });
            }
            episodes
        }
    };
    save_demos(out, &episodes, seed, &cfg.config_hash())?;
    write_config(cfg, out)?;
    for ep in &episodes {
        println!("{:10} {:6} frames", ep.name, ep.frames.len());
    }
    println!("saved {} episodes to {}", episodes.len(), out.display());
    Ok(())
}

fn filter(cfg: &RunConfig, demos: &Path, out: &Path) -> Result<()> {
    let (episodes, manifest) = load_demos(demos)?;
    let thresholds = fit_thresholds(&episodes, cfg.data.ci)?;
    let (kept, report) = filter_bias(episodes, &thresholds)?;
    save_demos(out, &kept, manifest.seed, &cfg.config_hash())?;
    write_config(cfg, out)?;
    let mut buf = serde_json::to_vec_pretty(&report)?;
    buf.push(b'\n');
    fs::write(out.join("filter_report.json"), buf)?;
    println!(
        "steering bounds [{:.4}, {:.4}], throttle bound {:.4}",
        report.thresholds.steer_low, report.thresholds.steer_up, report.thresholds.throttle_up
    );
    println!(
        "removed {} of {} frames ({:.2}%)",
        report.removed_frames,
        report.total_frames,
        100.0 * report.removed_frac
    );
    Ok(())
}

fn train(cfg: &RunConfig, demos: &Path, out: &Path) -> Result<()> {
    let (episodes, _) = load_demos(demos)?;
    let (samples, filter_report) = build_dataset(&episodes, cfg, cfg.train.seed)?;
    let manifest = DatasetManifest {
        version: 1,
        seed: cfg.train.seed,
        training_hash: cfg.training_hash(),
        k: cfg.data.k_lookahead,
        spacing_m: cfg.data.spacing_m,
        beams: cfg.world.scan.beams,
        aug: cfg.data.aug.clone(),
        filter: filter_report,
        samples: samples.len(),
    };
    save_dataset(&out.join("dataset"), &samples, &manifest)?;
    write_config(cfg, out)?;
    println!("dataset: {} samples", samples.len());
    let report = minehaul_core::model::train(&samples, cfg, out)?;
    println!(
        "trained {} epochs ({} steps, {} params), final train loss {:.4}",
        report.epochs, report.steps, report.param_count, report.final_train_loss
    );
    if let Some(v) = report.final_val_loss {
        println!("validation loss {v:.4}");
    }
    println!("checkpoint {}", report.checkpoint.display());
    Ok(())
}

fn parse_mode(s: &str) -> Result<FusionMode> {
    FusionMode::from_str(s)
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: &RunConfig,
    seed: u64,
    checkpoint: &Path,
    mode: Option<&str>,
    out: &Path,
    duration: Option<f64>,
    gnss: Option<f64>,
    force: bool,
) -> Result<()> {
    let mode = match mode {
        Some(s) => parse_mode(s)?,
        None => cfg.deploy.mode,
    };
    let mut predictor = PlannerPredictor::from_checkpoint(checkpoint, cfg, force)?;
    let (loop_map, _) = build_test_maps()?;
    let route = route_from_edges(&loop_map, &[(0, true), (1, true)])?;
    let prepared = loop_map.prepare();
    let mut opts =
        EpisodeOptions::standard(mode, duration.unwrap_or(cfg.bench.lane_episode_s), seed);
    opts.gnss_failure_prob = gnss.unwrap_or(0.0);
    let log = run_episode(&prepared, &route, &mut predictor, cfg, &opts)?;

    write_config(cfg, out)?;
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &log.track)?;
    fs::write(out.join("trajectory.csv"), csv)?;
    let mut ev = Vec::new();
    write_events_jsonl(&mut ev, &log.events)?;
    fs::write(out.join("events.jsonl"), ev)?;
    fs::write(out.join("summary.json"), format!("{:#}\n", summary_json(cfg, seed, mode, &log)))?;
    println!(
        "mode {mode}: completion {:.1}%, {} interventions, {} collisions, {} gnss losses",
        100.0 * log.completion,
        log.interventions,
        log.collisions,
        log.gnss_losses
    );
    println!("logs in {}", out.display());
    if log.failed {
        println!("episode flagged failed (safety stop)");
    }
    Ok(())
}

fn summary_json(
    cfg: &RunConfig,
    seed: u64,
    mode: FusionMode,
    log: &EpisodeLog,
) -> serde_json::Value {
    serde_json::json!({
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "mode": mode.to_string(),
        "completion": log.completion,
        "final_s": log.final_s,
        "collisions": log.collisions,
        "interventions": log.interventions,
        "gnss_losses": log.gnss_losses,
        "max_speed": log.max_speed,
        "failed": log.failed,
        "inferences": log.inferences,
        "steps": log.steps,
    })
}

/// Everything a benchmark unit needs, shared read-only across workers.
struct BenchWorld {
    loop_map: PreparedMap,
    lane_cw: Route,
    lane_ccw: Route,
    net_map: PreparedMap,
    disturb_routes: Vec<Route>,
    sites: Vec<DisturbanceSite>,
    nav_routes: Vec<(String, Route)>,
    nav_notes: Vec<String>,
}

impl BenchWorld {
    fn build(seed: u64) -> Result<BenchWorld> {
        let (loop_map, network) = build_test_maps()?;
        let lane_cw = route_from_edges(&loop_map, &[(0, true), (1, true)])?;
        let lane_ccw = route_from_edges(&loop_map, &[(1, false), (0, false)])?;
        let disturb_routes = vec![plan_route(&network, 8, 9)?, plan_route(&network, 9, 8)?];
        let sites = find_disturbance_sites(&disturb_routes)?;
        let (nav_routes, nav_notes) = navigation_routes(&network, 11_000.0, seed)?;
        Ok(BenchWorld {
            loop_map: loop_map.prepare(),
            lane_cw,
            lane_ccw,
            net_map: network.prepare(),
            disturb_routes,
            sites,
            nav_routes,
            nav_notes,
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum PilotKind {
    Expert,
    Model(FusionMode),
}

#[derive(Clone, Copy)]
enum TaskKind {
    /// Lane keeping under the given GNSS dropout probability.
    Lane(f64),
    Disturbance,
    Navigation,
}

struct BenchUnit {
    task: TaskKind,
    pilot: PilotKind,
}

fn run_unit(
    unit: &BenchUnit,
    world: &BenchWorld,
    cfg: &RunConfig,
    checkpoint: &Path,
    force: bool,
    lane_seeds: &[u64],
    seed0: u64,
) -> Result<BenchmarkReport> {
    let mut predictor;
    let mut pilot = match unit.pilot {
        PilotKind::Expert => Pilot::Expert,
        PilotKind::Model(mode) => {
            predictor = PlannerPredictor::from_checkpoint(checkpoint, cfg, force)?;
            Pilot::Model {
                predictor: &mut predictor,
                mode,
            }
        }
    };
    let mut report = match unit.task {
        TaskKind::Lane(gnss) => {
            let mut r = run_lane_stable(
                &world.loop_map,
                &[("cw", &world.lane_cw), ("ccw", &world.lane_ccw)],
                &mut pilot,
                cfg,
                gnss,
                lane_seeds,
            )?;
            if gnss > 0.0 {
                r.task = "lane_stable_gnss".into();
                r.notes.push(format!("gnss_failure_prob={gnss}"));
            }
            r
        }
        TaskKind::Disturbance => run_disturbance(
            &world.net_map,
            &world.disturb_routes,
            &world.sites,
            &mut pilot,
            cfg,
            cfg.bench.disturbance_per_class,
            seed0,
        )?,
        TaskKind::Navigation => {
            let mut r = run_navigation(&world.net_map, &world.nav_routes, &mut pilot, cfg, seed0)?;
            r.notes.extend(world.nav_notes.iter().cloned());
            r
        }
    };
    report.check_aggregates()?;
    if let PilotKind::Model(_) = unit.pilot {
        report.notes.push(format!("checkpoint={}", checkpoint.display()));
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn bench(
    cfg: &RunConfig,
    seed: u64,
    checkpoint: &Path,
    mode: Option<&str>,
    seeds: Option<usize>,
    out: &Path,
    jobs: usize,
    expert_only: bool,
    force: bool,
) -> Result<()> {
    let modes: Vec<FusionMode> = match (expert_only, mode) {
        (true, _) => Vec::new(),
        (false, Some(s)) => vec![parse_mode(s)?],
        (false, None) => vec![
            FusionMode::Instantaneous,
            FusionMode::Uniform,
            FusionMode::Evidential,
        ],
    };
    if !modes.is_empty() && !checkpoint.exists() {
        return Err(Error::MissingInput(format!(
            "checkpoint {} (train first or pass --expert)",
            checkpoint.display()
        )));
    }
    let n_seeds = seeds.unwrap_or(cfg.bench.lane_seeds);
    let lane_seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let world = BenchWorld::build(seed)?;

    let mut units = Vec::new();
    for task in [TaskKind::Lane(0.0), TaskKind::Disturbance, TaskKind::Navigation] {
        units.push(BenchUnit {
            task,
            pilot: PilotKind::Expert,
        });
        for &m in &modes {
            units.push(BenchUnit {
                task,
                pilot: PilotKind::Model(m),
            });
        }
    }
    for &m in &modes {
        units.push(BenchUnit {
            task: TaskKind::Lane(cfg.world.gnss_failure_prob),
            pilot: PilotKind::Model(m),
        });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let reports: Vec<BenchmarkReport> = pool.install(|| {
        use rayon::prelude::*;
        units
            .par_iter()
            .map(|u| run_unit(u, &world, cfg, checkpoint, force, &lane_seeds, seed))
            .collect::<Result<Vec<_>>>()
    })?;

    write_config(cfg, out)?;
    for r in &reports {
        emit_report(r, out)?;
        println!(
            "{:18} {:14} {:3} episodes  success {:.3}  interventions/ep {:.2}",
            r.task,
            r.mode,
            r.episodes.len(),
            r.aggregates.get("success_rate").copied().unwrap_or(0.0),
            r.aggregates.get("interventions_mean").copied().unwrap_or(0.0)
        );
    }
    println!("reports in {}", out.display());
    check_orderings(cfg, seed, &reports)
}

/// The qualitative mode orderings, gated only when all three modes ran.
fn check_orderings(cfg: &RunConfig, seed: u64, reports: &[BenchmarkReport]) -> Result<()> {
    let find = |task: &str, mode: &str| -> Option<&BenchmarkReport> {
        reports.iter().find(|r| r.task == task && r.mode == mode)
    };
    let lane: Vec<&BenchmarkReport> = ["instantaneous", "uniform", "evidential"]
        .iter()
        .filter_map(|m| find("lane_stable", m))
        .collect();
    let dist: Vec<&BenchmarkReport> = ["instantaneous", "uniform", "evidential"]
        .iter()
        .filter_map(|m| find("disturbance", m))
        .collect();
    if lane.len() < 3 && dist.len() < 3 {
        return Ok(());
    }
    let mut violations = Vec::new();
    if let [inst, unif, evid] = lane[..] {
        let iv = |r: &BenchmarkReport| r.aggregates["interventions_mean"];
        if !(iv(evid) <= iv(unif) && iv(unif) <= iv(inst)) {
            violations.push(format!(
                "lane interventions/ep instantaneous {:.3}, uniform {:.3}, evidential {:.3}",
                iv(inst),
                iv(unif),
                iv(evid)
            ));
        }
    }
    if let [inst, unif, evid] = dist[..] {
        let sr = |r: &BenchmarkReport| r.aggregates["success_rate"];
        if !(sr(evid) >= sr(unif) && sr(unif) > sr(inst)) {
            violations.push(format!(
                "disturbance success instantaneous {:.3}, uniform {:.3}, evidential {:.3}",
                sr(inst),
                sr(unif),
                sr(evid)
            ));
        }
        // Trials are matched across modes (same sites, same seeds, same
        // perturbations), so the gap is resolved on within-trial differences.
        let successes =
            |r: &BenchmarkReport| r.episodes.iter().map(|e| e.success).collect::<Vec<f64>>();
        let lb = bootstrap_paired_gap_lower_bound(
            &successes(evid),
            &successes(inst),
            cfg.bench.bootstrap_iters,
            cfg.bench.ci_level,
            seed,
        )?;
        if lb <= 0.0 {
            violations.push(format!(
                "evidential-vs-instantaneous recovery gap bound {lb:.4} does not exclude zero"
            ));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::BenchThreshold(violations.join("; ")))
    }
}

fn gradcheck(probes: usize, seed: u64) -> Result<()> {
    let started = std::time::Instant::now();
    let reports = gradient_battery(probes, seed)?;
    let mut failures = Vec::new();
    for (name, r) in &reports {
        let ok = r.max_rel_error < GRAD_TOL;
        println!(
            "{:26} {:4} probes  max rel {:.3e}  {}",
            name,
            r.probes,
            r.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failures.push(format!("{name} ({:.3e})", r.max_rel_error));
        }
    }
    println!(
        "{} checks in {:.2} s",
        reports.len(),
        started.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failures.join(", ")))
    }
}
