//! Training loop: pre-encoded features, shuffled mini-batches with a
//! deterministic chunked gradient reduction, ADAM under cosine decay, a CSV
//! loss trace and periodic checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::features::{meas_features, scan_features, LateralHlc, LongitudinalHlc, MEAS_DIM};
use super::planner::{Planner, PlannerCache, PlannerInput};
use crate::config::RunConfig;
use crate::data::TrainingSample;
use crate::loss::{frame_objective, LossBreakdown, ObjectiveWeights, COMMAND_COUNT};
use crate::nn::{cosine_lr, GradBuffer};
use crate::{Adam, Error, ParamStore, Real, Result};

/// Trace file written next to the checkpoints.
const TRACE_FILE: &str = "trace.csv";
/// Checkpoint refreshed after every epoch.
const LATEST_FILE: &str = "latest.ckpt";
/// Checkpoint written once training finishes.
const FINAL_FILE: &str = "final.ckpt";

/// Where a finished run left its artifacts and how it ended.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: u64,
    /// Mean training loss over the final epoch.
    pub final_train_loss: f64,
    /// Mean held-out loss after the final epoch; `None` without a split.
    pub final_val_loss: Option<f64>,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub param_count: usize,
}

/// One sample with its features already encoded.
struct Encoded {
    scan: Vec<Real>,
    meas: [Real; MEAS_DIM],
    lat: LateralHlc,
    lon: LongitudinalHlc,
    labels: Vec<Real>,
    /// Normalized speed target.
    speed: Real,
}

fn encode(samples: &[TrainingSample], cfg: &RunConfig) -> Result<Vec<Encoded>> {
    let want_labels = COMMAND_COUNT * cfg.data.k_lookahead;
    samples
        .iter()
        .map(|s| {
            if s.labels.len() != want_labels {
                return Err(Error::Dimension {
                    what: "training labels".into(),
                    expected: want_labels,
                    got: s.labels.len(),
                });
            }
            Ok(Encoded {
                scan: scan_features(&s.obs.scan, &cfg.world.scan)?,
                meas: meas_features(&s.obs.gnss, s.obs.speed, cfg.data.speed_norm),
                lat: s.obs.lat,
                lon: s.obs.lon,
                labels: s.labels.clone(),
                speed: s.speed_true / cfg.data.speed_norm,
            })
        })
        .collect()
}

/// Loss and gradients for one contiguous chunk, accumulated into `buf`.
fn eval_chunk(
    planner: &Planner,
    store: &ParamStore,
    data: &[Encoded],
    idx: &[usize],
    w: &ObjectiveWeights<Real>,
    buf: Option<&mut GradBuffer<Real>>,
) -> Result<LossBreakdown<Real>> {
    let mut sum = LossBreakdown::zero();
    let mut cache = PlannerCache::default();
    let ls = planner.log_sigmas(store);
    let mut buf = buf;
    for &i in idx {
        let e = &data[i];
        let x = PlannerInput {
            scan: &e.scan,
            meas: &e.meas,
            lat: e.lat,
            lon: e.lon,
        };
        let out = planner.forward(store, &x, &mut cache)?;
        let (bd, fg) = frame_objective(&out.evidential, &e.labels, out.speed, e.speed, &ls, w)?;
        sum.add_scaled(&bd, 1.0);
        if let Some(b) = buf.as_deref_mut() {
            planner.backward(store, &cache, &fg, b)?;
        }
    }
    Ok(sum)
}

fn with_pool<T: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Mean loss over `idx`, forward passes only, chunked and folded in index
/// order.
fn mean_loss(
    planner: &Planner,
    store: &ParamStore,
    data: &[Encoded],
    idx: &[usize],
    w: &ObjectiveWeights<Real>,
    chunk: usize,
    pool: &Option<rayon::ThreadPool>,
) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let sums: Vec<Result<LossBreakdown<Real>>> = with_pool(pool, || {
        idx.par_chunks(chunk)
            .map(|c| eval_chunk(planner, store, data, c, w, None))
            .collect()
    });
    let mut total = 0.0;
    for s in sums {
        total += s?.total;
    }
    Ok(total / idx.len() as f64)
}

/// Full CSV line for one optimizer step; floats print in round-trip form so
/// identical runs write identical bytes.
fn trace_line(
    epoch: usize,
    step: u64,
    bd: &LossBreakdown<Real>,
    lr: f64,
    log_sigma: &[Real; COMMAND_COUNT],
) -> String {
    let sig: Vec<String> = log_sigma
        .iter()
        .map(|s| format!("{}", (s / 2.0).exp()))
        .collect();
    format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        epoch,
        step,
        bd.total,
        bd.mae,
        bd.nll,
        bd.reg,
        bd.log_sigma_term,
        bd.speed,
        lr,
        sig.join(",")
    )
}

/// Trains a fresh planner on `samples`, writing `trace.csv`, a periodic
/// `latest.ckpt` and the terminal `final.ckpt` into `out_dir`.
pub fn train(samples: &[TrainingSample], cfg: &RunConfig, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    fs::create_dir_all(out_dir)?;
    let data = encode(samples, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut store = ParamStore::new();
    let planner = Planner::new(cfg, &mut store, &mut rng)?;

    // Held-out split after a single shuffle of the full index range.
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (data.len() as f64 * cfg.train.val_frac).floor() as usize;
    if n_val >= data.len() {
        return Err(Error::InsufficientData {
            needed: n_val + 1,
            got: data.len(),
        });
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let w = ObjectiveWeights::from_train(&cfg.train);
    let batch = cfg.train.batch_size;
    let chunk = cfg.train.chunk_size;
    let steps_per_epoch = train_idx.len().div_ceil(batch) as u64;
    let total_steps = cfg.train.epochs as u64 * steps_per_epoch;
    let pool = match cfg.train.jobs {
        0 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        ),
    };

    let trace_path = out_dir.join(TRACE_FILE);
    let mut trace = std::io::BufWriter::new(fs::File::create(&trace_path)?);
    writeln!(
        trace,
        "epoch,step,total,mae,nll,reg,log_sigma_term,speed,lr,sigma_str,sigma_acc,sigma_dec_e,sigma_dec_m"
    )?;

    let mut adam = Adam::new();
    let max_chunks = batch.div_ceil(chunk);
    let mut bufs: Vec<GradBuffer<Real>> =
        (0..max_chunks).map(|_| GradBuffer::zeros(&store)).collect();
    let mut last_good: Option<PathBuf> = None;
    let mut step = 0u64;
    let mut epoch_mean = 0.0;

    for epoch in 0..cfg.train.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch_idx in train_idx.chunks(batch) {
            let chunks: Vec<&[usize]> = batch_idx.chunks(chunk).collect();
            let results: Vec<Result<LossBreakdown<Real>>> = with_pool(&pool, || {
                bufs[..chunks.len()]
                    .par_iter_mut()
                    .zip(&chunks)
                    .map(|(buf, c)| {
                        buf.reset();
                        eval_chunk(planner_ref(&planner), &store, &data, c, &w, Some(buf))
                    })
                    .collect()
            });
            let mut bd = LossBreakdown::zero();
            for r in results {
                bd.add_scaled(&r?, 1.0);
            }
            let inv = 1.0 / batch_idx.len() as f64;
            let mut mean = LossBreakdown::zero();
            mean.add_scaled(&bd, inv);
            if !mean.total.is_finite() || mean.total > cfg.train.divergence_loss {
                return Err(diverged(mean.total, epoch, step, &last_good));
            }
            for buf in &bufs[..chunks.len()] {
                if !buf.all_finite() {
                    return Err(diverged(f64::NAN, epoch, step, &last_good));
                }
                store.add_grads(buf);
            }
            store.scale_grads(inv);
            // The horizon ends one step early so the last step runs at zero.
            let lr = cosine_lr(cfg.train.lr, step, total_steps.saturating_sub(1));
            adam.step(&mut store, lr)
                .map_err(|_| diverged(mean.total, epoch, step, &last_good))?;
            step += 1;
            epoch_sum += mean.total;
            let ls = planner.log_sigmas(&store);
            trace.write_all(trace_line(epoch, step, &mean, lr, &ls).as_bytes())?;
        }
        epoch_mean = epoch_sum / steps_per_epoch as f64;
        let meta = CheckpointMeta {
            config: cfg.clone(),
            training_hash: cfg.training_hash(),
            epoch: epoch + 1,
            adam_step: adam.step,
        };
        let latest = out_dir.join(LATEST_FILE);
        save_checkpoint(&latest, &store, &meta)?;
        last_good = Some(latest);
    }
    trace.flush()?;

    let final_val = if val_idx.is_empty() {
        None
    } else {
        Some(mean_loss(&planner, &store, &data, val_idx, &w, chunk, &pool)?)
    };
    let meta = CheckpointMeta {
        config: cfg.clone(),
        training_hash: cfg.training_hash(),
        epoch: cfg.train.epochs,
        adam_step: adam.step,
    };
    let final_path = out_dir.join(FINAL_FILE);
    save_checkpoint(&final_path, &store, &meta)?;
    Ok(TrainReport {
        epochs: cfg.train.epochs,
        steps: step,
        final_train_loss: epoch_mean,
        final_val_loss: final_val,
        checkpoint: final_path,
        trace: trace_path,
        param_count: store.param_count(),
    })
}

/// Shared-reference helper keeping the parallel closure's captures obvious.
fn planner_ref(p: &Planner) -> &Planner {
    p
}

fn diverged(loss: f64, epoch: usize, step: u64, last_good: &Option<PathBuf>) -> Error {
    let fallback = match last_good {
        Some(p) => format!("last good checkpoint: {}", p.display()),
        None => "no checkpoint written yet".to_string(),
    };
    Error::Divergence(format!(
        "batch loss {loss} at epoch {epoch}, step {step}; {fallback}"
    ))
}
