//! Combined per-frame imitation objective: boosted command losses summed over
//! the lookahead window, uncertainty-weighted across the four command
//! channels, plus the auxiliary speed regression term.

use super::evidential::{
    evidence_regularizer_grad, near_zero_boost, nll_grad, Evidential, EvidentialGrad,
};
use crate::config::TrainConfig;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Number of command channels a frame predicts.
pub const COMMAND_COUNT: usize = 4;

/// Channel names in storage order; used for trace columns and diagnostics.
pub const COMMAND_NAMES: [&str; COMMAND_COUNT] = ["str", "acc", "dec_e", "dec_m"];

/// Scalar weights of the per-frame objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveWeights<S> {
    /// Multiplier on the absolute command error.
    pub mae_weight: S,
    /// Multiplier on the absolute speed error.
    pub speed_weight: S,
    /// Width of the near-zero label boost [command units].
    pub boost_sigma: S,
    /// Use the `2 nu + alpha` regularizer variant instead of `2 alpha + nu`.
    pub reg_alt: bool,
}

impl ObjectiveWeights<f64> {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        ObjectiveWeights {
            mae_weight: cfg.mae_weight,
            speed_weight: cfg.speed_weight,
            boost_sigma: cfg.boost_sigma,
            reg_alt: cfg.reg_alt,
        }
    }
}

/// Additive decomposition of the objective; `total` is exactly the sum of the
/// five components.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub mae: S,
    pub nll: S,
    pub reg: S,
    pub log_sigma_term: S,
    pub speed: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn zero() -> Self {
        LossBreakdown {
            total: S::zero(),
            mae: S::zero(),
            nll: S::zero(),
            reg: S::zero(),
            log_sigma_term: S::zero(),
            speed: S::zero(),
        }
    }

    /// Adds `w * other` into self, component-wise.
    pub fn add_scaled(&mut self, other: &Self, w: S) {
        self.total += w * other.total;
        self.mae += w * other.mae;
        self.nll += w * other.nll;
        self.reg += w * other.reg;
        self.log_sigma_term += w * other.log_sigma_term;
        self.speed += w * other.speed;
    }
}

/// Gradients of the frame objective with respect to every network output.
#[derive(Debug, Clone)]
pub struct FrameGrads<S> {
    /// Channel-major: entry `t * k + i` is lookahead step `i` of channel `t`.
    pub evidential: Vec<EvidentialGrad<S>>,
    /// Per-channel log-variance.
    pub log_sigma: [S; COMMAND_COUNT],
    /// Speed head output.
    pub speed: S,
}

/// Sign with `sgn(0) = 0`.
fn sgn<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Evaluates the objective for one frame.
///
/// `preds` and `labels` are channel-major with `k` lookahead steps per
/// channel. Per channel `t` the raw loss is
/// `sum_i boost(y) * (mae_weight |gamma - y| + nll + reg)`; channels combine
/// as `sum_t exp(-s_t)/4 * raw_t + 1/4 sum_t s_t`, and the speed term
/// `speed_weight |v_pred - v|` adds on top.
pub fn frame_objective<S: Scalar>(
    preds: &[Evidential<S>],
    labels: &[S],
    speed_pred: S,
    speed_label: S,
    log_sigma: &[S; COMMAND_COUNT],
    w: &ObjectiveWeights<S>,
) -> Result<(LossBreakdown<S>, FrameGrads<S>)> {
    if labels.len() != preds.len() {
        return Err(Error::Dimension {
            what: "labels vs predictions".into(),
            expected: preds.len(),
            got: labels.len(),
        });
    }
    if preds.is_empty() || preds.len() % COMMAND_COUNT != 0 {
        return Err(Error::Dimension {
            what: "predictions per command channel".into(),
            expected: COMMAND_COUNT,
            got: preds.len(),
        });
    }
    if !speed_pred.is_finite() || !speed_label.is_finite() {
        return Err(Error::Domain("non-finite speed".into()));
    }
    let k = preds.len() / COMMAND_COUNT;
    let quarter = S::one() / S::c(COMMAND_COUNT as f64);

    let mut out = LossBreakdown::zero();
    let mut grads = FrameGrads {
        evidential: vec![EvidentialGrad::zero(); preds.len()],
        log_sigma: [S::zero(); COMMAND_COUNT],
        speed: S::zero(),
    };

    for t in 0..COMMAND_COUNT {
        let s = log_sigma[t];
        if !s.is_finite() {
            return Err(Error::Domain(format!("non-finite log-variance for {}", COMMAND_NAMES[t])));
        }
        let wt = (-s).exp() * quarter;
        let mut raw = S::zero();
        for i in 0..k {
            let idx = t * k + i;
            let p = &preds[idx];
            let y = labels[idx];
            check_finite(y, "label")?;
            let b = near_zero_boost(y, w.boost_sigma);
            let r = p.gamma - y;
            let mae = w.mae_weight * r.abs();
            let (nv, ng) = nll_grad(p, y)?;
            let (rv, rg) = evidence_regularizer_grad(p, y, w.reg_alt);

            raw += b * (mae + nv + rv);
            out.mae += wt * b * mae;
            out.nll += wt * b * nv;
            out.reg += wt * b * rv;

            let g = &mut grads.evidential[idx];
            let scale = wt * b;
            g.gamma = scale * (w.mae_weight * sgn(r) + ng.gamma + rg.gamma);
            g.nu = scale * (ng.nu + rg.nu);
            g.alpha = scale * (ng.alpha + rg.alpha);
            g.beta = scale * (ng.beta + rg.beta);
        }
        out.log_sigma_term += quarter * s;
        grads.log_sigma[t] = quarter - wt * raw;
    }

    let dv = speed_pred - speed_label;
    out.speed = w.speed_weight * dv.abs();
    grads.speed = w.speed_weight * sgn(dv);

    out.total = out.mae + out.nll + out.reg + out.log_sigma_term + out.speed;
    for (v, term) in [
        (out.mae, "mae"),
        (out.nll, "nll"),
        (out.reg, "reg"),
        (out.log_sigma_term, "log_sigma_term"),
        (out.speed, "speed"),
    ] {
        if !v.is_finite() {
            return Err(Error::LossOverflow {
                term: term.into(),
                detail: format!("component evaluated to {v}"),
            });
        }
    }
    Ok((out, grads))
}

fn check_finite<S: Scalar>(v: S, what: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("non-finite {what}: {v}")));
    }
    Ok(())
}
