//! The planner network: scan and measurement encoders feeding a shared
//! trunk, command-selected evidential branches over the lookahead window,
//! and an auxiliary speed head.

use rand::Rng;

use super::features::{LateralHlc, LongitudinalHlc, MEAS_DIM};
use crate::config::RunConfig;
use crate::loss::{Evidential, FrameGrads, COMMAND_COUNT};
use crate::nn::{sigmoid, softplus, Activation, GradBuffer, LayerSpec, MlpCache, ParamId, Tensor};
use crate::{Error, Mlp, ParamStore, Real, Result};

/// Additive floor keeping squashed evidence parameters strictly inside their
/// domain.
const EVIDENCE_FLOOR: f64 = 1e-6;

/// Longitudinal command channels fed by one branch: acc, dec_e, dec_m.
const LON_CHANNELS: usize = COMMAND_COUNT - 1;

/// One network input: encoded scan block, measurement vector and the branch
/// selectors.
#[derive(Debug, Clone, Copy)]
pub struct PlannerInput<'a> {
    pub scan: &'a [Real],
    pub meas: &'a [Real],
    pub lat: LateralHlc,
    pub lon: LongitudinalHlc,
}

/// Planner network over parameters owned by an external [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Planner {
    scan_enc: Mlp,
    meas_enc: Mlp,
    trunk: Mlp,
    /// One steering branch per lateral command.
    lat_branches: Vec<Mlp>,
    /// One throttle/brake branch per longitudinal command.
    lon_branches: Vec<Mlp>,
    speed_head: Mlp,
    log_sigma: ParamId,
    scan_dim: usize,
    k: usize,
}

/// Forward-pass cache reused by [`Planner::backward`].
#[derive(Debug, Clone, Default)]
pub struct PlannerCache {
    scan: MlpCache<Real>,
    meas: MlpCache<Real>,
    trunk: MlpCache<Real>,
    lat: MlpCache<Real>,
    lon: MlpCache<Real>,
    speed: MlpCache<Real>,
    /// Branch indices the cached pass went through.
    lat_idx: usize,
    lon_idx: usize,
    /// Raw branch outputs before squashing.
    lat_raw: Vec<Real>,
    lon_raw: Vec<Real>,
}

/// One forward pass: squashed evidential commands plus the speed estimate.
#[derive(Debug, Clone)]
pub struct PlannerOutput {
    /// Channel-major: entry `t * k + i` is lookahead step `i` of channel `t`
    /// in the order str, acc, dec_e, dec_m.
    pub evidential: Vec<Evidential<Real>>,
    /// Normalized speed estimate.
    pub speed: Real,
}

/// Dense+ReLU stack ending in a ReLU feature layer.
fn encoder_specs(input: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut dim = input;
    for &h in hidden {
        specs.push(LayerSpec::Dense {
            input: dim,
            output: h,
        });
        specs.push(LayerSpec::Activation(Activation::Relu));
        dim = h;
    }
    specs
}

/// Dense+ReLU stack ending in a linear output layer.
fn head_specs(input: usize, hidden: &[usize], output: usize) -> Vec<LayerSpec> {
    let mut specs = encoder_specs(input, hidden);
    let dim = hidden.last().copied().unwrap_or(input);
    specs.push(LayerSpec::Dense {
        input: dim,
        output,
    });
    specs
}

impl Planner {
    /// Builds the network for `cfg`, registering all parameters in `store` in
    /// a fixed order. The same seed yields bit-identical initial weights.
    pub fn new(cfg: &RunConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Planner> {
        let m = &cfg.model;
        if m.scan_hidden.is_empty() || m.meas_hidden.is_empty() || m.trunk_hidden.is_empty() {
            return Err(Error::Config(
                "scan, measurement and trunk stacks need at least one hidden layer".into(),
            ));
        }
        // Range block plus the validity mask channel.
        let scan_dim = 2 * cfg.world.scan.beams;
        let k = cfg.data.k_lookahead;
        let scan_enc = Mlp::new(store, "scan", &encoder_specs(scan_dim, &m.scan_hidden), rng)?;
        let meas_enc = Mlp::new(store, "meas", &encoder_specs(MEAS_DIM, &m.meas_hidden), rng)?;
        let trunk_in = scan_enc.output_dim() + meas_enc.output_dim();
        let trunk = Mlp::new(store, "trunk", &encoder_specs(trunk_in, &m.trunk_hidden), rng)?;
        let mut lat_branches = Vec::with_capacity(LateralHlc::COUNT);
        for name in ["straight", "turn_left", "turn_right"] {
            lat_branches.push(Mlp::new(
                store,
                &format!("lat.{name}"),
                &head_specs(trunk.output_dim(), &m.branch_hidden, k * 4),
                rng,
            )?);
        }
        let mut lon_branches = Vec::with_capacity(LongitudinalHlc::COUNT);
        for name in ["accelerate", "maintain", "decelerate"] {
            lon_branches.push(Mlp::new(
                store,
                &format!("lon.{name}"),
                &head_specs(trunk.output_dim(), &m.branch_hidden, LON_CHANNELS * k * 4),
                rng,
            )?);
        }
        let speed_head = Mlp::new(
            store,
            "speed",
            &head_specs(trunk.output_dim(), &m.speed_hidden, 1),
            rng,
        )?;
        let mut sigmas = Tensor::zeros(1, COMMAND_COUNT);
        sigmas.fill(cfg.train.init_log_sigma);
        let log_sigma = store.register("log_sigma", sigmas)?;
        Ok(Planner {
            scan_enc,
            meas_enc,
            trunk,
            lat_branches,
            lon_branches,
            speed_head,
            log_sigma,
            scan_dim,
            k,
        })
    }

    /// Lookahead steps per command channel.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Width of the encoded scan block (ranges plus mask).
    pub fn scan_dim(&self) -> usize {
        self.scan_dim
    }

    /// Current per-channel log-variances.
    pub fn log_sigmas(&self, store: &ParamStore) -> [Real; COMMAND_COUNT] {
        let t = store.value(self.log_sigma);
        let mut out = [0.0; COMMAND_COUNT];
        out.copy_from_slice(&t.data);
        out
    }

    /// Maps four raw branch outputs into the evidential domain. Steering
    /// predictions squash to (-1, 1), pedal channels to (0, 1).
    fn squash(channel: usize, raw: &[Real]) -> Evidential<Real> {
        let gamma = if channel == 0 {
            raw[0].tanh()
        } else {
            sigmoid(raw[0])
        };
        Evidential {
            gamma,
            nu: softplus(raw[1]) + EVIDENCE_FLOOR,
            alpha: 1.0 + EVIDENCE_FLOOR + softplus(raw[2]),
            beta: softplus(raw[3]) + EVIDENCE_FLOOR,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &PlannerInput<'_>,
        cache: &mut PlannerCache,
    ) -> Result<PlannerOutput> {
        if x.scan.len() != self.scan_dim {
            return Err(Error::Dimension {
                what: "scan features".into(),
                expected: self.scan_dim,
                got: x.scan.len(),
            });
        }
        if x.meas.len() != MEAS_DIM {
            return Err(Error::Dimension {
                what: "measurement features".into(),
                expected: MEAS_DIM,
                got: x.meas.len(),
            });
        }
        cache.lat_idx = x.lat.index();
        cache.lon_idx = x.lon.index();

        let scan_out = self.scan_enc.forward(store, x.scan, &mut cache.scan).to_vec();
        let meas_out = self.meas_enc.forward(store, x.meas, &mut cache.meas).to_vec();
        let mut cat = scan_out;
        cat.extend_from_slice(&meas_out);
        let trunk_out = self.trunk.forward(store, &cat, &mut cache.trunk);

        let lat_raw = self.lat_branches[cache.lat_idx]
            .forward(store, trunk_out, &mut cache.lat)
            .to_vec();
        let lon_raw = self.lon_branches[cache.lon_idx]
            .forward(store, trunk_out, &mut cache.lon)
            .to_vec();

        let mut evidential = Vec::with_capacity(COMMAND_COUNT * self.k);
        for i in 0..self.k {
            evidential.push(Self::squash(0, &lat_raw[i * 4..i * 4 + 4]));
        }
        for c in 0..LON_CHANNELS {
            for i in 0..self.k {
                let at = (c * self.k + i) * 4;
                evidential.push(Self::squash(1 + c, &lon_raw[at..at + 4]));
            }
        }
        cache.lat_raw = lat_raw;
        cache.lon_raw = lon_raw;
        let speed = self.speed_head.forward(store, trunk_out, &mut cache.speed)[0];
        Ok(PlannerOutput { evidential, speed })
    }

    /// Chain rule from a squashed output back to the four raw entries at
    /// `raw[at..at + 4]`.
    fn squash_grad(
        channel: usize,
        raw: &[Real],
        at: usize,
        ge: &crate::loss::EvidentialGrad<Real>,
        draw: &mut [Real],
    ) {
        let dgamma = if channel == 0 {
            let y = raw[at].tanh();
            1.0 - y * y
        } else {
            let s = sigmoid(raw[at]);
            s * (1.0 - s)
        };
        draw[at] = ge.gamma * dgamma;
        draw[at + 1] = ge.nu * sigmoid(raw[at + 1]);
        draw[at + 2] = ge.alpha * sigmoid(raw[at + 2]);
        draw[at + 3] = ge.beta * sigmoid(raw[at + 3]);
    }

    /// Backprop of [`crate::loss::frame_objective`] gradients through the
    /// squashes, the two selected branches, trunk and encoders. Parameter
    /// gradients accumulate into `buf`; unselected branches receive none.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &PlannerCache,
        g: &FrameGrads<Real>,
        buf: &mut GradBuffer<Real>,
    ) -> Result<()> {
        if g.evidential.len() != COMMAND_COUNT * self.k {
            return Err(Error::Dimension {
                what: "evidential gradients".into(),
                expected: COMMAND_COUNT * self.k,
                got: g.evidential.len(),
            });
        }
        let mut d_trunk = vec![0.0; self.trunk.output_dim()];

        let mut draw = vec![0.0; cache.lat_raw.len()];
        for i in 0..self.k {
            Self::squash_grad(0, &cache.lat_raw, i * 4, &g.evidential[i], &mut draw);
        }
        let dt = self.lat_branches[cache.lat_idx].backward(store, &cache.lat, &draw, buf);
        for (a, b) in d_trunk.iter_mut().zip(&dt) {
            *a += *b;
        }

        let mut draw = vec![0.0; cache.lon_raw.len()];
        for c in 0..LON_CHANNELS {
            for i in 0..self.k {
                let ge = &g.evidential[(1 + c) * self.k + i];
                Self::squash_grad(1 + c, &cache.lon_raw, (c * self.k + i) * 4, ge, &mut draw);
            }
        }
        let dt = self.lon_branches[cache.lon_idx].backward(store, &cache.lon, &draw, buf);
        for (a, b) in d_trunk.iter_mut().zip(&dt) {
            *a += *b;
        }

        let dt = self
            .speed_head
            .backward(store, &cache.speed, &[g.speed], buf);
        for (a, b) in d_trunk.iter_mut().zip(&dt) {
            *a += *b;
        }
        let d_cat = self.trunk.backward(store, &cache.trunk, &d_trunk, buf);
        let split = self.scan_enc.output_dim();
        self.scan_enc.backward(store, &cache.scan, &d_cat[..split], buf);
        self.meas_enc
            .backward(store, &cache.meas, &d_cat[split..], buf);
        for (dst, src) in buf.grad_mut(self.log_sigma).iter_mut().zip(&g.log_sigma) {
            *dst += *src;
        }
        Ok(())
    }
}
