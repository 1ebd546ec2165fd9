//! Run configuration: one TOML file covering world, expert, data, model,
//! training, deployment and benchmark settings, with environment overrides
//! and content hashing for checkpoint compatibility checks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::world::{ScanConfig, TruckParams};
use crate::{Error, Result};

/// How lookahead predictions are combined at deployment time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Use only the freshest prediction for the current position.
    Instantaneous,
    /// Plain average of all buffered predictions for the current position.
    Uniform,
    /// Precision-weighted average using predicted variances.
    Evidential,
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<FusionMode> {
        match s {
            "instantaneous" => Ok(FusionMode::Instantaneous),
            "uniform" => Ok(FusionMode::Uniform),
            "evidential" => Ok(FusionMode::Evidential),
            _ => Err(Error::Config(format!(
                "unknown fusion mode {s:?}; expected instantaneous, uniform or evidential"
            ))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionMode::Instantaneous => "instantaneous",
            FusionMode::Uniform => "uniform",
            FusionMode::Evidential => "evidential",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub truck: TruckParams,
    pub scan: ScanConfig,
    /// Probability that a position fix drops out on any sensor tick.
    pub gnss_failure_prob: f64,
    /// Physics step [s].
    pub dt: f64,
    /// Physics steps per sensing/inference tick.
    pub control_period: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            truck: TruckParams::default(),
            scan: ScanConfig::default(),
            gnss_failure_prob: 0.04,
            dt: 0.02,
            control_period: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Speed limit [m/s].
    pub max_speed: f64,
    /// Comfortable service deceleration used for speed planning [m/s^2].
    pub comfort_decel: f64,
    /// Pursuit lookahead distance = gain * speed, clamped to [min, max] [m].
    pub lookahead_gain: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    /// Proportional throttle gain on speed error.
    pub kp_throttle: f64,
    /// Desired standstill gap to a leading vehicle [m].
    pub target_gap: f64,
    /// Fraction of road width beyond which the expert declares itself lost.
    pub lost_offset_factor: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            max_speed: 5.556,
            comfort_decel: 0.8,
            lookahead_gain: 1.5,
            lookahead_min: 8.0,
            lookahead_max: 25.0,
            kp_throttle: 0.15,
            target_gap: 30.0,
            lost_offset_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    /// Augmented copies generated per kept training sample.
    pub copies: usize,
    /// Range-scaling amplitude; coefficients drawn from [1-scale, 1+scale].
    pub scale: f64,
    /// Maximum scan rotation for yaw augmentation [deg].
    pub yaw_deg: f64,
    /// Steering correction gain per radian of applied yaw.
    pub k_yaw: f64,
    /// Probability that a copy loses its position fix.
    pub gnss_drop: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            copies: 1,
            scale: 0.05,
            yaw_deg: 10.0,
            k_yaw: 1.0,
            gnss_drop: 0.003,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Lookahead steps predicted per command channel (k = 0..K-1).
    pub k_lookahead: usize,
    /// Along-route distance between consecutive lookahead targets [m].
    pub spacing_m: f64,
    /// Confidence level for the command-bias filter.
    pub ci: f64,
    /// Accepted bounds on the removed fraction of frames.
    pub min_removed_frac: f64,
    pub max_removed_frac: f64,
    /// Speed normalization divisor [m/s].
    pub speed_norm: f64,
    pub aug: AugConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            k_lookahead: 5,
            spacing_m: 1.0,
            ci: 0.99,
            min_removed_frac: 0.005,
            max_removed_frac: 0.02,
            speed_norm: 5.556,
            aug: AugConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the scan encoder.
    pub scan_hidden: Vec<usize>,
    /// Hidden widths of the measurement (position + speed) encoder.
    pub meas_hidden: Vec<usize>,
    /// Hidden widths of the shared trunk after feature concatenation.
    pub trunk_hidden: Vec<usize>,
    /// Hidden widths of each command branch.
    pub branch_hidden: Vec<usize>,
    /// Hidden widths of the auxiliary speed head.
    pub speed_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scan_hidden: vec![256, 256],
            meas_hidden: vec![512, 512, 256],
            trunk_hidden: vec![256, 256],
            branch_hidden: vec![128],
            speed_hidden: vec![64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; decays on a half-cosine to zero.
    pub lr: f64,
    pub seed: u64,
    /// Frames per gradient chunk; batches fold chunk results in index
    /// order so results do not depend on worker count.
    pub chunk_size: usize,
    /// Worker threads; zero picks the machine default.
    pub jobs: usize,
    /// Weight on the absolute-error term.
    pub mae_weight: f64,
    /// Weight on the auxiliary speed regression.
    pub speed_weight: f64,
    /// Use the alternate evidence regularizer weighting (2 nu + alpha)
    /// instead of the default (2 alpha + nu).
    pub reg_alt: bool,
    /// Width of the near-zero emphasis bump applied to command targets.
    pub boost_sigma: f64,
    /// Initial per-task log-variance.
    pub init_log_sigma: f64,
    /// Abort training when the batch loss exceeds this.
    pub divergence_loss: f64,
    /// Fraction of frames held out for validation.
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            lr: 2e-4,
            seed: 7,
            chunk_size: 8,
            jobs: 0,
            mae_weight: 1500.0,
            speed_weight: 0.1,
            reg_alt: false,
            boost_sigma: 1.0 / 15.0,
            init_log_sigma: 0.0,
            divergence_loss: 1e9,
            val_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployConfig {
    pub mode: FusionMode,
    /// Along-route bin width for prediction fusion [m].
    pub bin_size: f64,
    /// Maximum retained predictions per bin.
    pub bin_cap: usize,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig {
            mode: FusionMode::Uniform,
            bin_size: 1.0,
            bin_cap: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Independent seeds for the lane-keeping scenario.
    pub lane_seeds: usize,
    /// Lane-keeping episode length [s].
    pub lane_episode_s: f64,
    /// Trials per disturbance class.
    pub disturbance_per_class: usize,
    /// Recovery limits: lateral offset [m] and heading error [deg] that must
    /// hold for `success_hold_s` within the timeout.
    pub success_lat: f64,
    pub success_heading_deg: f64,
    pub success_hold_s: f64,
    pub disturbance_timeout_s: f64,
    /// Bootstrap resamples for success-rate confidence intervals.
    pub bootstrap_iters: usize,
    /// One-sided confidence level for mode comparisons.
    pub ci_level: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lane_seeds: 20,
            // A 1500 m lap at the 20 km/h limit takes ~270 s; leave margin.
            lane_episode_s: 400.0,
            disturbance_per_class: 30,
            success_lat: 0.5,
            success_heading_deg: 10.0,
            success_hold_s: 1.0,
            disturbance_timeout_s: 20.0,
            bootstrap_iters: 1000,
            ci_level: 0.90,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub expert: ExpertConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub deploy: DeployConfig,
    pub bench: BenchConfig,
}

/// Prefix for environment overrides, e.g. `MINEHAUL_TRAIN_EPOCHS=10`.
pub const ENV_PREFIX: &str = "MINEHAUL_";

impl RunConfig {
    /// Loads from TOML (or defaults when `path` is `None`), applies
    /// `MINEHAUL_*` environment overrides, validates.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        let pairs: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        cfg = cfg.with_overrides(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `(NAME, value)` override pairs. Names use the pattern
    /// `MINEHAUL_<PATH>` where `<PATH>` is the upper-cased field path with
    /// underscores, e.g. `MINEHAUL_WORLD_TRUCK_WHEELBASE`.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<RunConfig> {
        if pairs.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self)?;
        for (name, raw) in pairs {
            let path = name
                .strip_prefix(ENV_PREFIX)
                .ok_or_else(|| Error::Config(format!("override {name} lacks prefix")))?
                .to_ascii_lowercase();
            let tokens: Vec<&str> = path.split('_').collect();
            set_path(&mut value, &tokens, raw)
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("override produced invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let w = &self.world;
        if !(w.dt > 0.0 && w.dt <= 0.1) {
            return bad(format!("world.dt {} outside (0, 0.1]", w.dt));
        }
        if w.control_period == 0 {
            return bad("world.control_period must be at least 1".into());
        }
        if !(0.0..1.0).contains(&w.gnss_failure_prob) {
            return bad(format!("world.gnss_failure_prob {}", w.gnss_failure_prob));
        }
        w.scan.validate()?;
        let e = &self.expert;
        if e.max_speed <= 0.0 || e.comfort_decel <= 0.0 || e.kp_throttle <= 0.0 {
            return bad("expert gains must be positive".into());
        }
        if !(e.lookahead_min > 0.0 && e.lookahead_min <= e.lookahead_max) {
            return bad("expert lookahead bounds out of order".into());
        }
        if !(e.lost_offset_factor > 0.0) || e.target_gap <= 0.0 {
            return bad("expert lost_offset_factor/target_gap must be positive".into());
        }
        let d = &self.data;
        if d.k_lookahead == 0 {
            return bad("data.k_lookahead must be at least 1".into());
        }
        if d.spacing_m <= 0.0 {
            return bad(format!("data.spacing_m {} must be positive", d.spacing_m));
        }
        if !(0.9 < d.ci && d.ci < 1.0) {
            return bad(format!("data.ci {} outside (0.9, 1)", d.ci));
        }
        if !(0.0 <= d.min_removed_frac && d.min_removed_frac <= d.max_removed_frac) {
            return bad("data removed-fraction bounds out of order".into());
        }
        if d.speed_norm <= 0.0 {
            return bad("data.speed_norm must be positive".into());
        }
        let a = &d.aug;
        if !(0.0..=0.5).contains(&a.scale) {
            return bad(format!("data.aug.scale {} outside [0, 0.5]", a.scale));
        }
        if !(0.0..90.0).contains(&a.yaw_deg) {
            return bad(format!("data.aug.yaw_deg {} outside [0, 90)", a.yaw_deg));
        }
        if a.k_yaw < 0.0 {
            return bad("data.aug.k_yaw must be non-negative".into());
        }
        if !(0.0..1.0).contains(&a.gnss_drop) {
            return bad(format!("data.aug.gnss_drop {} outside [0, 1)", a.gnss_drop));
        }
        let m = &self.model;
        for (name, widths) in [
            ("scan_hidden", &m.scan_hidden),
            ("meas_hidden", &m.meas_hidden),
            ("trunk_hidden", &m.trunk_hidden),
        ] {
            if widths.is_empty() || widths.iter().any(|&w| w == 0) {
                return bad(format!("model.{name} must be non-empty positive widths"));
            }
        }
        for (name, widths) in [
            ("branch_hidden", &m.branch_hidden),
            ("speed_hidden", &m.speed_hidden),
        ] {
            if widths.iter().any(|&w| w == 0) {
                return bad(format!("model.{name} contains a zero width"));
            }
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.chunk_size == 0 {
            return bad("train epochs/batch_size/chunk_size must be at least 1".into());
        }
        if t.batch_size % t.chunk_size != 0 {
            return bad(format!(
                "train.batch_size {} must be a multiple of chunk_size {}",
                t.batch_size, t.chunk_size
            ));
        }
        if t.lr <= 0.0 || t.boost_sigma <= 0.0 || t.mae_weight < 0.0 || t.speed_weight < 0.0 {
            return bad("train rates/weights out of range".into());
        }
        if !(0.0..0.9).contains(&t.val_frac) {
            return bad(format!("train.val_frac {} outside [0, 0.9)", t.val_frac));
        }
        if self.deploy.bin_size <= 0.0 || self.deploy.bin_cap == 0 {
            return bad("deploy.bin_size/bin_cap must be positive".into());
        }
        let b = &self.bench;
        if b.lane_seeds == 0 || b.disturbance_per_class == 0 || b.bootstrap_iters == 0 {
            return bad("bench trial counts must be at least 1".into());
        }
        if b.success_lat <= 0.0
            || b.success_heading_deg <= 0.0
            || b.success_hold_s <= 0.0
            || b.disturbance_timeout_s <= b.success_hold_s
            || b.lane_episode_s <= 0.0
        {
            return bad("bench thresholds out of range".into());
        }
        if !(0.5..1.0).contains(&b.ci_level) {
            return bad(format!("bench.ci_level {} outside [0.5, 1)", b.ci_level));
        }
        Ok(())
    }

    /// The fully resolved configuration as TOML. Loading the text back
    /// yields an identical configuration and hash, so runs can be replayed
    /// from the file an artifact directory embeds.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize config: {e}")))
    }

    /// Hash of the complete configuration.
    pub fn config_hash(&self) -> String {
        hash_value(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hash of the sections that determine artifact compatibility: scan
    /// geometry, data pipeline and model architecture. Training
    /// hyperparameters (learning rate, epochs, batch size) change the curve,
    /// not what a dataset or checkpoint is shaped like, so they are excluded
    /// and `--epochs` overrides never orphan existing artifacts.
    pub fn training_hash(&self) -> String {
        let v = serde_json::json!({
            "scan": self.world.scan,
            "data": self.data,
            "model": self.model,
        });
        hash_value(&v)
    }
}

fn hash_value(v: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(v.to_string().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Walks `tokens` through the JSON tree, greedily matching the longest
/// underscore-joined key at each level, and replaces the leaf.
fn set_path(
    value: &mut serde_json::Value,
    tokens: &[&str],
    raw: &str,
) -> std::result::Result<(), String> {
    if tokens.is_empty() {
        return Err("empty override path".into());
    }
    let obj = value
        .as_object_mut()
        .ok_or_else(|| "path descends into a non-object".to_string())?;
    for take in (1..=tokens.len()).rev() {
        let key = tokens[..take].join("_");
        if !obj.contains_key(&key) {
            continue;
        }
        let slot = obj.get_mut(&key).unwrap();
        if take == tokens.len() {
            let parsed: serde_json::Value = match slot {
                serde_json::Value::String(_) => serde_json::Value::String(raw.to_string()),
                _ => serde_json::from_str(raw)
                    .map_err(|e| format!("value {raw:?} does not parse: {e}"))?,
            };
            *slot = parsed;
            return Ok(());
        }
        return set_path(slot, &tokens[take..], raw);
    }
    Err(format!("no field matches {:?}", tokens.join("_")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn unknown_toml_key_is_rejected() {
        let err = toml::from_str::<RunConfig>("[train]\nepochs = 3\nbogus = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, RunConfig::default().train.batch_size);
        assert_eq!(cfg.world.scan.beams, RunConfig::default().world.scan.beams);
    }

    #[test]
    fn env_overrides_reach_nested_fields() {
        let cfg = RunConfig::default();
        let pairs = vec![
            ("MINEHAUL_TRAIN_EPOCHS".to_string(), "11".to_string()),
            ("MINEHAUL_TRAIN_BATCH_SIZE".to_string(), "16".to_string()),
            (
                "MINEHAUL_WORLD_TRUCK_WHEELBASE".to_string(),
                "7.5".to_string(),
            ),
            ("MINEHAUL_DEPLOY_MODE".to_string(), "evidential".to_string()),
            ("MINEHAUL_DATA_AUG_SCALE".to_string(), "0.1".to_string()),
            ("MINEHAUL_DATA_K_LOOKAHEAD".to_string(), "7".to_string()),
        ];
        let out = cfg.with_overrides(&pairs).unwrap();
        assert_eq!(out.train.epochs, 11);
        assert_eq!(out.train.batch_size, 16);
        assert!((out.world.truck.wheelbase - 7.5).abs() < 1e-12);
        assert_eq!(out.deploy.mode, FusionMode::Evidential);
        assert!((out.data.aug.scale - 0.1).abs() < 1e-12);
        assert_eq!(out.data.k_lookahead, 7);
    }

    #[test]
    fn unknown_override_is_rejected() {
        let cfg = RunConfig::default();
        let pairs = vec![("MINEHAUL_TRAIN_NOPE".to_string(), "1".to_string())];
        let err = cfg.with_overrides(&pairs).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn hashes_differ_only_for_relevant_sections() {
        let base = RunConfig::default();
        let mut changed = base.clone();
        changed.bench.lane_seeds = 99;
        // Bench settings do not invalidate a checkpoint.
        assert_eq!(base.training_hash(), changed.training_hash());
        assert_ne!(base.config_hash(), changed.config_hash());

        let mut model_changed = base.clone();
        model_changed.model.trunk_hidden = vec![8];
        assert_ne!(base.training_hash(), model_changed.training_hash());

        // Tuning knobs such as epoch count leave artifacts compatible.
        let mut epochs_changed = base.clone();
        epochs_changed.train.epochs = 3;
        assert_eq!(base.training_hash(), epochs_changed.training_hash());
    }

    #[test]
    fn invalid_settings_are_caught() {
        let mut cfg = RunConfig::default();
        cfg.train.batch_size = 30; // not a multiple of chunk_size 8
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.data.ci = 0.5; // filter confidence must stay near 1
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.world.dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fusion_mode_parses_from_cli_strings() {
        assert_eq!(
            "uniform".parse::<FusionMode>().unwrap(),
            FusionMode::Uniform
        );
        assert!("best".parse::<FusionMode>().is_err());
    }
}
