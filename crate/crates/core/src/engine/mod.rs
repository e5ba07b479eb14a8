//! Optimization: Adam, photometric loss, the training loop and evaluation.

mod adam;
mod loss;
mod train;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use loss::{loss, mse, psnr, ssim, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use train::{
    evaluate, render_view, replay_stats, train, write_curves_csv, write_eval_csv, write_metrics_csv, CurveRow,
    EvalReport, MetricsRow, TrainOutput, Trainer, CURVES_CSV_HEADER, EVAL_CSV_HEADER, METRICS_CSV_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::appearance::{Appearance, HashGridConfig, DEFAULT_DIRECTION_NOISE, DEFAULT_HIDDEN};
use crate::densify::DensifyConfig;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, DEFAULT_FEATURE_DIM};
use crate::gradstats::{Estimator, GradSignal};

/// Every training knob. Serialized flat, so a config file is a single JSON
/// object whose keys are the field names below and those of
/// [`DensifyConfig`] and [`HashGridConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Use the hash-grid direction encoder; otherwise the raw direction.
    pub lhe: bool,
    /// Add the color-variance term to the densification criterion.
    pub vgd: bool,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_feature: f64,
    pub lr_mlp: f64,
    pub lr_hash: f64,
    pub lambda_dssim: f64,
    pub feature_dim: usize,
    pub hidden: usize,
    pub direction_noise: f64,
    pub background: [f64; 3],
    pub estimator: Estimator,
    pub signal: GradSignal,
    /// Iterations between stats-curve samples.
    pub stats_interval: usize,
    pub parallel: bool,
    #[serde(flatten)]
    pub densify: DensifyConfig,
    #[serde(flatten)]
    pub grid: HashGridConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 7000,
            seed: 0,
            lhe: true,
            vgd: true,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_log_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_feature: 2.5e-3,
            lr_mlp: 2e-3,
            lr_hash: 2e-3,
            lambda_dssim: 0.2,
            feature_dim: DEFAULT_FEATURE_DIM,
            hidden: DEFAULT_HIDDEN,
            direction_noise: DEFAULT_DIRECTION_NOISE,
            background: [0.0; 3],
            estimator: Estimator::Paper,
            signal: GradSignal::Weighted,
            stats_interval: 100,
            parallel: true,
            densify: DensifyConfig::default(),
            grid: HashGridConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("lr_log_scale", self.lr_log_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_opacity", self.lr_opacity),
            ("lr_feature", self.lr_feature),
            ("lr_mlp", self.lr_mlp),
            ("lr_hash", self.lr_hash),
        ];
        for (name, v) in rates {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.lambda_dssim) {
            return Err(Error::InvalidInput(format!("lambda_dssim must lie in [0, 1), got {}", self.lambda_dssim)));
        }
        if !(self.direction_noise >= 0.0) || !self.direction_noise.is_finite() {
            return Err(Error::InvalidInput("direction_noise must be non-negative".into()));
        }
        if self.feature_dim == 0 || self.hidden == 0 || self.stats_interval == 0 {
            return Err(Error::InvalidInput("feature_dim, hidden and stats_interval must be positive".into()));
        }
        if self.background.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("background"));
        }
        self.densify.validate()?;
        if self.lhe {
            self.grid.validate()?;
        }
        Ok(())
    }

    /// Densification settings actually applied: with VGD off the variance
    /// term is dropped.
    pub fn effective_densify(&self) -> DensifyConfig {
        let mut d = self.densify;
        if !self.vgd {
            d.gamma = 0.0;
        }
        d
    }

    /// Resolved settings as pretty JSON, with the applied `gamma`.
    pub fn echo_json(&self) -> String {
        let mut c = self.clone();
        c.densify = self.effective_densify();
        serde_json::to_string_pretty(&c).expect("config serializes")
    }

    /// Keys accepted in a config file.
    pub fn known_keys() -> Vec<String> {
        match serde_json::to_value(TrainConfig::default()) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Applies the keys of a flat JSON object on top of `self`. Unknown keys
    /// are rejected.
    pub fn merge_json(&self, overrides: &serde_json::Value) -> Result<TrainConfig> {
        let obj = overrides
            .as_object()
            .ok_or_else(|| Error::InvalidInput("config must be a JSON object".into()))?;
        let known = Self::known_keys();
        if let Some(k) = obj.keys().find(|k| !known.contains(k)) {
            return Err(Error::InvalidInput(format!("unknown config key `{k}`")));
        }
        let mut base = serde_json::to_value(self).expect("config serializes");
        let map = base.as_object_mut().expect("object");
        for (k, v) in obj {
            map.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }
}

/// A trained (or freshly initialized) model plus the settings that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub gaussians: GaussianSet,
    pub appearance: Appearance,
    pub config: TrainConfig,
}
