use serde::{Deserialize, Serialize};

use super::adam::{AdamHyper, GroupRates};
use crate::error::{Error, Result};
use crate::loss::{LossWeights, SsimConfig};
use crate::model::CloudParam;
use crate::net::FilmSource;
use crate::pipeline::Ablation;
use crate::raster::DEFAULT_TILE_SIZE;

/// Per-group learning rates. Positions decay exponentially from
/// `position` to `position_final` over the run; all others are constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub opacity_logits: f64,
    pub thermal_offsets: f64,
    pub sh_coeffs: f64,
    pub features: f64,
    pub network: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            log_scales: 5e-3,
            rotations: 1e-3,
            opacity_logits: 5e-2,
            thermal_offsets: 5e-2,
            sh_coeffs: 2.5e-3,
            features: 2.5e-3,
            network: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.position,
            self.position_final,
            self.log_scales,
            self.rotations,
            self.opacity_logits,
            self.thermal_offsets,
            self.sh_coeffs,
            self.features,
            self.network,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps >= 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be non-negative".into()));
        }
        Ok(())
    }

    /// Rates at `progress ∈ [0, 1]` through the run.
    pub fn at(&self, progress: f64) -> ScheduledRates {
        let t = progress.clamp(0.0, 1.0);
        ScheduledRates {
            rates: *self,
            position: self.position * (self.position_final / self.position).powf(t),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScheduledRates {
    rates: LearningRates,
    position: f64,
}

impl ScheduledRates {
    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.rates.beta1,
            beta2: self.rates.beta2,
            eps: self.rates.eps,
        }
    }
}

impl GroupRates for ScheduledRates {
    fn cloud_hyper(&self, p: CloudParam) -> AdamHyper {
        let r = &self.rates;
        self.hyper(match p {
            CloudParam::Positions => self.position,
            CloudParam::LogScales => r.log_scales,
            CloudParam::Rotations => r.rotations,
            CloudParam::OpacityLogits => r.opacity_logits,
            CloudParam::ThermalOffsets => r.thermal_offsets,
            CloudParam::ShCoeffs => r.sh_coeffs,
            CloudParam::Features => r.features,
        })
    }

    fn net_hyper(&self) -> AdamHyper {
        self.hyper(self.rates.network)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Parameters stay in `f64`.
    #[default]
    F64,
    /// Parameters are rounded to `f32` after every update.
    F32,
}

/// Model and objective switches for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainAblation {
    pub disable_film: bool,
    pub disable_decoupling: bool,
    pub disable_hybrid: bool,
    /// Drops the RGB half of the feature-level loss.
    pub disable_fea_rgb: bool,
    /// Drops the thermal half of the feature-level loss.
    pub disable_fea_th: bool,
    pub film_source: FilmSource,
}

impl TrainAblation {
    pub fn render(&self) -> Ablation {
        Ablation {
            disable_film: self.disable_film,
            disable_decoupling: self.disable_decoupling,
            disable_hybrid: self.disable_hybrid,
            film_source: self.film_source,
        }
    }

    pub fn loss_weights(&self, base: &LossWeights) -> LossWeights {
        let mut w = *base;
        if self.disable_fea_rgb {
            w.feature_rgb = false;
        }
        if self.disable_fea_th {
            w.eta = 0.0;
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub feature_dim: usize,
    pub loss: LossWeights,
    pub ssim: SsimConfig,
    pub lr: LearningRates,
    pub tile_size: usize,
    /// Highest SH degree that training unlocks.
    pub sh_degree: usize,
    /// Iterations between SH degree increments.
    pub sh_unlock_every: usize,
    pub ablation: TrainAblation,
    /// Held-out evaluation period; the last iteration is always evaluated.
    pub eval_every: usize,
    /// Evaluate only the first `eval_views` test frames when set.
    pub eval_views: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
    /// Pruning period in iterations; 0 disables pruning.
    pub prune_every: usize,
    pub prune_threshold: f64,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            feature_dim: 8,
            loss: LossWeights::default(),
            ssim: SsimConfig::default(),
            lr: LearningRates::default(),
            tile_size: DEFAULT_TILE_SIZE,
            sh_degree: 3,
            sh_unlock_every: 1000,
            ablation: TrainAblation::default(),
            eval_every: 1000,
            eval_views: None,
            seed: 0,
            precision: Precision::F64,
            prune_every: 0,
            prune_threshold: 0.005,
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    /// Checks everything except the iteration count, which may be zero.
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 4 {
            return Err(Error::FeatureDimTooSmall(self.feature_dim));
        }
        if self.sh_degree > 3 {
            return Err(Error::Config(format!("sh_degree {} > 3", self.sh_degree)));
        }
        if self.tile_size == 0 || self.sh_unlock_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("tile_size, sh_unlock_every and eval_every must be positive".into()));
        }
        if self.prune_every > 0 && !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return Err(Error::Config("prune_threshold must lie in (0, 1)".into()));
        }
        if self.background.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("background must be finite".into()));
        }
        self.loss.validate()?;
        self.ssim.validate()?;
        self.lr.validate()
    }
}
