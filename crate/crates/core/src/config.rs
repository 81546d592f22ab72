//! Run configuration: one TOML file with `data`, `vae`, `flow`, `finetune`,
//! `sampler` and `metrics` sections. Unknown keys are rejected; omitted keys
//! take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trajloom_grad::AdamW;

use crate::error::{Error, Result};
use crate::flowgen::{AnchorMode, GridSpacing, SamplerSpec};
use crate::lossbank::NeighborSpec;
use crate::models::{FlowNetConfig, VaeConfig, VisConfig};
use crate::motionlab::CaptionThresholds;
use crate::trajfield::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    /// Global-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 6e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn with_lr(lr: f64) -> Self {
        OptimConfig {
            lr,
            ..OptimConfig::default()
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: self.eps,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    fn validate(&self, section: &str) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.eps > 0.0
            && self.clip_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{section}.optim: out-of-range optimizer setting"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Static,
    Translation,
    Rotation,
    Zoom,
    Shear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub past_frames: usize,
    pub future_frames: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub kinds: Vec<SceneKind>,
    /// Pixels per frame.
    pub max_speed: f64,
    /// Radians per frame.
    pub max_omega: f64,
    pub max_zoom: f64,
    pub max_shear: f64,
    /// Chance that a scene gets one rectangular occluder.
    pub occlusion_prob: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            height: 32,
            width: 32,
            stride: 4,
            past_frames: 8,
            future_frames: 8,
            train_scenes: 64,
            eval_scenes: 16,
            kinds: vec![
                SceneKind::Static,
                SceneKind::Translation,
                SceneKind::Rotation,
                SceneKind::Zoom,
                SceneKind::Shear,
            ],
            max_speed: 1.0,
            max_omega: 0.03,
            max_zoom: 0.03,
            max_shear: 0.03,
            occlusion_prob: 0.25,
        }
    }
}

impl DataConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.height, self.width, self.stride)
            .map_err(|e| Error::Config(format!("data: {e}")))
    }

    pub fn frames(&self) -> usize {
        self.past_frames + self.future_frames
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub patch: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub latent_channels: usize,
    pub ratio: usize,
    pub logvar_init: f64,
    pub steps: usize,
    pub batch: usize,
    /// KL weight `β`.
    pub beta: f64,
    pub lambda_temporal: f64,
    pub lambda_spatial: f64,
    pub huber_delta: f64,
    pub hops: Vec<usize>,
    pub hop_weights: Vec<f64>,
    pub optim: OptimConfig,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        let m = VaeConfig::default();
        let n = NeighborSpec::default();
        VaeTrainConfig {
            patch: m.patch,
            hidden: m.hidden,
            blocks: m.blocks,
            latent_channels: m.latent_channels,
            ratio: m.ratio,
            logvar_init: m.logvar_init,
            steps: 500,
            batch: 8,
            beta: 5e-5,
            lambda_temporal: 0.1,
            lambda_spatial: 0.2,
            huber_delta: 1.0,
            hops: n.hops,
            hop_weights: n.weights,
            optim: OptimConfig::with_lr(2e-5),
        }
    }
}

impl VaeTrainConfig {
    /// Network shape for segments of `frames` frames on `data`'s pixel grid.
    pub fn model(&self, data: &DataConfig, frames: usize) -> VaeConfig {
        VaeConfig {
            height: data.height,
            width: data.width,
            frames,
            patch: self.patch,
            hidden: self.hidden,
            blocks: self.blocks,
            latent_channels: self.latent_channels,
            ratio: self.ratio,
            logvar_init: self.logvar_init,
        }
    }

    pub fn neighbors(&self) -> Result<NeighborSpec> {
        NeighborSpec::new(self.hops.clone(), self.hop_weights.clone())
            .map_err(|e| Error::Config(format!("vae: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowTrainConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub time_features: usize,
    pub fusion: bool,
    pub fusion_alpha: f64,
    pub vis_hidden: usize,
    pub vis_layers: usize,
    pub steps: usize,
    pub batch: usize,
    /// Tube noise `σ` on the training interpolant.
    pub sigma: f64,
    /// Anchor noise `σ0`.
    pub sigma0: f64,
    pub anchor_mode: AnchorMode,
    /// Weight floor for invisible tokens before per-item normalization.
    pub invisible_weight: f64,
    pub optim: OptimConfig,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        let f = FlowNetConfig::default();
        let v = VisConfig::default();
        FlowTrainConfig {
            hidden: f.hidden,
            blocks: f.blocks,
            time_features: f.time_features,
            fusion: f.fusion,
            fusion_alpha: f.fusion_alpha,
            vis_hidden: v.hidden,
            vis_layers: v.layers,
            steps: 1000,
            batch: 16,
            sigma: 0.05,
            sigma0: 0.1,
            anchor_mode: AnchorMode::FirstSlice,
            invisible_weight: 0.01,
            optim: OptimConfig::with_lr(6e-5),
        }
    }
}

impl FlowTrainConfig {
    pub fn model(&self, vae: &VaeConfig, data: &DataConfig) -> FlowNetConfig {
        FlowNetConfig {
            latent_channels: vae.latent_channels,
            tokens: vae.tokens(),
            future_steps: data.future_frames.div_ceil(vae.ratio),
            history_steps: data.past_frames.div_ceil(vae.ratio),
            hidden: self.hidden,
            blocks: self.blocks,
            time_features: self.time_features,
            fusion: self.fusion,
            fusion_alpha: self.fusion_alpha,
        }
    }

    pub fn vis_model(&self, vae: &VaeConfig) -> VisConfig {
        VisConfig {
            latent_channels: vae.latent_channels,
            hidden: self.vis_hidden,
            layers: self.vis_layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch: usize,
    /// Rollout steps `K`.
    pub rollout_steps: usize,
    pub t_eps: f64,
    /// Logit span `t_ε'` of the rollout grid.
    pub grid_span: f64,
    /// Denominator clamp in the endpoint-consistent targets.
    pub denom_clamp: f64,
    pub spacing: GridSpacing,
    pub w1: f64,
    pub w0: f64,
    /// Endpoint-consistency weight `γ`.
    pub gamma: f64,
    pub lambda_kstep: f64,
    pub sub_batch: usize,
    pub consistency_masked: bool,
    pub optim: OptimConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 200,
            batch: 16,
            rollout_steps: 8,
            t_eps: 1e-5,
            grid_span: 1e-5,
            denom_clamp: 1e-3,
            spacing: GridSpacing::Logit,
            w1: 1.0,
            w0: 0.5,
            gamma: 0.1,
            lambda_kstep: 0.1,
            sub_batch: 8,
            consistency_masked: false,
            optim: OptimConfig::with_lr(1e-5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub method: SamplerSpec,
    pub vis_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: SamplerSpec::default(),
            vis_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Divide DivCurlE derivatives by the stride a second time.
    pub double_stride: bool,
    pub caption: CaptionThresholds,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            double_stride: true,
            caption: CaptionThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<String>,
    pub data: DataConfig,
    pub vae: VaeTrainConfig,
    pub flow: FlowTrainConfig,
    pub finetune: FinetuneConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricsConfig,
}

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        d.grid()?;
        if d.past_frames == 0 || d.future_frames == 0 {
            return Err(cfg_err(
                "data: past and future frame counts must be positive",
            ));
        }
        if d.past_frames != d.future_frames {
            return Err(cfg_err(
                "data: past and future windows must have equal length",
            ));
        }
        if d.kinds.is_empty() {
            return Err(cfg_err("data: at least one scene kind is required"));
        }
        if !(0.0..=1.0).contains(&d.occlusion_prob) {
            return Err(cfg_err("data: occlusion_prob must lie in [0, 1]"));
        }
        if [d.max_speed, d.max_omega, d.max_zoom, d.max_shear]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
            || d.max_zoom >= 1.0
        {
            return Err(cfg_err(
                "data: motion ranges must be finite and non-negative (zoom < 1)",
            ));
        }
        let v = &self.vae;
        let vae = v.model(d, d.past_frames);
        vae.validate().map_err(|e| cfg_err(format!("vae: {e}")))?;
        if !d.past_frames.is_multiple_of(v.ratio) || !d.future_frames.is_multiple_of(v.ratio) {
            return Err(cfg_err(
                "vae: ratio must divide the past and future frame counts",
            ));
        }
        if v.batch == 0 {
            return Err(cfg_err("vae: batch must be positive"));
        }
        if !(v.beta >= 0.0
            && v.lambda_temporal >= 0.0
            && v.lambda_spatial >= 0.0
            && v.huber_delta > 0.0)
        {
            return Err(cfg_err(
                "vae: loss weights must be non-negative and huber_delta positive",
            ));
        }
        v.neighbors()?;
        v.optim.validate("vae")?;
        let f = &self.flow;
        f.model(&vae, d)
            .validate()
            .map_err(|e| cfg_err(format!("flow: {e}")))?;
        if f.batch == 0 || f.vis_hidden == 0 {
            return Err(cfg_err("flow: batch and vis_hidden must be positive"));
        }
        if !(f.sigma >= 0.0 && f.sigma0 >= 0.0 && f.invisible_weight > 0.0) {
            return Err(cfg_err(
                "flow: noise levels must be non-negative and invisible_weight positive",
            ));
        }
        f.optim.validate("flow")?;
        let ft = &self.finetune;
        if ft.rollout_steps < 2 || ft.sub_batch == 0 || ft.batch == 0 {
            return Err(cfg_err(
                "finetune: need rollout_steps ≥ 2 and positive batch sizes",
            ));
        }
        if !(ft.t_eps > 0.0
            && ft.t_eps < 0.5
            && ft.grid_span > 0.0
            && ft.grid_span < 0.5
            && ft.denom_clamp > 0.0)
        {
            return Err(cfg_err(
                "finetune: t_eps and grid_span must lie in (0, 0.5) and denom_clamp be positive",
            ));
        }
        if [ft.w1, ft.w0, ft.gamma, ft.lambda_kstep]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(cfg_err("finetune: loss weights must be non-negative"));
        }
        ft.optim.validate("finetune")?;
        self.sampler
            .method
            .validate()
            .map_err(|e| cfg_err(format!("sampler: {e}")))?;
        if !(0.0..=1.0).contains(&self.sampler.vis_threshold) {
            return Err(cfg_err("sampler: vis_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}
