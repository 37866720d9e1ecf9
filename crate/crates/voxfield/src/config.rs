//! Training configuration, read from TOML with every field optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use voxfield_core::loss::LossWeights;

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageWeights {
    pub photo: f64,
    pub pt_rgb: f64,
    pub bg: f64,
}

impl StageWeights {
    pub fn to_loss_weights(self) -> Result<LossWeights> {
        Ok(LossWeights::new(self.photo, self.pt_rgb, self.bg)?)
    }
}

impl From<LossWeights> for StageWeights {
    fn from(w: LossWeights) -> Self {
        Self {
            photo: w.photo,
            pt_rgb: w.pt_rgb,
            bg: w.bg,
        }
    }
}

/// Fine-stage colour model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ColorModel {
    /// Feature grid decoded by a small MLP that also sees the view direction.
    Mlp,
    /// Three colour logits per grid point, no view dependence.
    Diffuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Expected voxel count of the coarse grids.
    pub m_coarse: u64,
    /// Voxel count of the fine grids after the last progressive checkpoint.
    pub m_fine: u64,
    pub alpha_init_coarse: f64,
    pub alpha_init_fine: f64,
    /// Shift the density activation so empty grids start nearly transparent.
    /// `false` uses a zero shift in both stages.
    pub low_density_init: bool,
    /// Ray step as a fraction of the voxel size.
    pub step_ratio: f64,
    pub tau_coarse: f64,
    pub tau_fine: f64,
    /// Fine points whose compositing weight falls below this skip the colour
    /// query. `0` disables the test.
    pub tau_weight: f64,
    pub coarse_iters: usize,
    pub fine_iters: usize,
    pub batch_rays: usize,
    /// Fine iterations at which the voxel count doubles.
    pub pg_ckpt: Vec<usize>,
    pub lr_grid: f64,
    pub lr_mlp: f64,
    /// Steps over which the learning rate decays by 10x.
    pub lr_decay_steps: u64,
    /// Scale coarse grid learning rates by how many training views see each point.
    pub view_count_lr: bool,
    pub coarse_weights: StageWeights,
    pub fine_weights: StageWeights,
    pub features: usize,
    pub posenc_x: usize,
    pub posenc_d: usize,
    pub mlp_width: usize,
    pub mlp_hidden: usize,
    pub color_model: ColorModel,
    pub seed: u64,
    pub white_bg: bool,
    pub near: f64,
    pub far: f64,
    /// Write every n-th iteration to the loss trace.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_coarse: 100 * 100 * 100,
            m_fine: 160 * 160 * 160,
            alpha_init_coarse: 1e-6,
            alpha_init_fine: 1e-2,
            low_density_init: true,
            step_ratio: 0.5,
            tau_coarse: 1e-3,
            tau_fine: 1e-4,
            tau_weight: 0.0,
            coarse_iters: 10_000,
            fine_iters: 20_000,
            batch_rays: 8192,
            pg_ckpt: vec![1000, 2000, 3000],
            lr_grid: 0.1,
            lr_mlp: 1e-3,
            lr_decay_steps: 20_000,
            view_count_lr: true,
            coarse_weights: LossWeights::COARSE.into(),
            fine_weights: LossWeights::FINE.into(),
            features: 12,
            posenc_x: 5,
            posenc_d: 4,
            mlp_width: 128,
            mlp_hidden: 2,
            color_model: ColorModel::Mlp,
            seed: 0,
            white_bg: true,
            near: 2.0,
            far: 6.0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    /// Small grids and batches for single-machine runs on 100x100 images.
    pub fn desk() -> Self {
        Self {
            m_coarse: 32 * 32 * 32,
            m_fine: 64 * 64 * 64,
            coarse_iters: 2000,
            fine_iters: 4000,
            batch_rays: 1024,
            tau_weight: 1e-4,
            mlp_width: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if self.m_coarse < 8 || self.m_fine < 8 {
            return bad("voxel budgets must be at least 8");
        }
        for (name, v) in [
            ("alpha_init_coarse", self.alpha_init_coarse),
            ("alpha_init_fine", self.alpha_init_fine),
            ("tau_coarse", self.tau_coarse),
            ("tau_fine", self.tau_fine),
        ] {
            if !open01(v) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.tau_weight) {
            return bad("tau_weight must lie in [0, 1)");
        }
        if !(self.step_ratio > 0.0 && self.step_ratio.is_finite()) {
            return bad("step_ratio must be positive");
        }
        if self.coarse_iters == 0 || self.fine_iters == 0 {
            return bad("iteration counts must be positive");
        }
        if self.batch_rays == 0 {
            return bad("batch_rays must be positive");
        }
        if self.pg_ckpt.windows(2).any(|w| w[0] >= w[1]) {
            return bad("pg_ckpt must be strictly ascending");
        }
        if self.pg_ckpt.iter().any(|&c| c == 0 || c >= self.fine_iters) {
            return bad("pg_ckpt entries must lie in (0, fine_iters)");
        }
        if self.m_fine >> self.pg_ckpt.len().min(63) == 0 {
            return bad("m_fine too small for the number of checkpoints");
        }
        if !(self.lr_grid > 0.0 && self.lr_mlp > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.lr_decay_steps == 0 {
            return bad("lr_decay_steps must be positive");
        }
        self.coarse_weights.to_loss_weights()?;
        self.fine_weights.to_loss_weights()?;
        if self.features == 0 || self.mlp_width == 0 {
            return bad("features and mlp_width must be positive");
        }
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return bad("need 0 < near < far");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Voxel counts used before the first checkpoint and after each one.
    pub fn fine_budget_schedule(&self) -> Vec<u64> {
        let base = self.m_fine >> self.pg_ckpt.len().min(63);
        (0..=self.pg_ckpt.len()).map(|j| base << j).collect()
    }
}
