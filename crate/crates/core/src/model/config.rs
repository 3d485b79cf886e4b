use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::error::{Error, Result};

/// How frame features are mixed before tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    Identity,
    /// `f_t + (f_t − f_{t−1})`, with `f_{−1} = f_0`.
    FrameDiff,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Identity => "identity",
            FusionKind::FrameDiff => "frame-diff",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FusionKind::Identity),
            "frame-diff" => Ok(FusionKind::FrameDiff),
            other => Err(Error::config(format!(
                "unknown fusion kind {other:?} (expected identity or frame-diff)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub frames: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of each residual stage; every stage halves H and W.
    pub stage_widths: Vec<usize>,
    pub attention: AttentionKind,
    pub reduction: usize,
    pub heads: usize,
    pub layers: usize,
    pub token_dim: usize,
    pub mlp_dim: usize,
    pub aux: bool,
    pub fusion: FusionKind,
    pub positional: bool,
    /// Std of the noise added to the uniform GCA kernel at initialization.
    pub kernel_noise: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small enough for gradient checks and single-core training.
    pub fn desk() -> Self {
        ModelConfig {
            num_classes: 7,
            frames: 8,
            in_channels: 3,
            height: 32,
            width: 32,
            stage_widths: vec![8, 16, 32],
            attention: AttentionKind::Gca,
            reduction: 4,
            heads: 4,
            layers: 2,
            token_dim: 64,
            mlp_dim: 128,
            aux: true,
            fusion: FusionKind::FrameDiff,
            positional: true,
            kernel_noise: 0.01,
            seed: 0,
        }
    }

    /// 112×112 clips of 16 frames with four stages of 64–512 channels and r = 16.
    pub fn full_scale() -> Self {
        ModelConfig {
            num_classes: 7,
            frames: 16,
            in_channels: 3,
            height: 112,
            width: 112,
            stage_widths: vec![64, 128, 256, 512],
            attention: AttentionKind::Gca,
            reduction: 16,
            heads: 4,
            layers: 2,
            token_dim: 512,
            mlp_dim: 1024,
            aux: true,
            fusion: FusionKind::FrameDiff,
            positional: true,
            kernel_noise: 0.01,
            seed: 0,
        }
    }

    /// Gradient-check scale: two frames of 8×8, three classes.
    pub fn tiny() -> Self {
        ModelConfig {
            num_classes: 3,
            frames: 2,
            in_channels: 3,
            height: 8,
            width: 8,
            stage_widths: vec![4, 4, 8],
            attention: AttentionKind::Gca,
            reduction: 2,
            heads: 2,
            layers: 1,
            token_dim: 8,
            mlp_dim: 8,
            aux: true,
            fusion: FusionKind::FrameDiff,
            positional: true,
            kernel_noise: 0.01,
            seed: 0,
        }
    }

    /// Spatial size after stage `i` (0-based).
    pub fn stage_size(&self, i: usize) -> (usize, usize) {
        let mut h = self.height;
        let mut w = self.width;
        for _ in 0..=i {
            h = (h - 1) / 2 + 1;
            w = (w - 1) / 2 + 1;
        }
        (h, w)
    }

    pub fn feature_shape(&self) -> [usize; 4] {
        let last = self.stage_widths.len() - 1;
        let (h, w) = self.stage_size(last);
        [self.frames, self.stage_widths[last], h, w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.frames == 0 || self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config("frames, channels and input size must be positive"));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::config("stage widths must be a non-empty list of positive values"));
        }
        if self.heads == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "token dim {} is not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        if self.mlp_dim == 0 {
            return Err(Error::config("mlp dim must be positive"));
        }
        if self.attention != AttentionKind::None {
            let narrowest = *self.stage_widths.iter().min().unwrap();
            if self.reduction == 0 || narrowest / self.reduction == 0 {
                return Err(Error::config(format!(
                    "reduction ratio {} leaves no hidden units for a {narrowest}-channel stage",
                    self.reduction
                )));
            }
        }
        if !(self.kernel_noise >= 0.0 && self.kernel_noise.is_finite()) {
            return Err(Error::config("kernel noise must be finite and non-negative"));
        }
        Ok(())
    }
}
