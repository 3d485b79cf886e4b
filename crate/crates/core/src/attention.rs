//! Channel attention: squeeze-and-excitation, the channel half of CBAM, and
//! global convolution-attention (GCA).
//!
//! All three map `X: [T, C, H, W]` to `(S ⊗ X, S)` with one weight per frame
//! and channel, `S: [T, C]`. They differ in the per-channel descriptor and in
//! the range of `S`:
//!
//! | block | descriptor `Z[t, c]`              | weights                         | range  |
//! |-------|-----------------------------------|---------------------------------|--------|
//! | SE    | spatial mean                      | `σ(W₂ δ(W₁ Z))`                 | (0, 1) |
//! | CBAM  | spatial mean and spatial max      | `σ(MLP(Z_avg) + MLP(Z_max))`    | (0, 1) |
//! | GCA   | `Σᵢⱼ X[t,c,i,j] · K[c,i,j]`       | `2·sqrt(s ⊗ mean_t(s))`, `s` as SE | (0, 2) |
//!
//! The ranges are open in exact arithmetic. In `f64` the sigmoid rounds to
//! exactly 1 once its argument passes roughly 37, so saturated inputs can
//! reach the closed endpoint.
//!
//! Frames are processed independently except for the temporal mean inside
//! GCA, which is the only operator that couples them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::param::{Bindings, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Se,
    Cbam,
    Gca,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Se => "se",
            AttentionKind::Cbam => "cbam",
            AttentionKind::Gca => "gca",
        }
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionKind::None),
            "se" => Ok(AttentionKind::Se),
            "cbam" => Ok(AttentionKind::Cbam),
            "gca" => Ok(AttentionKind::Gca),
            other => Err(Error::config(format!(
                "unknown attention kind {other:?} (expected none, se, cbam or gca)"
            ))),
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `S ⊗ X`, same shape as the input.
    pub features: Var,
    /// `S`, shape `[T, C]`.
    pub weights: Var,
}

/// Scale of `W₂` relative to `W₁`: blocks start close to their `W = 0` output.
pub const EXCITE_SCALE: f64 = 0.1;

/// Initialization of the bottleneck and global kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockInit {
    pub seed: u64,
    /// Standard deviation multiplier for `W₁`, `W₂` (scaled by `1/sqrt(fan_in)`,
    /// and by [`EXCITE_SCALE`] for `W₂`). `W₁` is drawn half-normal.
    /// Zero gives all-zero bottleneck weights.
    pub weight_gain: f64,
    /// Noise added to the uniform `1/(H·W)` global kernel.
    pub kernel_noise: f64,
}

impl Default for BlockInit {
    fn default() -> Self {
        BlockInit {
            seed: 0,
            weight_gain: 1.0,
            kernel_noise: 0.01,
        }
    }
}

impl BlockInit {
    /// Bottleneck zeroed and kernel exactly uniform: GCA computes the identity.
    pub fn identity(seed: u64) -> Self {
        BlockInit {
            seed,
            weight_gain: 0.0,
            kernel_noise: 0.0,
        }
    }
}

/// Bottleneck `W₂ δ(W₁ z)` shared by all three blocks; `W₁: [C/r, C]`, `W₂: [C, C/r]`.
#[derive(Debug, Clone)]
struct Bottleneck {
    w1: ParamId,
    w2: ParamId,
    channels: usize,
}

fn hidden_width(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || channels / reduction == 0 {
        return Err(Error::config(format!(
            "reduction ratio {reduction} leaves no hidden units for {channels} channels"
        )));
    }
    Ok(channels / reduction)
}

impl Bottleneck {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        reduction: usize,
        init: &BlockInit,
    ) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        let n1 = format!("{prefix}.w1");
        let n2 = format!("{prefix}.w2");
        // Descriptors of post-ReLU features are non-negative and there is no
        // bias, so a signed W₁ can silence every hidden unit at once.
        let w1 = init::normal(init.seed, &n1, &[hidden, channels], 0.0, init.weight_gain / (channels as f64).sqrt())
            .map(f64::abs);
        let w2_std = EXCITE_SCALE * init.weight_gain / (hidden as f64).sqrt();
        let w2 = init::normal(init.seed, &n2, &[channels, hidden], 0.0, w2_std);
        Ok(Bottleneck {
            w1: store.add(n1, w1, true)?,
            w2: store.add(n2, w2, true)?,
            channels,
        })
    }

    /// Pre-sigmoid excitation for descriptors `z: [T, C]`.
    fn excite(&self, tape: &mut Tape, b: &Bindings, z: Var) -> Result<Var> {
        let w1t = tape.transpose(b.var(self.w1))?;
        let w2t = tape.transpose(b.var(self.w2))?;
        let h = tape.matmul(z, w1t)?;
        let h = tape.relu(h)?;
        tape.matmul(h, w2t)
    }
}

fn check_input(tape: &Tape, x: Var, channels: usize, block: &'static str) -> Result<(usize, usize, usize, usize)> {
    let shape = tape.shape(x);
    if shape.len() != 4 || shape[1] != channels {
        return Err(Error::shape(block, shape, &[channels]));
    }
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h * w == 0 {
        return Err(Error::EmptyFeature(format!("{block}: feature map is {h}×{w}")));
    }
    if t == 0 {
        return Err(Error::EmptyFeature(format!("{block}: no frames")));
    }
    Ok((t, c, h, w))
}

/// `[T, C, H, W]` → `[T, C]` by spatial mean.
fn spatial_mean(tape: &mut Tape, x: Var, dims: (usize, usize, usize, usize)) -> Result<Var> {
    let (t, c, h, w) = dims;
    let flat = tape.reshape(x, &[t, c, h * w])?;
    tape.mean(flat, 2)
}

#[derive(Debug, Clone)]
pub struct SeBlock {
    mlp: Bottleneck,
    pub reduction: usize,
}

impl SeBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, reduction: usize, init: &BlockInit) -> Result<Self> {
        Ok(SeBlock {
            mlp: Bottleneck::new(store, prefix, channels, reduction, init)?,
            reduction,
        })
    }

    pub fn w1(&self) -> ParamId {
        self.mlp.w1
    }

    pub fn w2(&self) -> ParamId {
        self.mlp.w2
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<AttentionOutput> {
        let dims = check_input(tape, x, self.mlp.channels, "se_attention")?;
        let z = spatial_mean(tape, x, dims)?;
        let e = self.mlp.excite(tape, b, z)?;
        let weights = tape.sigmoid(e)?;
        let features = tape.mul_channel(x, weights)?;
        Ok(AttentionOutput { features, weights })
    }
}

#[derive(Debug, Clone)]
pub struct CbamChannelBlock {
    mlp: Bottleneck,
    pub reduction: usize,
}

impl CbamChannelBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, reduction: usize, init: &BlockInit) -> Result<Self> {
        Ok(CbamChannelBlock {
            mlp: Bottleneck::new(store, prefix, channels, reduction, init)?,
            reduction,
        })
    }

    pub fn w1(&self) -> ParamId {
        self.mlp.w1
    }

    pub fn w2(&self) -> ParamId {
        self.mlp.w2
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<AttentionOutput> {
        let (t, c, h, w) = check_input(tape, x, self.mlp.channels, "cbam_channel_attention")?;
        let flat = tape.reshape(x, &[t, c, h * w])?;
        let avg = tape.mean(flat, 2)?;
        let max = tape.max_last_axis(flat)?;
        let ea = self.mlp.excite(tape, b, avg)?;
        let em = self.mlp.excite(tape, b, max)?;
        let e = tape.add(ea, em)?;
        let weights = tape.sigmoid(e)?;
        let features = tape.mul_channel(x, weights)?;
        Ok(AttentionOutput { features, weights })
    }
}

#[derive(Debug, Clone)]
pub struct GcaBlock {
    mlp: Bottleneck,
    kernel: ParamId,
    pub reduction: usize,
    pub height: usize,
    pub width: usize,
}

impl GcaBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        height: usize,
        width: usize,
        reduction: usize,
        init: &BlockInit,
    ) -> Result<Self> {
        if height * width == 0 {
            return Err(Error::EmptyFeature(format!("gca kernel is {height}×{width}")));
        }
        let mlp = Bottleneck::new(store, prefix, channels, reduction, init)?;
        let name = format!("{prefix}.kernel");
        let uniform = 1.0 / (height * width) as f64;
        let k = init::normal(init.seed, &name, &[channels, height, width], uniform, init.kernel_noise);
        let kernel = store.add(name, k, true)?;
        Ok(GcaBlock {
            mlp,
            kernel,
            reduction,
            height,
            width,
        })
    }

    pub fn w1(&self) -> ParamId {
        self.mlp.w1
    }

    pub fn w2(&self) -> ParamId {
        self.mlp.w2
    }

    pub fn kernel(&self) -> ParamId {
        self.kernel
    }

    /// Per-frame gate `s = σ(W₂ δ(W₁ Z))` with the global-convolution descriptor.
    pub fn gate(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        let (_, _, h, w) = check_input(tape, x, self.mlp.channels, "gca_attention")?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(
                "gca_attention",
                tape.shape(x),
                tape.shape(b.var(self.kernel)),
            ));
        }
        let z = tape.weighted_spatial_sum(x, b.var(self.kernel))?;
        let e = self.mlp.excite(tape, b, z)?;
        tape.sigmoid(e)
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<AttentionOutput> {
        let s = self.gate(tape, b, x)?;
        let weights = temporal_rescale(tape, s)?;
        let features = tape.mul_channel(x, weights)?;
        Ok(AttentionOutput { features, weights })
    }
}

/// `2·sqrt(s ⊗ mean_t(s))` for a gate `s: [T, C]`: the geometric mean of each
/// frame's gate with its channel's temporal average, doubled.
pub fn temporal_rescale(tape: &mut Tape, s: Var) -> Result<Var> {
    if tape.shape(s).len() != 2 {
        return Err(Error::shape("temporal_rescale", tape.shape(s), &[]));
    }
    let avg = tape.mean(s, 0)?;
    let prod = tape.mul_trailing(s, avg)?;
    let root = tape.sqrt(prod)?;
    tape.scale(root, 2.0)
}

/// One of the three blocks, or nothing.
#[derive(Debug, Clone)]
pub enum AttentionBlock {
    Se(SeBlock),
    Cbam(CbamChannelBlock),
    Gca(GcaBlock),
}

impl AttentionBlock {
    /// Build the block for `kind` over a `[_, channels, height, width]` feature.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        kind: AttentionKind,
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        height: usize,
        width: usize,
        reduction: usize,
        init: &BlockInit,
    ) -> Result<Option<Self>> {
        Ok(match kind {
            AttentionKind::None => None,
            AttentionKind::Se => Some(AttentionBlock::Se(SeBlock::new(store, prefix, channels, reduction, init)?)),
            AttentionKind::Cbam => Some(AttentionBlock::Cbam(CbamChannelBlock::new(
                store, prefix, channels, reduction, init,
            )?)),
            AttentionKind::Gca => Some(AttentionBlock::Gca(GcaBlock::new(
                store, prefix, channels, height, width, reduction, init,
            )?)),
        })
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<AttentionOutput> {
        match self {
            AttentionBlock::Se(blk) => blk.forward(tape, b, x),
            AttentionBlock::Cbam(blk) => blk.forward(tape, b, x),
            AttentionBlock::Gca(blk) => blk.forward(tape, b, x),
        }
    }
}
