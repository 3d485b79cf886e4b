//! The clip classifier: per-frame residual stages with channel attention,
//! frame fusion, a temporal transformer over frame tokens, and a linear head
//! on the mean token.
//!
//! ```text
//! clip [T,3,H,W] → stage₁ → attn₁ → … → stageₙ → attnₙ → fuse → flatten
//!   → linear → (+pos) → encoder × L → mean over T → linear → logits [1,K]
//!                  ↘ aux heads (one per attention site, when enabled)
//! ```

mod checkpoint;
mod config;
mod transformer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use config::{FusionKind, ModelConfig};
pub use transformer::EncoderLayer;

use crate::attention::{AttentionBlock, AttentionKind, BlockInit};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::param::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Stage {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    skip_w: ParamId,
    skip_b: ParamId,
}

#[derive(Debug, Clone)]
struct AuxHead {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Main logits, shape `[1, K]`.
    pub logits: Var,
    /// One `[1, K]` row per attention site when auxiliary heads are on.
    pub aux_logits: Vec<Var>,
    /// Channel weights `[T, C]` at each attention site.
    pub attention_weights: Vec<Var>,
    /// Per layer, the `[heads, T, T]` self-attention matrix.
    pub encoder_attention: Vec<Var>,
    /// Backbone output after the last attention site, before fusion.
    pub features: Var,
}

/// All parameters of the network plus the handles that locate them.
#[derive(Debug, Clone)]
pub struct DferModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    stages: Vec<Stage>,
    attention: Vec<AttentionBlock>,
    aux: Vec<AuxHead>,
    token_w: ParamId,
    token_b: ParamId,
    position: Option<ParamId>,
    encoder: Vec<EncoderLayer>,
    head_w: ParamId,
    head_b: ParamId,
    input_mean: ParamId,
    input_std: ParamId,
}

fn he(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    init::normal(seed, name, shape, 0.0, (2.0 / fan_in as f64).sqrt())
}

pub(crate) fn lecun(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    init::normal(seed, name, shape, 0.0, 1.0 / (fan_in as f64).sqrt())
}

impl DferModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let init = BlockInit {
            seed: config.seed,
            weight_gain: 1.0,
            kernel_noise: config.kernel_noise,
        };
        Self::with_attention_init(config, init)
    }

    /// Like [`DferModel::new`] but with explicit attention-block initialization,
    /// e.g. [`BlockInit::identity`].
    pub fn with_attention_init(config: ModelConfig, block_init: BlockInit) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut params = ParamStore::new();
        let input_mean = params.add("input.mean", Tensor::zeros([config.in_channels]), false)?;
        let input_std = params.add("input.std", Tensor::full([config.in_channels], 1.0), false)?;

        let mut stages = Vec::new();
        let mut attention = Vec::new();
        let mut aux = Vec::new();
        let mut cin = config.in_channels;
        for (i, &cout) in config.stage_widths.iter().enumerate() {
            let p = format!("stage{i}");
            let mut conv = |name: String, shape: [usize; 4]| -> Result<ParamId> {
                let fan_in = shape[1] * shape[2] * shape[3];
                let t = he(seed, &name, &shape, fan_in);
                params.add(name, t, true)
            };
            let conv1_w = conv(format!("{p}.conv1.weight"), [cout, cin, 3, 3])?;
            let conv2_w = conv(format!("{p}.conv2.weight"), [cout, cout, 3, 3])?;
            let skip_w = conv(format!("{p}.skip.weight"), [cout, cin, 1, 1])?;
            let conv1_b = params.add(format!("{p}.conv1.bias"), Tensor::zeros([cout]), true)?;
            let conv2_b = params.add(format!("{p}.conv2.bias"), Tensor::zeros([cout]), true)?;
            let skip_b = params.add(format!("{p}.skip.bias"), Tensor::zeros([cout]), true)?;
            stages.push(Stage {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                skip_w,
                skip_b,
            });

            let (h, w) = config.stage_size(i);
            if let Some(block) = AttentionBlock::build(
                config.attention,
                &mut params,
                &format!("{p}.attn"),
                cout,
                h,
                w,
                config.reduction,
                &block_init,
            )? {
                attention.push(block);
                if config.aux {
                    let wn = format!("aux{i}.weight");
                    let weight = params.add(wn.clone(), lecun(seed, &wn, &[cout, config.num_classes], cout), true)?;
                    let bias = params.add(format!("aux{i}.bias"), Tensor::zeros([config.num_classes]), true)?;
                    aux.push(AuxHead { weight, bias });
                }
            }
            cin = cout;
        }

        let [_, c, h, w] = config.feature_shape();
        let flat = c * h * w;
        let d = config.token_dim;
        let token_w = params.add("tokens.weight", lecun(seed, "tokens.weight", &[flat, d], flat), true)?;
        let token_b = params.add("tokens.bias", Tensor::zeros([d]), true)?;
        let position = if config.positional {
            let t = init::normal(seed, "tokens.position", &[config.frames, d], 0.0, 0.1);
            Some(params.add("tokens.position", t, true)?)
        } else {
            None
        };
        let encoder = (0..config.layers)
            .map(|l| EncoderLayer::new(&mut params, &format!("encoder{l}"), d, config.mlp_dim, config.heads, seed))
            .collect::<Result<Vec<_>>>()?;
        let head_w = params.add("head.weight", lecun(seed, "head.weight", &[d, config.num_classes], d), true)?;
        let head_b = params.add("head.bias", Tensor::zeros([config.num_classes]), true)?;

        for p in params.iter_mut() {
            p.tensor.round_to_f32();
        }

        Ok(DferModel {
            config,
            params,
            stages,
            attention,
            aux,
            token_w,
            token_b,
            position,
            encoder,
            head_w,
            head_b,
            input_mean,
            input_std,
        })
    }

    pub fn encoder(&self) -> &[EncoderLayer] {
        &self.encoder
    }

    pub fn attention_blocks(&self) -> &[AttentionBlock] {
        &self.attention
    }

    /// Names of the convolution weights (not biases) of every stage.
    pub fn conv_weight_names(&self) -> Vec<String> {
        self.stages
            .iter()
            .flat_map(|s| [s.conv1_w, s.conv2_w, s.skip_w])
            .map(|id| self.params.get(id).name.clone())
            .collect()
    }

    /// Per-channel input statistics used by [`DferModel::normalize`].
    pub fn set_input_stats(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let c = self.config.in_channels;
        if mean.len() != c || std.len() != c || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::contract(format!(
                "input statistics need {c} means and {c} positive stds"
            )));
        }
        self.params.get_mut(self.input_mean).tensor = Tensor::new([c], mean.to_vec())?;
        self.params.get_mut(self.input_std).tensor = Tensor::new([c], std.to_vec())?;
        self.params.get_mut(self.input_mean).tensor.round_to_f32();
        self.params.get_mut(self.input_std).tensor.round_to_f32();
        Ok(())
    }

    /// `(x − mean_c) / std_c` per channel of a `[T, C, H, W]` clip.
    pub fn normalize(&self, clip: &Tensor) -> Result<Tensor> {
        let c = self.config.in_channels;
        if clip.rank() != 4 || clip.shape()[1] != c {
            return Err(Error::shape("normalize", clip.shape(), &[c]));
        }
        let plane = clip.shape()[2] * clip.shape()[3];
        let mean = self.params.get(self.input_mean).tensor.data();
        let std = self.params.get(self.input_std).tensor.data();
        let mut out = clip.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = (*v - mean[ch]) / std[ch];
            }
        }
        Ok(out)
    }

    fn check_clip(&self, tape: &Tape, clip: Var) -> Result<()> {
        let cfg = &self.config;
        let want = [cfg.frames, cfg.in_channels, cfg.height, cfg.width];
        if tape.shape(clip) != want {
            return Err(Error::shape("classify", tape.shape(clip), &want));
        }
        Ok(())
    }

    /// Residual stages and attention. Returns the final features, the aux
    /// logits, and the attention weights of each site.
    pub fn backbone_forward(&self, tape: &mut Tape, b: &Bindings, clip: Var) -> Result<(Var, Vec<Var>, Vec<Var>)> {
        self.check_clip(tape, clip)?;
        let mut x = clip;
        let mut aux_logits = Vec::new();
        let mut weights = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let h = tape.conv2d(x, b.var(stage.conv1_w), Some(b.var(stage.conv1_b)), 2, 1)?;
            let h = tape.relu(h)?;
            let h = tape.conv2d(h, b.var(stage.conv2_w), Some(b.var(stage.conv2_b)), 1, 1)?;
            let skip = tape.conv2d(x, b.var(stage.skip_w), Some(b.var(stage.skip_b)), 2, 0)?;
            let sum = tape.add(h, skip)?;
            x = tape.relu(sum)?;
            if let Some(block) = self.attention.get(i) {
                let out = block.forward(tape, b, x)?;
                x = out.features;
                weights.push(out.weights);
                if let Some(head) = self.aux.get(i) {
                    aux_logits.push(self.aux_head(tape, b, head, x)?);
                }
            }
        }
        Ok((x, aux_logits, weights))
    }

    fn aux_head(&self, tape: &mut Tape, b: &Bindings, head: &AuxHead, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let flat = tape.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
        let spatial = tape.mean(flat, 2)?;
        let pooled = tape.mean(spatial, 0)?;
        let row = tape.reshape(pooled, &[1, s[1]])?;
        tape.linear(row, b.var(head.weight), Some(b.var(head.bias)))
    }

    /// Stacked encoder layers over `[T, D]` tokens. Also returns each layer's
    /// attention matrix.
    pub fn temporal_transformer(&self, tape: &mut Tape, b: &Bindings, tokens: Var) -> Result<(Var, Vec<Var>)> {
        let d = self.config.token_dim;
        let shape = tape.shape(tokens);
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::shape("temporal_transformer", shape, &[d]));
        }
        let mut x = tokens;
        let mut maps = Vec::new();
        for layer in &self.encoder {
            let (y, attn) = layer.forward(tape, b, x)?;
            x = y;
            maps.push(attn);
        }
        Ok((x, maps))
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, clip: Var) -> Result<ModelOutput> {
        let (features, aux_logits, attention_weights) = self.backbone_forward(tape, b, clip)?;
        let fused = fuse_frames(tape, features, self.config.fusion)?;
        let s = tape.shape(fused).to_vec();
        let flat = tape.reshape(fused, &[s[0], s[1] * s[2] * s[3]])?;
        let mut tokens = tape.linear(flat, b.var(self.token_w), Some(b.var(self.token_b)))?;
        if let Some(pos) = self.position {
            tokens = tape.add(tokens, b.var(pos))?;
        }
        let (encoded, encoder_attention) = self.temporal_transformer(tape, b, tokens)?;
        let pooled = tape.mean(encoded, 0)?;
        let row = tape.reshape(pooled, &[1, self.config.token_dim])?;
        let logits = tape.linear(row, b.var(self.head_w), Some(b.var(self.head_b)))?;
        Ok(ModelOutput {
            logits,
            aux_logits,
            attention_weights,
            encoder_attention,
            features,
        })
    }

    /// Main and auxiliary logits for one clip, without normalization.
    pub fn classify(&self, clip: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let x = tape.constant(clip.clone());
        let out = self.forward(&mut tape, &b, x)?;
        let aux = out.aux_logits.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((tape.value(out.logits).clone(), aux))
    }

    /// Normalize then classify; returns main logits.
    pub fn predict(&self, clip: &Tensor) -> Result<Tensor> {
        let x = self.normalize(clip)?;
        Ok(self.classify(&x)?.0)
    }

    pub fn attention_kind(&self) -> AttentionKind {
        self.config.attention
    }
}

/// Frame mixing ahead of tokenization. `features: [T, C, H, W]`.
pub fn fuse_frames(tape: &mut Tape, features: Var, kind: FusionKind) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 4 || shape[0] == 0 {
        return Err(Error::shape("fuse_frames", &shape, &[]));
    }
    match kind {
        FusionKind::Identity => Ok(features),
        FusionKind::FrameDiff => {
            let frame = shape[1] * shape[2] * shape[3];
            let indices = (0..shape[0])
                .flat_map(|t| {
                    let src = t.saturating_sub(1);
                    src * frame..(src + 1) * frame
                })
                .collect();
            let previous = tape.gather(features, indices, &shape)?;
            let diff = tape.sub(features, previous)?;
            tape.add(features, diff)
        }
    }
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_diff_hand_example() {
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new([2, 1, 1, 1], vec![1.0, 3.0]).unwrap());
        let out = fuse_frames(&mut tape, f, FusionKind::FrameDiff).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 5.0]);
    }

    #[test]
    fn frame_diff_of_static_clip_is_identity() {
        let mut tape = Tape::new();
        let frame: Vec<f64> = (0..6).map(|i| i as f64 * 0.37 - 1.0).collect();
        let data: Vec<f64> = frame.iter().cycle().take(18).copied().collect();
        let x = Tensor::new([3, 2, 1, 3], data).unwrap();
        let f = tape.constant(x.clone());
        let out = fuse_frames(&mut tape, f, FusionKind::FrameDiff).unwrap();
        assert!(tape.value(out).bitwise_eq(&x));
        let id = fuse_frames(&mut tape, f, FusionKind::Identity).unwrap();
        assert!(tape.value(id).bitwise_eq(&x));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn parameter_names_unique_and_count_stable() {
        let a = DferModel::new(ModelConfig::desk()).unwrap();
        let b = DferModel::new(ModelConfig::desk()).unwrap();
        assert_eq!(a.params.len(), b.params.len());
        assert_eq!(a.params.trainable_count(), b.params.trainable_count());
        let names: std::collections::HashSet<_> = a.params.iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), a.params.len());
    }

    #[test]
    fn backbone_shape_without_attention() {
        let cfg = ModelConfig {
            attention: AttentionKind::None,
            aux: false,
            frames: 2,
            ..ModelConfig::desk()
        };
        let model = DferModel::new(cfg).unwrap();
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape);
        let x = tape.constant(Tensor::full([2, 3, 32, 32], 0.1));
        let (f, aux, w) = model.backbone_forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.shape(f), &[2, 32, 4, 4]);
        assert!(aux.is_empty() && w.is_empty());
    }

    #[test]
    fn wrong_clip_shape_rejected() {
        let model = DferModel::new(ModelConfig::tiny()).unwrap();
        assert!(matches!(
            model.classify(&Tensor::zeros([2, 3, 8, 7])),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
