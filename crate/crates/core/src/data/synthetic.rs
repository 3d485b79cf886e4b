//! Intensity-graded synthetic clips.
//!
//! Class 0 is neutral. A frame of a class-`k` clip with intensity `α` is
//!
//! ```text
//! B + α · m(t) · P_k + ε
//! ```
//!
//! with a fixed base pattern `B`, unit-norm class patterns `P_k`, a per-clip
//! modulation `m(t) ∈ [0.5, 1]` and Gaussian noise `ε`. Neutral clips are
//! `B + ε`, so every class approaches neutral as `α → 0`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_clip, ClipRecord, Dataset, DatasetInfo, Manifest, Split};
use crate::error::{Error, Result};
use crate::init::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modulation {
    /// Onset, apex, offset: a raised-cosine bump with a per-clip centre and width.
    RaisedCosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of non-neutral clips drawn from the low-intensity range.
    pub p_low: f64,
    /// Intensities are drawn uniformly from `(lo, hi]`.
    pub low_range: (f64, f64),
    pub high_range: (f64, f64),
    pub noise_std: f64,
    /// Gaussian blobs summed into each class pattern.
    pub blobs: usize,
    /// Blob radius (standard deviation) in pixels.
    pub blob_sigma: f64,
    pub modulation: Modulation,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 7,
            train_per_class: 24,
            test_per_class: 60,
            min_frames: 8,
            max_frames: 16,
            channels: 3,
            height: 32,
            width: 32,
            p_low: 0.5,
            low_range: (0.05, 0.3),
            high_range: (0.6, 1.0),
            noise_std: 0.03,
            blobs: 2,
            blob_sigma: 3.0,
            modulation: Modulation::RaisedCosine,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!("frame range [{}, {}] is empty", self.min_frames, self.max_frames));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("frame dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_low) {
            return bad(format!("p_low {} outside [0, 1]", self.p_low));
        }
        for (name, (lo, hi)) in [("low_range", self.low_range), ("high_range", self.high_range)] {
            if !(lo >= 0.0 && lo <= hi && hi <= 1.0 && hi > 0.0) {
                return bad(format!("{name} ({lo}, {hi}] must lie within (0, 1]"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative".into());
        }
        if self.blobs == 0 || !(self.blob_sigma > 0.0) {
            return bad("class patterns need at least one blob of positive radius".into());
        }
        Ok(())
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// The fixed neutral base and the unit-norm class patterns (`classes[0]` is
/// all zeros for the neutral class).
#[derive(Debug, Clone)]
pub struct Patterns {
    pub base: Tensor,
    pub classes: Vec<Tensor>,
}

fn unit(mut t: Tensor) -> Tensor {
    let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    t.scale_assign(1.0 / norm);
    t
}

fn blob_pattern<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Tensor {
    let [c, h, w] = cfg.frame_shape();
    let mut t = Tensor::zeros([c, h, w]);
    for _ in 0..cfg.blobs {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let weights: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s2 = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
        for (ch, &wt) in weights.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let d = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let i = (ch * h + y) * w + x;
                    t.data_mut()[i] += wt * (-d / s2).exp();
                }
            }
        }
    }
    unit(t)
}

pub fn patterns(cfg: &SyntheticConfig) -> Patterns {
    let mut rng = rng_for(cfg.seed, "synthetic/patterns");
    let base = blob_pattern(&SyntheticConfig { blobs: 4, blob_sigma: 6.0, ..cfg.clone() }, &mut rng);
    let mut classes = vec![Tensor::zeros(cfg.frame_shape())];
    classes.extend((1..cfg.num_classes).map(|_| blob_pattern(cfg, &mut rng)));
    Patterns { base, classes }
}

/// Per-frame modulation for an `n`-frame clip; values in `[0.5, 1]`.
pub fn modulation_profile<R: Rng>(kind: Modulation, n: usize, rng: &mut R) -> Vec<f64> {
    match kind {
        Modulation::Constant => vec![1.0; n],
        Modulation::RaisedCosine => {
            let centre = rng.random_range(0.4..0.6);
            let half_width = rng.random_range(0.3..0.5);
            (0..n)
                .map(|t| {
                    let u = (t as f64 + 0.5) / n as f64;
                    let z = ((u - centre) / half_width).clamp(-1.0, 1.0);
                    0.5 + 0.25 * (1.0 + (std::f64::consts::PI * z).cos())
                })
                .collect()
        }
    }
}

fn draw_in<R: Rng>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    hi - (hi - lo) * rng.random::<f64>()
}

/// Frames `[n, C, H, W]` of one clip, with noise drawn from `rng`.
pub fn render_clip<R: Rng>(
    p: &Patterns,
    label: usize,
    alpha: f64,
    profile: &[f64],
    noise_std: f64,
    rng: &mut R,
) -> Tensor {
    let frame = p.base.len();
    let shape = p.base.shape();
    let mut data = Vec::with_capacity(profile.len() * frame);
    let noise = (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("finite std"));
    for &m in profile {
        for (b, q) in p.base.data().iter().zip(p.classes[label].data()) {
            let eps = noise.map_or(0.0, |d| d.sample(rng));
            data.push(b + alpha * m * q + eps);
        }
    }
    Tensor::new([profile.len(), shape[0], shape[1], shape[2]], data).expect("shape")
}

/// Write a synthetic dataset under `root` and return it opened.
pub fn generate_synthetic(cfg: &SyntheticConfig, root: impl AsRef<Path>) -> Result<Dataset> {
    cfg.validate()?;
    let root = root.as_ref().to_path_buf();
    let pats = patterns(cfg);
    let mut manifests = Vec::new();
    for (split, per_class) in [(Split::Train, cfg.train_per_class), (Split::Test, cfg.test_per_class)] {
        let dir = root.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut records = Vec::new();
        for label in 0..cfg.num_classes {
            for i in 0..per_class {
                let mut rng = rng_for(cfg.seed, &format!("synthetic/{}/{label}/{i}", split.as_str()));
                let n = rng.random_range(cfg.min_frames..=cfg.max_frames);
                let alpha = if label == 0 {
                    0.0
                } else if rng.random::<f64>() < cfg.p_low {
                    draw_in(cfg.low_range, &mut rng)
                } else {
                    draw_in(cfg.high_range, &mut rng)
                };
                let profile = modulation_profile(cfg.modulation, n, &mut rng);
                let clip = render_clip(&pats, label, alpha, &profile, cfg.noise_std, &mut rng);
                let path = dir.join(format!("c{label}_{i:04}.clip"));
                write_clip(&path, &clip)?;
                records.push(ClipRecord {
                    path,
                    label,
                    num_frames: n,
                    intensity: Some(alpha),
                });
            }
        }
        let manifest = Manifest {
            records,
            num_classes: cfg.num_classes,
            split,
        };
        manifest.save(root.join(format!("{}.csv", split.as_str())), &root)?;
        manifests.push(manifest);
    }
    let test = manifests.pop().expect("two splits");
    let train = manifests.pop().expect("two splits");
    let ds = Dataset {
        root,
        info: DatasetInfo {
            num_classes: cfg.num_classes,
            channels: cfg.channels,
            height: cfg.height,
            width: cfg.width,
            synthetic: Some(cfg.clone()),
        },
        train,
        test,
    };
    ds.save_info()?;
    Ok(ds)
}
