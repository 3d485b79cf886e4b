//! Mini-batch SGD with exponential learning-rate decay.
//!
//! Each clip of a batch is run on its own tape, possibly in parallel; the
//! per-clip gradients are summed in batch order so results do not depend on
//! the thread count. Parameters are rounded to f32 after every step, which
//! keeps f32 checkpoints exact.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{load_clip, sample_train_indices, Manifest};
use crate::error::{Error, Result};
use crate::init::{rng_for, stream_seed};
use crate::losses::{combined_loss, LossConfig};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{argmax, DferModel};
use crate::param::{sgd_step, ParamGrads};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f64 = 0.96;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Per-epoch decay factor of the learning rate.
    pub gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Segments per clip.
    pub u: usize,
    /// Frames per segment.
    pub v: usize,
    pub flip: bool,
    /// Zero padding before the random crop; 0 disables cropping.
    pub crop_pad: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            base_lr: 0.02,
            gamma: DEFAULT_GAMMA,
            batch_size: 8,
            seed: 0,
            loss: LossConfig::default(),
            u: 8,
            v: 1,
            flip: false,
            crop_pad: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.u == 0 || self.v == 0 {
            return Err(Error::config("batch_size, u and v must be positive"));
        }
        self.loss.validate()
    }
}

/// `base_lr · γ^epoch`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.base_lr * cfg.gamma.powi(epoch as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_war: f64,
    pub test_uar: Option<f64>,
    pub test_war: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        w.write_record(["epoch", "lr", "loss", "train_war", "test_uar", "test_war"])?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Per-channel mean and standard deviation over every frame of `clips`.
pub fn channel_stats(clips: &[Tensor], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    for clip in clips {
        let plane = clip.shape()[2] * clip.shape()[3];
        for (i, chunk) in clip.data().chunks(plane).enumerate() {
            let c = i % channels;
            sum[c] += chunk.iter().sum::<f64>();
            sq[c] += chunk.iter().map(|v| v * v).sum::<f64>();
            count[c] += chunk.len();
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n.max(1) as f64).collect();
    let std = sq
        .iter()
        .zip(&count)
        .zip(&mean)
        .map(|((q, &n), m)| (q / n.max(1) as f64 - m * m).max(0.0).sqrt().max(1e-6))
        .collect();
    (mean, std)
}

fn select_frames(clip: &Tensor, indices: &[usize]) -> Tensor {
    let s = clip.shape();
    let frame = s[1] * s[2] * s[3];
    let mut data = Vec::with_capacity(indices.len() * frame);
    for &i in indices {
        data.extend_from_slice(&clip.data()[i * frame..(i + 1) * frame]);
    }
    Tensor::new([indices.len(), s[1], s[2], s[3]], data).expect("frame selection")
}

/// Mirror every frame left to right.
pub fn flip_horizontal(clip: &mut Tensor) {
    let w = clip.shape()[3];
    for row in clip.data_mut().chunks_mut(w) {
        row.reverse();
    }
}

/// Translate every frame by `(dy, dx)`, filling uncovered pixels with zero.
/// Equivalent to zero-padding and cropping at an offset.
pub fn shift(clip: &Tensor, dy: isize, dx: isize) -> Tensor {
    let s = clip.shape();
    let (h, w) = (s[2] as isize, s[3] as isize);
    let mut out = Tensor::zeros(s);
    let plane = (h * w) as usize;
    for (src, dst) in clip.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)) {
        for y in 0..h {
            let sy = y - dy;
            if !(0..h).contains(&sy) {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if (0..w).contains(&sx) {
                    dst[(y * w + x) as usize] = src[(sy * w + sx) as usize];
                }
            }
        }
    }
    out
}

/// Sample, normalize and augment one training clip.
pub fn prepare_train_clip<R: Rng>(model: &DferModel, full: &Tensor, cfg: &TrainConfig, rng: &mut R) -> Result<Tensor> {
    let idx = sample_train_indices(full.shape()[0], cfg.u, cfg.v, rng);
    let mut x = model.normalize(&select_frames(full, &idx))?;
    if cfg.flip && rng.random_bool(0.5) {
        flip_horizontal(&mut x);
    }
    if cfg.crop_pad > 0 {
        let p = cfg.crop_pad as i64;
        let dy = rng.random_range(-p..=p) as isize;
        let dx = rng.random_range(-p..=p) as isize;
        x = shift(&x, dy, dx);
    }
    Ok(x)
}

struct ClipResult {
    loss: f64,
    correct: bool,
    grads: ParamGrads,
}

fn clip_step(model: &DferModel, x: Tensor, label: usize, loss_cfg: &LossConfig) -> Result<ClipResult> {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, &b, xv)?;
    let loss = combined_loss(&mut tape, out.logits, &out.aux_logits, &[label], loss_cfg)?;
    let value = tape.value(loss).item()?;
    let correct = argmax(tape.value(out.logits).data()) == label;
    let grads = tape.backward(loss)?;
    Ok(ClipResult {
        loss: value,
        correct,
        grads: b.collect(&model.params, grads),
    })
}

/// Seed of batch `batch` in epoch `epoch`; reported when training diverges.
pub fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    stream_seed(seed, &format!("train/epoch{epoch}/batch{batch}"))
}

/// Train `model` in place. When `test` is given it is evaluated after every
/// epoch. With `epochs == 0` the model is left untouched.
pub fn train(model: &mut DferModel, cfg: &TrainConfig, train: &Manifest, test: Option<&Manifest>) -> Result<TrainLog> {
    cfg.validate()?;
    if cfg.u * cfg.v != model.config.frames {
        return Err(Error::config(format!(
            "sampler gives {}×{} frames, model expects {}",
            cfg.u, cfg.v, model.config.frames
        )));
    }
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if train.is_empty() {
        return Err(Error::contract("cannot train on an empty manifest"));
    }
    let clips: Vec<Tensor> = train
        .records
        .par_iter()
        .map(|r| load_clip(r, &(0..r.num_frames).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let (mean, std) = channel_stats(&clips, model.config.in_channels);
    model.set_input_stats(&mean, &std)?;

    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng_for(cfg.seed, &format!("train/epoch{epoch}/shuffle")));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bseed = batch_seed(cfg.seed, epoch, bi);
            let diverged = || Error::Diverged { epoch, batch_seed: bseed };
            let model_ref = &*model;
            let results: Vec<ClipResult> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &ci)| {
                    let mut rng = rng_for(bseed, &format!("clip{j}"));
                    let x = prepare_train_clip(model_ref, &clips[ci], cfg, &mut rng)?;
                    clip_step(model_ref, x, train.records[ci].label, &cfg.loss)
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NumericOverflow { .. } => diverged(),
                    other => other,
                })?;
            let mut grads = ParamGrads::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            for r in &results {
                grads.accumulate(&r.grads);
                batch_loss += r.loss;
                correct += usize::from(r.correct);
            }
            if !batch_loss.is_finite() {
                return Err(diverged());
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model.params, &grads, lr)?;
            for p in model.params.iter_mut() {
                p.tensor.round_to_f32();
                if !p.tensor.is_finite() {
                    return Err(diverged());
                }
            }
        }
        let report: Option<EvalReport> = match test {
            Some(t) => Some(evaluate(model, t, cfg.u, cfg.v)?),
            None => None,
        };
        log.epochs.push(EpochLog {
            epoch,
            lr,
            loss: loss_sum / clips.len() as f64,
            train_war: correct as f64 / clips.len() as f64,
            test_uar: report.as_ref().map(|r| r.uar),
            test_war: report.as_ref().map(|r| r.war),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig {
            base_lr: 0.001,
            gamma: 0.9,
            ..Default::default()
        };
        assert_eq!(lr_at_epoch(&cfg, 0), 0.001);
        assert!((lr_at_epoch(&cfg, 2) - 0.00081).abs() < 1e-15);
        let flat = TrainConfig { gamma: 1.0, ..cfg };
        assert_eq!(lr_at_epoch(&flat, 50), 0.001);
    }

    #[test]
    fn shift_and_flip() {
        let x = Tensor::new([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(shift(&x, 0, 1).data(), &[0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
        assert_eq!(shift(&x, -1, 0).data(), &[4.0, 5.0, 6.0, 0.0, 0.0, 0.0]);
        assert!(shift(&x, 0, 0).bitwise_eq(&x));
        let mut f = x.clone();
        flip_horizontal(&mut f);
        assert_eq!(f.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn stats_of_constant_channels() {
        let mut clip = Tensor::zeros([2, 2, 1, 2]);
        for (i, v) in clip.data_mut().iter_mut().enumerate() {
            *v = if (i / 2) % 2 == 0 { 3.0 } else { -1.0 };
        }
        let (m, s) = channel_stats(&[clip], 2);
        assert_eq!(m, vec![3.0, -1.0]);
        assert!(s.iter().all(|&v| v == 1e-6));
    }

    #[test]
    fn log_csv_header() {
        let log = TrainLog {
            epochs: vec![EpochLog {
                epoch: 0,
                lr: 0.5,
                loss: 1.25,
                train_war: 0.5,
                test_uar: None,
                test_war: Some(0.25),
            }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,lr,loss,train_war,test_uar,test_war\n0,0.5,1.25,0.5,,0.25\n"
        );
    }
}
