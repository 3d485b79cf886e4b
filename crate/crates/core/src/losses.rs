//! Cross-entropy, the intensity-aware loss, and their weighted sum.
//!
//! The intensity-aware loss is a two-way softmax between the target logit
//! and the largest non-target logit:
//!
//! ```text
//! P_IA = e^{x_t} / (e^{x_t} + e^{x_max}),    L_IA = −log P_IA
//! ```
//!
//! `x_max` is a hard selection (lowest index on ties), so each sample sends
//! gradient to exactly two logits.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_AUX_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Coefficient of the intensity-aware term.
    pub lambda: f64,
    /// Weight of each auxiliary classifier's loss.
    pub aux_weight: f64,
    /// Also add `lambda · L_IA` on every auxiliary head.
    pub ial_on_aux: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            aux_weight: DEFAULT_AUX_WEIGHT,
            ial_on_aux: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("aux_weight", self.aux_weight)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_logits(tape: &Tape, logits: Var, targets: &[usize], op: &str) -> Result<(usize, usize)> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::contract(format!(
            "{op}: logits of shape {shape:?} for {} targets",
            targets.len()
        )));
    }
    let (b, k) = (shape[0], shape[1]);
    if k < 2 {
        return Err(Error::contract(format!("{op}: needs at least two classes, got {k}")));
    }
    if b == 0 {
        return Err(Error::contract(format!("{op}: empty batch")));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::contract(format!("{op}: target {t} out of range for {k} classes")));
    }
    Ok((b, k))
}

/// Mean over the batch of `−log softmax(logits)[target]`. `logits: [B, K]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let (_, k) = check_logits(tape, logits, targets, "cross_entropy")?;
    let logp = tape.log_softmax(logits)?;
    let picks = targets.iter().enumerate().map(|(i, &t)| i * k + t).collect();
    let picked = tape.gather(logp, picks, &[targets.len()])?;
    let mean = tape.mean(picked, 0)?;
    tape.scale(mean, -1.0)
}

/// Index of the largest non-target entry, lowest index on ties.
pub fn hardest_negative(row: &[f64], target: usize) -> usize {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == target {
            continue;
        }
        match best {
            Some(b) if row[b] >= v => {}
            _ => best = Some(j),
        }
    }
    best.expect("at least two classes")
}

/// Mean over the batch of `−log(e^{x_t} / (e^{x_t} + e^{x_max}))`. `logits: [B, K]`.
pub fn intensity_aware_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let (b, k) = check_logits(tape, logits, targets, "intensity_aware_loss")?;
    let values = tape.value(logits).data();
    let mut picks = Vec::with_capacity(2 * b);
    for (i, &t) in targets.iter().enumerate() {
        let row = &values[i * k..(i + 1) * k];
        picks.push(i * k + t);
        picks.push(i * k + hardest_negative(row, t));
    }
    let pair = tape.gather(logits, picks, &[b, 2])?;
    let logp = tape.log_softmax(pair)?;
    let target_col = (0..b).map(|i| 2 * i).collect();
    let picked = tape.gather(logp, target_col, &[b])?;
    let mean = tape.mean(picked, 0)?;
    tape.scale(mean, -1.0)
}

/// `L_CE + λ·L_IA` on the main head plus `aux_weight · Σ L_CE` over auxiliary
/// heads. Terms whose weight is zero are left off the tape entirely.
pub fn combined_loss(
    tape: &mut Tape,
    logits: Var,
    aux_logits: &[Var],
    targets: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let mut total = cross_entropy(tape, logits, targets)?;
    if cfg.lambda != 0.0 {
        let ial = intensity_aware_loss(tape, logits, targets)?;
        let ial = tape.scale(ial, cfg.lambda)?;
        total = tape.add(total, ial)?;
    }
    if cfg.aux_weight != 0.0 {
        for &aux in aux_logits {
            let mut term = cross_entropy(tape, aux, targets)?;
            if cfg.ial_on_aux && cfg.lambda != 0.0 {
                let ial = intensity_aware_loss(tape, aux, targets)?;
                let ial = tape.scale(ial, cfg.lambda)?;
                term = tape.add(term, ial)?;
            }
            let term = tape.scale(term, cfg.aux_weight)?;
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}
