//! The finite-difference suite behind `ialgca gradcheck`: every primitive on
//! random shapes, each attention block, each loss, frame fusion, one encoder
//! layer, and the tiny model end to end.
//!
//! Tensor-valued cases are checked one output entry at a time, which covers
//! the whole Jacobian. Inputs are registered as parameters so they are
//! checked too.
//! Inputs of `relu`, `max` and the IAL selection are kept away from their
//! kinks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{temporal_rescale, AttentionBlock, AttentionKind, BlockInit};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{self, DEFAULT_EPSILON};
use crate::init::{normal, rng_for};
use crate::losses::{combined_loss, cross_entropy, intensity_aware_loss, LossConfig};
use crate::model::{fuse_frames, DferModel, EncoderLayer, FusionKind, ModelConfig};
use crate::param::{Bindings, ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

/// Tolerance for primitives and blocks.
pub const BLOCK_TOLERANCE: f64 = 1e-6;
/// Tolerance for the full model.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
/// Random cases per primitive.
pub const PRIMITIVE_CASES: usize = 20;
/// Random cases per block or loss.
pub const BLOCK_CASES: usize = 4;
/// Cases with a ReLU input or a max gap closer than this to its kink are
/// redrawn: a `±ε` step there crosses the kink.
pub const KINK_MARGIN: f64 = 1e-3;
/// Give up after this many draws per accepted case.
const MAX_DRAWS_PER_CASE: usize = 20;

pub const MODULES: [&str; 4] = ["tensor-autodiff", "attention-blocks", "losses", "model"];

/// `None` when the drawn case lies too close to a kink and must be redrawn.
type CaseFn = fn(&mut ChaCha8Rng, u64) -> Result<Option<f64>>;

/// One named check of the suite.
#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub module: &'static str,
    pub tolerance: f64,
    pub cases: usize,
    run: CaseFn,
}

impl std::fmt::Debug for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Check")
            .field("name", &self.name)
            .field("module", &self.module)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub module: &'static str,
    pub tolerance: f64,
    pub cases: usize,
    /// Draws rejected for lying near a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

const fn prim(name: &'static str, run: CaseFn) -> Check {
    Check {
        name,
        module: "tensor-autodiff",
        tolerance: BLOCK_TOLERANCE,
        cases: PRIMITIVE_CASES,
        run,
    }
}

const fn block(name: &'static str, module: &'static str, run: CaseFn) -> Check {
    Check {
        name,
        module,
        tolerance: BLOCK_TOLERANCE,
        cases: BLOCK_CASES,
        run,
    }
}

pub fn checks() -> Vec<Check> {
    vec![
        prim("matmul", case_matmul),
        prim("add", case_add),
        prim("sub", case_sub),
        prim("mul", case_mul),
        prim("mul_channel", case_mul_channel),
        prim("mul_trailing", case_mul_trailing),
        prim("add_trailing", case_add_trailing),
        prim("relu", case_relu),
        prim("sigmoid", case_sigmoid),
        prim("sqrt", case_sqrt),
        prim("exp", case_exp),
        prim("log", case_log),
        prim("softmax", case_softmax),
        prim("log_softmax", case_log_softmax),
        prim("mean", case_mean),
        prim("weighted_spatial_sum", case_weighted_spatial_sum),
        prim("conv2d", case_conv2d),
        prim("layer_norm", case_layer_norm),
        prim("scale", case_scale),
        prim("concat", case_concat),
        prim("reshape", case_reshape),
        prim("permute", case_permute),
        prim("max_last_axis", case_max_last_axis),
        prim("gather", case_gather),
        prim("shared_input", case_shared_input),
        block("se", "attention-blocks", case_se),
        block("cbam", "attention-blocks", case_cbam),
        block("gca", "attention-blocks", case_gca),
        block("temporal_rescale", "attention-blocks", case_temporal_rescale),
        block("cross_entropy", "losses", case_ce),
        block("ial", "losses", case_ial),
        block("ial_near_tie", "losses", case_ial_near_tie),
        block("combined_loss", "losses", case_combined),
        block("fusion", "model", case_fusion),
        block("transformer_layer", "model", case_transformer),
        Check {
            name: "tiny_model",
            module: "model",
            tolerance: END_TO_END_TOLERANCE,
            cases: 2,
            run: case_tiny_model,
        },
    ]
}

/// Checks whose name or module equals `filter`; all of them for `None`.
pub fn select(filter: Option<&str>) -> Result<Vec<Check>> {
    let all = checks();
    let Some(f) = filter else { return Ok(all) };
    let picked: Vec<Check> = all.into_iter().filter(|c| c.name == f || c.module == f).collect();
    if picked.is_empty() {
        return Err(Error::config(format!(
            "no gradient check named {f:?} (modules: {})",
            MODULES.join(", ")
        )));
    }
    Ok(picked)
}

/// Run one check over its random cases; reports the worst case.
pub fn run_check(check: &Check, seed: u64) -> Result<CheckResult> {
    let mut rng = rng_for(seed, &format!("gradsuite/{}", check.name));
    let mut worst: f64 = 0.0;
    let (mut accepted, mut draws) = (0, 0u64);
    while accepted < check.cases {
        if draws as usize >= check.cases * MAX_DRAWS_PER_CASE {
            return Err(Error::OracleInvalid(format!(
                "{}: only {accepted} of {} cases clear of kinks after {draws} draws",
                check.name, check.cases
            )));
        }
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(draws);
        draws += 1;
        if let Some(err) = (check.run)(&mut rng, case_seed)? {
            worst = worst.max(err);
            accepted += 1;
        }
    }
    Ok(CheckResult {
        name: check.name,
        module: check.module,
        tolerance: check.tolerance,
        cases: check.cases,
        redrawn: draws as usize - check.cases,
        max_rel_error: worst,
    })
}

pub fn run_suite(filter: Option<&str>, seed: u64) -> Result<Vec<CheckResult>> {
    select(filter)?.iter().map(|c| run_check(c, seed)).collect()
}

// ---- helpers ------------------------------------------------------------

fn randn(seed: u64, tag: &str, shape: &[usize]) -> Tensor {
    normal(seed, tag, shape, 0.0, 1.0)
}

fn map(t: Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let shape = t.shape().to_vec();
    let data = t.into_data().into_iter().map(f).collect();
    Tensor::new(shape, data).expect("same shape")
}

/// Magnitudes at least 0.2, so `±ε` never crosses zero.
fn away_from_zero(t: Tensor) -> Tensor {
    map(t, |x| x.signum() * (0.2 + x.abs()))
}

fn positive(t: Tensor) -> Tensor {
    map(t, |x| 0.5 + x.abs())
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(lo..=hi)).collect()
}

fn add(store: &mut ParamStore, name: &str, t: Tensor) -> Result<ParamId> {
    store.add(name, t, true)
}

/// Check every output entry as its own scalar function, i.e. the full
/// Jacobian row by row. Each row's finite difference only carries the rounding
/// of that one entry.
fn projected<F>(store: &mut ParamStore, _seed: u64, f: F) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let n = {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let y = f(&mut tape, &b)?;
        if gradcheck::kink_distance(&tape) < KINK_MARGIN {
            return Ok(None);
        }
        numel(tape.shape(y))
    };
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let report = gradcheck::check(store, DEFAULT_EPSILON, |tape, b| {
            let y = f(tape, b)?;
            let flat = tape.reshape(y, &[n])?;
            tape.gather(flat, vec![j], &[])
        })?;
        worst = worst.max(report.max_rel_error());
    }
    Ok(Some(worst))
}

fn scalar_loss<F>(store: &mut ParamStore, f: F) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    f(&mut tape, &b)?;
    if gradcheck::kink_distance(&tape) < KINK_MARGIN {
        return Ok(None);
    }
    Ok(Some(gradcheck::check(store, DEFAULT_EPSILON, f)?.max_rel_error()))
}

fn unary_case(rng: &mut ChaCha8Rng, seed: u64, prep: fn(Tensor) -> Tensor, op: fn(&mut Tape, Var) -> Result<Var>) -> Result<Option<f64>> {
    let rank = rng.random_range(1..=3);
    let shape = dims(rng, rank, 1, 4);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", prep(randn(seed, "x", &shape)))?;
    projected(&mut s, seed, |t, b| op(t, b.var(x)))
}

fn binary_case(
    rng: &mut ChaCha8Rng,
    seed: u64,
    suffix_rhs: Option<bool>,
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<Option<f64>> {
    let rank = rng.random_range(2..=4);
    let shape = dims(rng, rank, 1, 4);
    let rhs_shape = match suffix_rhs {
        None => shape.clone(),
        Some(true) => shape[rng.random_range(1..rank)..].to_vec(),
        Some(false) => shape[..rng.random_range(1..rank)].to_vec(),
    };
    let mut s = ParamStore::new();
    let a = add(&mut s, "a", randn(seed, "a", &shape))?;
    let r = add(&mut s, "b", randn(seed, "b", &rhs_shape))?;
    projected(&mut s, seed, |t, b| op(t, b.var(a), b.var(r)))
}

// ---- primitives ---------------------------------------------------------

fn case_matmul(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let batch_rank = rng.random_range(0..=1);
    let batch = dims(rng, batch_rank, 1, 3);
    let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let mut s = ParamStore::new();
    let a = add(&mut s, "a", randn(seed, "a", &[batch.clone(), vec![m, k]].concat()))?;
    let w = add(&mut s, "b", randn(seed, "b", &[batch, vec![k, n]].concat()))?;
    projected(&mut s, seed, |t, b| t.matmul(b.var(a), b.var(w)))
}

fn case_add(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    binary_case(rng, seed, None, Tape::add)
}

fn case_sub(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    binary_case(rng, seed, None, Tape::sub)
}

fn case_mul(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    binary_case(rng, seed, None, Tape::mul)
}

fn case_mul_channel(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    binary_case(rng, seed, Some(false), Tape::mul_channel)
}

fn case_mul_trailing(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    binary_case(rng, seed, Some(true), Tape::mul_trailing)
}

fn case_add_trailing(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    binary_case(rng, seed, Some(true), Tape::add_trailing)
}

fn case_relu(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, away_from_zero, Tape::relu)
}

fn case_sigmoid(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, |t| map(t, |x| 2.0 * x), Tape::sigmoid)
}

fn case_sqrt(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, positive, Tape::sqrt)
}

fn case_exp(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, |t| t, Tape::exp)
}

fn case_log(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, positive, Tape::log)
}

fn case_softmax(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, |t| map(t, |x| 2.0 * x), Tape::softmax)
}

fn case_log_softmax(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    unary_case(rng, seed, |t| map(t, |x| 2.0 * x), Tape::log_softmax)
}

fn case_mean(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let rank = rng.random_range(1..=3);
    let shape = dims(rng, rank, 1, 4);
    let axis = rng.random_range(0..rank);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| t.mean(b.var(x), axis))
}

fn case_weighted_spatial_sum(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let shape = dims(rng, 4, 1, 4);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    let k = add(&mut s, "k", randn(seed, "k", &shape[1..]))?;
    projected(&mut s, seed, |t, b| t.weighted_spatial_sum(b.var(x), b.var(k)))
}

fn case_conv2d(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let kernel = *[1usize, 3].choose(rng).expect("non-empty");
    let padding = rng.random_range(0..=kernel / 2);
    let stride = rng.random_range(1..=2);
    let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let h = rng.random_range(kernel.max(2)..=6);
    let w = rng.random_range(kernel.max(2)..=6);
    let with_bias = rng.random_bool(0.5);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &[n, cin, h, w]))?;
    let wt = add(&mut s, "w", randn(seed, "w", &[cout, cin, kernel, kernel]))?;
    let bias = add(&mut s, "bias", randn(seed, "bias", &[cout]))?;
    projected(&mut s, seed, |t, b| {
        let bias = with_bias.then(|| b.var(bias));
        t.conv2d(b.var(x), b.var(wt), bias, stride, padding)
    })
}

fn case_layer_norm(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let rows = rng.random_range(1..=4);
    // Two-element rows normalize to ±1 whatever the input, leaving only ε-sized gradients.
    let d = rng.random_range(3..=6);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &[rows, d]))?;
    let g = add(&mut s, "gamma", randn(seed, "gamma", &[d]))?;
    let be = add(&mut s, "beta", randn(seed, "beta", &[d]))?;
    projected(&mut s, seed, |t, b| t.layer_norm(b.var(x), b.var(g), b.var(be), 1e-5))
}

fn case_scale(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let c = rng.random_range(-3.0..3.0);
    let shape = dims(rng, 2, 1, 4);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| t.scale(b.var(x), c))
}

fn case_concat(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let rank = rng.random_range(1..=3);
    let axis = rng.random_range(0..rank);
    let base = dims(rng, rank, 1, 3);
    let parts = rng.random_range(1..=3);
    let mut s = ParamStore::new();
    let mut ids = Vec::new();
    for i in 0..parts {
        let mut shape = base.clone();
        shape[axis] = rng.random_range(1..=3);
        let name = format!("x{i}");
        ids.push(add(&mut s, &name, randn(seed, &name, &shape))?);
    }
    projected(&mut s, seed, |t, b| {
        let xs: Vec<Var> = ids.iter().map(|&id| b.var(id)).collect();
        t.concat(&xs, axis)
    })
}

fn case_reshape(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let shape = dims(rng, 3, 1, 4);
    let target = [shape[0] * shape[1], shape[2]];
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| {
        let y = t.reshape(b.var(x), &target)?;
        // A nonlinearity after the reshape makes the adjoint order matter.
        t.mul(y, y)
    })
}

fn case_permute(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let rank = rng.random_range(2..=4);
    let shape = dims(rng, rank, 1, 4);
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.shuffle(rng);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| t.permute(b.var(x), &perm))
}

fn case_max_last_axis(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let rows = rng.random_range(1..=4);
    let n = rng.random_range(2..=6);
    // Distinct levels 0.1 apart plus jitter well below the spacing.
    let mut data = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        let mut levels: Vec<usize> = (0..n).collect();
        levels.shuffle(rng);
        data.extend(levels.iter().map(|&l| 0.1 * l as f64 + rng.random_range(-0.02..0.02)));
    }
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", Tensor::new([rows, n], data)?)?;
    projected(&mut s, seed, |t, b| t.max_last_axis(b.var(x)))
}

fn case_gather(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let shape = dims(rng, 2, 1, 4);
    let len = numel(&shape);
    let out = rng.random_range(1..=2 * len);
    let indices: Vec<usize> = (0..out).map(|_| rng.random_range(0..len)).collect();
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| t.gather(b.var(x), indices.clone(), &[out]))
}

/// One input used on several paths: adjoints must accumulate.
fn case_shared_input(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let shape = dims(rng, 2, 1, 4);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| {
        let x = b.var(x);
        let sq = t.mul(x, x)?;
        let e = t.sigmoid(x)?;
        let y = t.add(sq, e)?;
        t.sub(y, x)
    })
}

// ---- attention blocks ---------------------------------------------------

fn attention_case(rng: &mut ChaCha8Rng, seed: u64, kind: AttentionKind) -> Result<Option<f64>> {
    let t = rng.random_range(1..=3);
    let r = rng.random_range(1..=2);
    let c = r * rng.random_range(1..=3);
    let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &[t, c, h, w]))?;
    let init = BlockInit {
        seed,
        weight_gain: 1.0,
        kernel_noise: 0.1,
    };
    let blk = AttentionBlock::build(kind, &mut s, "attn", c, h, w, r, &init)?.expect("attention kind is not none");
    // Checked at generic signed bottleneck weights rather than the training init.
    for id in s.ids().collect::<Vec<_>>() {
        let p = s.get_mut(id);
        if p.name.ends_with(".w1") || p.name.ends_with(".w2") {
            let fan_in = p.tensor.shape()[1] as f64;
            p.tensor = map(randn(seed, &p.name, p.tensor.shape()), |v| v / fan_in.sqrt());
        }
    }
    projected(&mut s, seed, |tape, b| Ok(blk.forward(tape, b, b.var(x))?.features))
}

fn case_se(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    attention_case(rng, seed, AttentionKind::Se)
}

fn case_cbam(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    attention_case(rng, seed, AttentionKind::Cbam)
}

fn case_gca(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    attention_case(rng, seed, AttentionKind::Gca)
}

fn case_temporal_rescale(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let shape = dims(rng, 2, 1, 4);
    let mut s = ParamStore::new();
    let gate = map(randn(seed, "s", &shape), |x| 0.05 + 0.9 / (1.0 + (-x).exp()));
    let x = add(&mut s, "s", gate)?;
    projected(&mut s, seed, |t, b| temporal_rescale(t, b.var(x)))
}

// ---- losses -------------------------------------------------------------

fn logits_and_targets(rng: &mut ChaCha8Rng) -> Result<(Tensor, Vec<usize>)> {
    let bsz = rng.random_range(1..=4);
    let k = rng.random_range(2..=6);
    let targets = (0..bsz).map(|_| rng.random_range(0..k)).collect();
    // Distinct levels per row keep the hardest negative away from ties.
    let mut data = Vec::with_capacity(bsz * k);
    for _ in 0..bsz {
        let mut levels: Vec<usize> = (0..k).collect();
        levels.shuffle(rng);
        data.extend(levels.iter().map(|&l| 0.5 * l as f64 - 1.0 + rng.random_range(-0.1..0.1)));
    }
    Ok((Tensor::new([bsz, k], data)?, targets))
}

fn case_ce(rng: &mut ChaCha8Rng, _seed: u64) -> Result<Option<f64>> {
    let (logits, targets) = logits_and_targets(rng)?;
    let mut s = ParamStore::new();
    let x = add(&mut s, "logits", logits)?;
    scalar_loss(&mut s, |t, b| cross_entropy(t, b.var(x), &targets))
}

fn case_ial(rng: &mut ChaCha8Rng, _seed: u64) -> Result<Option<f64>> {
    let (logits, targets) = logits_and_targets(rng)?;
    let mut s = ParamStore::new();
    let x = add(&mut s, "logits", logits)?;
    scalar_loss(&mut s, |t, b| intensity_aware_loss(t, b.var(x), &targets))
}

/// The two largest non-target logits 1e-3 apart.
fn case_ial_near_tie(rng: &mut ChaCha8Rng, _seed: u64) -> Result<Option<f64>> {
    let k = rng.random_range(3..=6);
    let target = rng.random_range(0..k);
    let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..0.0)).collect();
    let others: Vec<usize> = (0..k).filter(|&j| j != target).collect();
    let pair: Vec<&usize> = others.choose_multiple(rng, 2).collect();
    let top = rng.random_range(0.5..1.5);
    row[*pair[0]] = top;
    row[*pair[1]] = top - 1e-3;
    let mut s = ParamStore::new();
    let x = add(&mut s, "logits", Tensor::new([1, k], row)?)?;
    let ce = scalar_loss(&mut s, |t, b| cross_entropy(t, b.var(x), &[target]))?;
    let ial = scalar_loss(&mut s, |t, b| intensity_aware_loss(t, b.var(x), &[target]))?;
    Ok(ce.zip(ial).map(|(a, b)| a.max(b)))
}

fn case_combined(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let (logits, targets) = logits_and_targets(rng)?;
    let shape = logits.shape().to_vec();
    let mut s = ParamStore::new();
    let x = add(&mut s, "logits", logits)?;
    let aux: Vec<ParamId> = (0..2)
        .map(|i| {
            let name = format!("aux{i}");
            add(&mut s, &name, randn(seed, &name, &shape))
        })
        .collect::<Result<_>>()?;
    let cfg = LossConfig {
        lambda: 0.1,
        aux_weight: 0.5,
        ial_on_aux: rng.random_bool(0.5),
    };
    scalar_loss(&mut s, |t, b| {
        let aux: Vec<Var> = aux.iter().map(|&id| b.var(id)).collect();
        combined_loss(t, b.var(x), &aux, &targets, &cfg)
    })
}

// ---- model pieces -------------------------------------------------------

fn case_fusion(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let shape = dims(rng, 4, 1, 3);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &shape))?;
    projected(&mut s, seed, |t, b| fuse_frames(t, b.var(x), FusionKind::FrameDiff))
}

fn case_transformer(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let heads = rng.random_range(1..=2);
    let dim = heads * rng.random_range(3..=4);
    let tokens = rng.random_range(1..=4);
    let mut s = ParamStore::new();
    let x = add(&mut s, "x", randn(seed, "x", &[tokens, dim]))?;
    let layer = EncoderLayer::new(&mut s, "enc", dim, 2 * dim, heads, seed)?;
    // Residual outputs start at small random values rather than zero.
    for id in layer.residual_outputs() {
        let p = s.get_mut(id);
        p.tensor = map(randn(seed, &p.name, p.tensor.shape()), |v| 0.5 * v);
    }
    projected(&mut s, seed, |t, b| Ok(layer.forward(t, b, b.var(x))?.0))
}

fn case_tiny_model(rng: &mut ChaCha8Rng, seed: u64) -> Result<Option<f64>> {
    let cfg = ModelConfig {
        seed,
        kernel_noise: 0.1,
        ..ModelConfig::tiny()
    };
    let model = DferModel::new(cfg.clone())?;
    let clip = randn(seed, "clip", &[cfg.frames, cfg.in_channels, cfg.height, cfg.width]);
    let target = rng.random_range(0..cfg.num_classes);
    let loss = LossConfig {
        lambda: 0.1,
        aux_weight: 0.3,
        ial_on_aux: false,
    };
    let mut store = model.params.clone();
    scalar_loss(&mut store, |t, b| {
        let x = t.constant(clip.clone());
        let out = model.forward(t, b, x)?;
        combined_loss(t, out.logits, &out.aux_logits, &[target], &loss)
    })
}
