//! One pass/fail line per acceptance criterion.
//!
//! Exits 0 after printing every line. With `IALGCA_ACCEPTANCE_STRICT=1` any
//! failing criterion makes the exit status 1. Numeric arguments select
//! criteria: `cargo test --test acceptance -- 3 8`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ialgca::ablation::{run_ablation, AblationTable};
use ialgca::attention::{AttentionBlock, AttentionKind, BlockInit, GcaBlock};
use ialgca::autodiff::{Tape, Var};
use ialgca::data::{generate_synthetic, sample_test_indices, sample_train_indices, segment_bounds, SyntheticConfig};
use ialgca::gradsuite::run_suite;
use ialgca::init::{normal, rng_for};
use ialgca::losses::{combined_loss, cross_entropy, intensity_aware_loss, LossConfig};
use ialgca::metrics::{evaluate, predict_manifest, ConfusionMatrix};
use ialgca::model::{load_checkpoint, save_checkpoint, DferModel, ModelConfig};
use ialgca::param::ParamStore;
use ialgca::settings::load_ablation;
use ialgca::train::{train, TrainConfig};
use ialgca::Tensor;
use rand::Rng;

const STRICT_ENV: &str = "IALGCA_ACCEPTANCE_STRICT";
const GRADSUITE_BUDGET: Duration = Duration::from_secs(60);
const ABLATION_BUDGET: Duration = Duration::from_secs(15 * 60);
const ABLATION_SPEC: &str = "specs/desk_ablation.txt";
const ABLATION_SEEDS: u64 = 5;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- 1 ------------------------------------------------------------------

fn reproducibility_statement() -> Outcome {
    Ok("benchmark-video scores are out of reach at desk scale (restricted datasets, GPU-scale training); \
        criteria 2-8 substitute property checks"
        .into())
}

// ---- 2 ------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let results = run_suite(None, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {:.3e} > {:.0e}", r.name, r.max_rel_error, r.tolerance))
        .collect();
    let summary = format!("{} checks, {} failed, {:.1}s", results.len(), failed.len(), elapsed.as_secs_f64());
    ensure(failed.is_empty(), || format!("{summary}: {}", failed.join(", ")))?;
    ensure(elapsed < GRADSUITE_BUDGET, || format!("{summary}: over the 60s budget"))?;
    Ok(summary)
}

// ---- 3 ------------------------------------------------------------------

fn attention_weights(store: &ParamStore, block: &AttentionBlock, x: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = block.forward(&mut tape, &b, xv).unwrap();
    (tape.value(out.features).clone(), tape.value(out.weights).clone())
}

fn attention_ranges() -> Outcome {
    let mut rng = rng_for(0, "acceptance/attention");
    let mut largest_gca: f64 = 0.0;
    let cases = 10_000u64;
    for case in 0..cases {
        let t = rng.random_range(1..=4);
        let c = rng.random_range(1..=6);
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let r = rng.random_range(1..=c);
        // Keeps sigmoid inputs well below ~37, where f64 rounds the gate to 1.0.
        let gain = rng.random_range(0.25..1.5);
        let init = BlockInit {
            seed: case,
            weight_gain: gain,
            kernel_noise: rng.random_range(0.0..1.0) / (h * w) as f64,
        };
        let x = normal(case, "x", &[t, c, h, w], 0.0, 1.0);
        for kind in [AttentionKind::Se, AttentionKind::Cbam, AttentionKind::Gca] {
            let mut s = ParamStore::new();
            let blk = AttentionBlock::build(kind, &mut s, "a", c, h, w, r, &init).unwrap().unwrap();
            // Signed bottleneck weights at the drawn gain, not the training init.
            for name in ["a.w1", "a.w2"] {
                let p = s.tensor_mut(name).unwrap();
                let fan_in = p.shape()[1] as f64;
                *p = normal(case, name, p.shape(), 0.0, gain / fan_in.sqrt());
            }
            let (_, wt) = attention_weights(&s, &blk, &x);
            let hi = if kind == AttentionKind::Gca { 2.0 } else { 1.0 };
            for &v in wt.data() {
                ensure(v > 0.0 && v < hi, || format!("case {case}: {kind:?} weight {v} outside (0, {hi})"))?;
            }
            if kind == AttentionKind::Gca {
                largest_gca = wt.data().iter().cloned().fold(largest_gca, f64::max);
            }
        }
    }
    ensure(largest_gca > 1.5, || format!("largest GCA weight found {largest_gca} <= 1.5"))?;
    for seed in 0..20 {
        let mut s = ParamStore::new();
        let blk = GcaBlock::new(&mut s, "g", 4, 3, 5, 2, &BlockInit::identity(seed)).unwrap();
        let x = normal(seed, "x", &[3, 4, 3, 5], 0.0, 2.0);
        let (y, _) = attention_weights(&s, &AttentionBlock::Gca(blk), &x);
        ensure(y.bitwise_eq(&x), || format!("identity-initialized GCA changed its input (seed {seed})"))?;
    }
    Ok(format!("{cases} cases x 3 blocks in range, largest GCA weight {largest_gca:.4}, identity init bitwise"))
}

// ---- 4 ------------------------------------------------------------------

fn loss_value(f: impl Fn(&mut Tape, Var) -> ialgca::Result<Var>, logits: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::new([1, logits.len()], logits.to_vec()).unwrap());
    let loss = f(&mut tape, x).unwrap();
    let g = tape.backward(loss).unwrap();
    let grad = g.get(x).map(|t| t.data().to_vec()).unwrap_or_default();
    (tape.value(loss).item().unwrap(), grad)
}

fn loss_identities() -> Outcome {
    let mut rng = rng_for(0, "acceptance/losses");
    let ce = |x: &[f64], t: usize| loss_value(|tp, v| cross_entropy(tp, v, &[t]), x).0;
    let ial = |x: &[f64], t: usize| loss_value(|tp, v| intensity_aware_loss(tp, v, &[t]), x).0;
    for i in 0..10_000 {
        let x2 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let t2 = rng.random_range(0..2);
        let (a, b) = (ial(&x2, t2), ce(&x2, t2));
        ensure((a - b).abs() <= 1e-12, || format!("K=2 case {i}: IAL {a} vs CE {b}"))?;

        let k = rng.random_range(2..=9);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t = rng.random_range(0..k);
        let (lia, lce) = (ial(&x, t), ce(&x, t));
        // exp(−L) is the target's share of the two-way and the full softmax.
        ensure((-lia).exp() >= (-lce).exp(), || format!("case {i}: P_IA below softmax target probability"))?;
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        ensure((ial(&shifted, t) - lia).abs() <= 1e-12, || format!("case {i}: IAL not shift invariant"))?;
        ensure((ce(&shifted, t) - lce).abs() <= 1e-12, || format!("case {i}: CE not shift invariant"))?;

        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let (l0, g0) = loss_value(|tp, v| combined_loss(tp, v, &[], &[t], &cfg), &x);
        let (lc, gc) = loss_value(|tp, v| cross_entropy(tp, v, &[t]), &x);
        ensure(l0.to_bits() == lc.to_bits() && g0 == gc, || format!("case {i}: lambda=0 is not CE bitwise"))?;
    }
    let mut last = f64::INFINITY;
    for (margin, bound) in [(5.0, 1e-2), (10.0, 1e-4), (20.0, 1e-8)] {
        let l = ial(&[margin, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0);
        ensure(l < bound && l < last, || format!("margin {margin}: IAL {l:e}"))?;
        last = l;
    }
    Ok(format!("10000 random cases; IAL at margin 20 = {last:.3e}"))
}

// ---- 5 ------------------------------------------------------------------

fn sampler_contract() -> Outcome {
    let mut cases = 0;
    for n in 1..=64 {
        for u in 1..=n {
            let segs = segment_bounds(n, u);
            let mut next = 0;
            for &(s, e) in &segs {
                ensure(s == next && e > s, || format!("n={n} u={u}: segments do not partition"))?;
                next = e;
            }
            ensure(next == n && segs.len() == u, || format!("n={n} u={u}: coverage"))?;
            for v in 1..=4 {
                cases += 1;
                let mut rng = rng_for(0, &format!("acceptance/sampler/{n}/{u}/{v}"));
                let idx = sample_train_indices(n, u, v, &mut rng);
                ensure(idx.len() == u * v, || format!("n={n} u={u} v={v}: length {}", idx.len()))?;
                for (chunk, &(s, e)) in idx.chunks(v).zip(&segs) {
                    ensure(chunk.iter().all(|&i| s <= i && i < e), || format!("n={n} u={u} v={v}: {chunk:?} outside [{s},{e})"))?;
                }
                let test = sample_test_indices(n, u, v);
                ensure(test.len() == u * v && test == sample_test_indices(n, u, v), || {
                    format!("n={n} u={u} v={v}: test sampler")
                })?;
                for (chunk, &(s, e)) in test.chunks(v).zip(&segs) {
                    ensure(chunk.iter().all(|&i| s <= i && i < e), || format!("n={n} u={u} v={v}: test index outside segment"))?;
                }
            }
        }
    }
    let mut rng = rng_for(0, "acceptance/presets");
    for n in [16, 24, 40, 77] {
        for (u, v) in [(8, 2), (16, 1)] {
            ensure(sample_train_indices(n, u, v, &mut rng).len() == 16, || format!("n={n} U={u} V={v}: train length"))?;
            ensure(sample_test_indices(n, u, v).len() == 16, || format!("n={n} U={u} V={v}: test length"))?;
        }
    }
    Ok(format!("{cases} (n, U, V) triples; T=16 under both presets"))
}

// ---- 6 ------------------------------------------------------------------

fn metric_oracle() -> Outcome {
    let mut rng = rng_for(0, "acceptance/metrics");
    for case in 0..1000 {
        let k = rng.random_range(2..=7);
        let n = rng.random_range(1..=120);
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..k))).collect();
        let m = ConfusionMatrix::from_pairs(k, &pairs).map_err(|e| e.to_string())?;
        let hits = pairs.iter().filter(|p| p.0 == p.1).count();
        ensure(m.war() == hits as f64 / n as f64, || format!("case {case}: WAR"))?;
        // Recalls as exact fractions over a common denominator, rounded once.
        let counts: Vec<(u128, u128)> = (0..k)
            .map(|c| {
                let of = pairs.iter().filter(|p| p.0 == c).count() as u128;
                let hit = pairs.iter().filter(|p| p.0 == c && p.1 == c).count() as u128;
                (hit, of)
            })
            .filter(|&(_, of)| of > 0)
            .collect();
        let denom: u128 = counts.iter().map(|&(_, of)| of).product::<u128>() * counts.len() as u128;
        let numer: u128 = counts
            .iter()
            .enumerate()
            .map(|(i, &(hit, _))| hit * counts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &(_, of))| of).product::<u128>())
            .sum();
        let g = gcd(numer, denom).max(1);
        let uar = (numer / g) as f64 / (denom / g) as f64;
        ensure(m.uar() == uar, || format!("case {case}: UAR {} vs {uar}", m.uar()))?;
    }
    for case in 0..200 {
        let k = rng.random_range(2..=7);
        let per = rng.random_range(1..=20);
        let pairs: Vec<(usize, usize)> = (0..k * per).map(|i| (i / per, rng.random_range(0..k))).collect();
        let m = ConfusionMatrix::from_pairs(k, &pairs).map_err(|e| e.to_string())?;
        ensure(m.uar() == m.war(), || format!("balanced case {case}: UAR {} != WAR {}", m.uar(), m.war()))?;
    }
    Ok("1000 random matrices exact; 200 balanced sets UAR == WAR".into())
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// ---- 7 ------------------------------------------------------------------

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn per_seed(table: &AblationTable, cell: &str, low: bool) -> Result<Vec<f64>, String> {
    let ci = table.cell_index(cell).ok_or_else(|| format!("ablation spec has no cell {cell:?}"))?;
    table
        .runs_of(ci)
        .map(|r| match low {
            false => Ok(r.report.war),
            true => r.report.low_intensity.map(|b| b.war).ok_or_else(|| "no low-intensity clips".to_string()),
        })
        .collect()
}

fn synthetic_ablation() -> Outcome {
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join(ABLATION_SPEC);
    let mut plan = load_ablation(&spec).map_err(|e| e.to_string())?;
    plan.seeds = (0..ABLATION_SEEDS).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let table = run_ablation(&plan, dir.path(), |_, _, _| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let war = |c| per_seed(&table, c, false);
    let low = |c| per_seed(&table, c, true);
    let (base, gca, ial, both) = (war("baseline")?, war("gca")?, war("ial")?, war("gca+ial")?);
    let (base_low, both_low) = (low("baseline")?, low("gca+ial")?);
    let margin = mean(&both_low) - mean(&base_low);
    let ordered = (0..base.len())
        .filter(|&s| base[s] <= gca[s] && base[s] <= ial[s] && gca[s] <= both[s] && ial[s] <= both[s])
        .count();
    let summary = format!(
        "low-intensity WAR {:.4} vs baseline {:.4} (margin {margin:+.4}); WAR {:.4} vs {:.4}; ordering in {ordered}/{} seeds; {:.0}s",
        mean(&both_low),
        mean(&base_low),
        mean(&both),
        mean(&base),
        base.len(),
        elapsed.as_secs_f64()
    );
    let ok = margin > 0.0 && mean(&both) >= mean(&base) && ordered >= 4 && elapsed <= ABLATION_BUDGET;
    ensure(ok, || summary.clone())?;
    Ok(summary)
}

// ---- 8 ------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SyntheticConfig {
        num_classes: 3,
        train_per_class: 3,
        test_per_class: 3,
        min_frames: 2,
        max_frames: 5,
        height: 8,
        width: 8,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg, dir.path().join("data")).map_err(|e| e.to_string())?;
    let train_cfg = TrainConfig {
        epochs: 3,
        base_lr: 0.05,
        batch_size: 4,
        u: 2,
        v: 1,
        loss: LossConfig {
            lambda: 0.1,
            ..Default::default()
        },
        ..Default::default()
    };
    let model_cfg = ModelConfig {
        num_classes: 3,
        attention: AttentionKind::Gca,
        aux: true,
        ..ModelConfig::tiny()
    };
    let mut bytes = Vec::new();
    let mut model = None;
    for run in 0..2 {
        let mut m = DferModel::new(model_cfg.clone()).map_err(|e| e.to_string())?;
        train(&mut m, &train_cfg, &data.train, None).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("run{run}.ckpt"));
        save_checkpoint(&m, &path).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        model = Some(m);
    }
    ensure(bytes[0] == bytes[1], || "two fixed-seed runs wrote different checkpoints".into())?;
    let model = model.expect("two runs");
    let loaded = load_checkpoint(dir.path().join("run0.ckpt")).map_err(|e| e.to_string())?;
    let (u, v) = (train_cfg.u, train_cfg.v);
    let before = evaluate(&model, &data.test, u, v).map_err(|e| e.to_string())?;
    let after = evaluate(&loaded, &data.test, u, v).map_err(|e| e.to_string())?;
    ensure(before == after, || "evaluation changed across save/load".into())?;
    for rec in &data.test.records {
        let clip = ialgca::data::load_clip(rec, &sample_test_indices(rec.num_frames, u, v)).map_err(|e| e.to_string())?;
        let (a, b) = (model.predict(&clip).unwrap(), loaded.predict(&clip).unwrap());
        ensure(a.bitwise_eq(&b), || format!("logits differ after round trip on {}", rec.path.display()))?;
    }
    let p = predict_manifest(&model, &data.test, u, v).map_err(|e| e.to_string())?;
    ensure(p == predict_manifest(&loaded, &data.test, u, v).map_err(|e| e.to_string())?, || "predictions differ".into())?;
    Ok(format!("identical {}-byte checkpoints; logits bitwise equal after round trip", bytes[0].len()))
}

fn main() {
    // Criteria budgets are stated for a single core.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("fresh global pool");
    let criteria: [(&str, Criterion); 8] = [
        ("reproducibility statement", reproducibility_statement),
        ("gradient oracle suite", gradient_suite),
        ("attention weight ranges", attention_ranges),
        ("loss identities", loss_identities),
        ("sampler contract", sampler_contract),
        ("metric oracle", metric_oracle),
        ("synthetic ablation", synthetic_ablation),
        ("determinism", determinism),
    ];
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !picked.is_empty() && !picked.contains(&(i + 1)) {
            println!("criterion {}: SKIP  {name}", i + 1);
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {status}  {name}: {detail}", i + 1);
    }
    let ran = if picked.is_empty() { criteria.len() } else { picked.len() };
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os(STRICT_ENV).is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
