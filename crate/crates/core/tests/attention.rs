use ialgca::attention::{AttentionBlock, AttentionKind, BlockInit, CbamChannelBlock, GcaBlock, SeBlock};
use ialgca::autodiff::Tape;
use ialgca::init::{normal, rng_for};
use ialgca::param::ParamStore;
use ialgca::Tensor;
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W₂ relu(W₁ z)` with `W₁: [h, c]`, `W₂: [c, h]`, written out longhand.
fn excite(w1: &Tensor, w2: &Tensor, z: &[f64]) -> Vec<f64> {
    let (h, c) = (w1.shape()[0], w1.shape()[1]);
    let hidden: Vec<f64> = (0..h)
        .map(|i| (0..c).map(|j| w1.at(&[i, j]) * z[j]).sum::<f64>().max(0.0))
        .collect();
    (0..c).map(|j| (0..h).map(|i| w2.at(&[j, i]) * hidden[i]).sum()).collect()
}

fn run(store: &ParamStore, block: &AttentionBlock, x: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = block.forward(&mut tape, &b, xv).unwrap();
    (tape.value(out.features).clone(), tape.value(out.weights).clone())
}

fn weights(store: &ParamStore, prefix: &str) -> (Tensor, Tensor) {
    (
        store.by_name(&format!("{prefix}.w1")).unwrap().tensor.clone(),
        store.by_name(&format!("{prefix}.w2")).unwrap().tensor.clone(),
    )
}

fn block(kind: AttentionKind, c: usize, h: usize, w: usize, r: usize, seed: u64) -> (ParamStore, AttentionBlock) {
    let mut s = ParamStore::new();
    let init = BlockInit {
        seed,
        weight_gain: 1.0,
        kernel_noise: 0.05,
    };
    let b = AttentionBlock::build(kind, &mut s, "a", c, h, w, r, &init).unwrap().unwrap();
    (s, b)
}

#[test]
fn se_matches_longhand() {
    for seed in 0..20 {
        let (s, blk) = block(AttentionKind::Se, 2, 2, 2, 1, seed);
        let x = normal(seed, "x", &[1, 2, 2, 2], 0.0, 1.0);
        let (y, w) = run(&s, &blk, &x);
        let (w1, w2) = weights(&s, "a");
        let z: Vec<f64> = (0..2).map(|c| (0..4).map(|k| x.data()[c * 4 + k]).sum::<f64>() / 4.0).collect();
        let want: Vec<f64> = excite(&w1, &w2, &z).into_iter().map(sigmoid).collect();
        for c in 0..2 {
            assert!((w.at(&[0, c]) - want[c]).abs() < 1e-14);
            for k in 0..4 {
                assert!((y.data()[c * 4 + k] - want[c] * x.data()[c * 4 + k]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn cbam_matches_longhand() {
    for seed in 0..20 {
        let (s, blk) = block(AttentionKind::Cbam, 2, 2, 2, 1, seed);
        let x = normal(seed, "x", &[1, 2, 2, 2], 0.0, 1.0);
        let (_, w) = run(&s, &blk, &x);
        let (w1, w2) = weights(&s, "a");
        let chan = |c: usize| &x.data()[c * 4..c * 4 + 4];
        let avg: Vec<f64> = (0..2).map(|c| chan(c).iter().sum::<f64>() / 4.0).collect();
        let max: Vec<f64> = (0..2).map(|c| chan(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let (ea, em) = (excite(&w1, &w2, &avg), excite(&w1, &w2, &max));
        for c in 0..2 {
            assert!((w.at(&[0, c]) - sigmoid(ea[c] + em[c])).abs() < 1e-14);
        }
    }
}

#[test]
fn gca_matches_longhand() {
    for seed in 0..20 {
        let (t, c, h, wd) = (3, 2, 2, 3);
        let (s, blk) = block(AttentionKind::Gca, c, h, wd, 1, seed);
        let x = normal(seed, "x", &[t, c, h, wd], 0.0, 1.0);
        let (_, w) = run(&s, &blk, &x);
        let (w1, w2) = weights(&s, "a");
        let k = &s.by_name("a.kernel").unwrap().tensor;
        let gate: Vec<Vec<f64>> = (0..t)
            .map(|f| {
                let z: Vec<f64> = (0..c)
                    .map(|ch| {
                        let mut acc = 0.0;
                        for i in 0..h {
                            for j in 0..wd {
                                acc += x.at(&[f, ch, i, j]) * k.at(&[ch, i, j]);
                            }
                        }
                        acc
                    })
                    .collect();
                excite(&w1, &w2, &z).into_iter().map(sigmoid).collect()
            })
            .collect();
        for ch in 0..c {
            let mean = (0..t).map(|f| gate[f][ch]).sum::<f64>() / t as f64;
            for f in 0..t {
                let want = 2.0 * (gate[f][ch] * mean).sqrt();
                assert!((w.at(&[f, ch]) - want).abs() < 1e-14, "seed {seed}");
            }
        }
    }
}

#[test]
fn weight_ranges_on_random_inputs() {
    let mut rng = rng_for(0, "ranges");
    let mut largest_gca: f64 = 0.0;
    for case in 0..600u64 {
        let t = rng.random_range(1..=4);
        let c = rng.random_range(2..=6);
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let scale = rng.random_range(0.1..5.0);
        let x = normal(case, "x", &[t, c, h, w], 0.0, scale);
        for kind in [AttentionKind::Se, AttentionKind::Cbam, AttentionKind::Gca] {
            let (s, blk) = block(kind, c, h, w, 2.min(c), case);
            let (_, wt) = run(&s, &blk, &x);
            // Sigmoid rounds to exactly 1.0 in f64 once its input passes ~37.
            for &v in wt.data() {
                match kind {
                    AttentionKind::Gca => {
                        assert!(v > 0.0 && v <= 2.0, "{v}");
                        largest_gca = largest_gca.max(v);
                    }
                    _ => assert!(v > 0.0 && v <= 1.0, "{kind:?}: {v}"),
                }
            }
        }
    }
    assert!(largest_gca > 1.5, "{largest_gca}");
}

#[test]
fn location_sensitivity() {
    // Same spatial mean, different layout.
    let a = Tensor::new([1, 1, 2, 2], vec![4.0, 0.0, 0.0, 0.0]).unwrap();
    let b = Tensor::new([1, 1, 2, 2], vec![0.0, 0.0, 0.0, 4.0]).unwrap();
    let mut s = ParamStore::new();
    let se = SeBlock::new(&mut s, "se", 1, 1, &BlockInit::default()).unwrap();
    let gca = GcaBlock::new(&mut s, "gca", 1, 2, 2, 1, &BlockInit::default()).unwrap();
    *s.tensor_mut("gca.kernel").unwrap() = Tensor::new([1, 2, 2], vec![0.4, 0.1, 0.3, 0.2]).unwrap();
    let descriptor = |x: &Tensor| {
        let mut tape = Tape::new();
        let bind = s.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let flat = tape.reshape(xv, &[1, 1, 4]).unwrap();
        let z_se = tape.mean(flat, 2).unwrap();
        let z_gca = tape.weighted_spatial_sum(xv, bind.var(gca.kernel())).unwrap();
        let w_se = se.forward(&mut tape, &bind, xv).unwrap().weights;
        (tape.value(z_se).item().unwrap(), tape.value(z_gca).item().unwrap(), tape.value(w_se).item().unwrap())
    };
    let (za, ga, sa) = descriptor(&a);
    let (zb, gb, sb) = descriptor(&b);
    assert_eq!(za, zb);
    assert_eq!(sa, sb);
    assert!((ga - 1.6).abs() < 1e-15 && (gb - 0.8).abs() < 1e-15, "{ga} {gb}");
}

#[test]
fn identity_init_gca_is_bitwise_identity() {
    for seed in 0..10 {
        let mut s = ParamStore::new();
        let blk = GcaBlock::new(&mut s, "g", 4, 3, 5, 2, &BlockInit::identity(seed)).unwrap();
        let x = normal(seed, "x", &[3, 4, 3, 5], 0.0, 2.0);
        let (y, w) = run(&s, &AttentionBlock::Gca(blk), &x);
        assert!(y.bitwise_eq(&x));
        assert!(w.data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn cbam_block_accessors() {
    let mut s = ParamStore::new();
    let blk = CbamChannelBlock::new(&mut s, "c", 4, 2, &BlockInit::default()).unwrap();
    assert_eq!(s.get(blk.w1()).tensor.shape(), &[2, 4]);
    assert_eq!(s.get(blk.w2()).tensor.shape(), &[4, 2]);
}
