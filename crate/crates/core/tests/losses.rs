use ialgca::autodiff::Tape;
use ialgca::init::rng_for;
use ialgca::losses::{combined_loss, cross_entropy, hardest_negative, intensity_aware_loss, LossConfig};
use ialgca::Tensor;
use rand::Rng;

fn eval(f: impl Fn(&mut Tape, ialgca::autodiff::Var) -> ialgca::Result<ialgca::autodiff::Var>, logits: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::new([1, logits.len()], logits.to_vec()).unwrap());
    let loss = f(&mut tape, x).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(x).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; logits.len()]);
    (tape.value(loss).item().unwrap(), g)
}

fn ce(logits: &[f64], t: usize) -> (f64, Vec<f64>) {
    eval(|tape, x| cross_entropy(tape, x, &[t]), logits)
}

fn ial(logits: &[f64], t: usize) -> (f64, Vec<f64>) {
    eval(|tape, x| intensity_aware_loss(tape, x, &[t]), logits)
}

/// Plain scalar evaluation of `−log softmax(x)[t]`.
fn ce_ref(x: &[f64], t: usize) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
    -(x[t] - m) + z.ln()
}

#[test]
fn hand_evaluated_values() {
    let x = [2.0, 1.0, 0.0];
    let e = std::f64::consts::E;
    let want_ce = -(e * e / (e * e + e + 1.0)).ln();
    let want_ial = -(e * e / (e * e + e)).ln();
    assert!((ce(&x, 0).0 - want_ce).abs() < 1e-12);
    assert!((ial(&x, 0).0 - want_ial).abs() < 1e-12);
    assert!((want_ce - 0.407606).abs() < 5e-7);
    assert!((want_ial - 0.313262).abs() < 5e-7);
    let cfg = LossConfig {
        lambda: 0.1,
        aux_weight: 0.3,
        ial_on_aux: false,
    };
    let (total, _) = eval(|tape, v| combined_loss(tape, v, &[], &[0], &cfg), &x);
    assert!((total - (want_ce + 0.1 * want_ial)).abs() < 1e-12);
    assert!((total - 0.438932).abs() < 5e-7);
}

#[test]
fn uniform_ties_and_margins() {
    assert!((ce(&[0.0; 7], 3).0 - 7f64.ln()).abs() < 1e-12);
    assert!((ial(&[1.0, 1.0, -3.0], 0).0 - 2f64.ln()).abs() < 1e-12);
    let mut x = vec![0.0; 7];
    x[2] = 50.0;
    assert!(ce(&x, 2).0 < 1e-9);
    assert!(ial(&x, 2).0 < 1e-9);
}

#[test]
fn ial_gradient_touches_two_logits() {
    let x = [0.3, -1.0, 2.0, 0.7, 1.5];
    let (_, g) = ial(&x, 0);
    let support: Vec<usize> = (0..x.len()).filter(|&i| g[i] != 0.0).collect();
    assert_eq!(support, vec![0, 2]);
    assert!((g[0] + g[2]).abs() < 1e-15);
}

#[test]
fn ties_go_to_lowest_index() {
    let a = [0.0, 1.5, -2.0, 1.5];
    assert_eq!(hardest_negative(&a, 0), 1);
    let (la, ga) = ial(&a, 0);
    assert!((la - ce_ref(&[0.0, 1.5], 0)).abs() < 1e-15);
    assert_ne!(ga[1], 0.0);
    assert_eq!(ga[3], 0.0);
    // Moving the other tied value elsewhere changes neither the value nor the support.
    let moved = [0.0, 1.5, 1.5, -2.0];
    let (lm, gm) = ial(&moved, 0);
    assert_eq!(lm.to_bits(), la.to_bits());
    assert_ne!(gm[1], 0.0);
    assert_eq!(gm[2], 0.0);
}

#[test]
fn random_identities() {
    let mut rng = rng_for(0, "loss-identities");
    for _ in 0..10_000 {
        let k = rng.random_range(2..=9);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t = rng.random_range(0..k);
        let (lce, _) = ce(&x, t);
        let (lia, _) = ial(&x, t);
        assert!((lce - ce_ref(&x, t)).abs() < 1e-12);
        // P_IA ≥ softmax target probability, hence L_IA ≤ L_CE.
        assert!(lia <= lce + 1e-15, "{x:?} t={t}");
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        assert!((ce(&shifted, t).0 - lce).abs() <= 1e-12);
        assert!((ial(&shifted, t).0 - lia).abs() <= 1e-12);
        if k == 2 {
            assert!((lia - lce).abs() <= 1e-12);
        }
    }
}

#[test]
fn margin_sweep() {
    let thresholds = [(5.0, 1e-2), (10.0, 1e-4), (20.0, 1e-8)];
    let mut last = f64::INFINITY;
    for (margin, bound) in thresholds {
        let x = [margin, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let l = ial(&x, 0).0;
        assert!(l < bound, "margin {margin}: {l}");
        assert!(l < last);
        last = l;
    }
}

#[test]
fn lambda_zero_is_cross_entropy_bitwise() {
    let mut rng = rng_for(3, "lambda0");
    for _ in 0..100 {
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = rng.random_range(0..7);
        let cfg = LossConfig {
            lambda: 0.0,
            aux_weight: 0.3,
            ial_on_aux: true,
        };
        let (l, g) = eval(|tape, v| combined_loss(tape, v, &[], &[t], &cfg), &x);
        let (l0, g0) = ce(&x, t);
        assert_eq!(l.to_bits(), l0.to_bits());
        assert_eq!(g, g0);
    }
}

#[test]
fn invalid_inputs() {
    let mut tape = Tape::new();
    let one = tape.variable(Tensor::new([1, 1], vec![0.0]).unwrap());
    assert!(intensity_aware_loss(&mut tape, one, &[0]).is_err());
    let x = tape.variable(Tensor::new([1, 3], vec![0.0; 3]).unwrap());
    assert!(cross_entropy(&mut tape, x, &[3]).is_err());
    let bad = LossConfig {
        lambda: -1.0,
        ..LossConfig::default()
    };
    assert!(bad.validate().is_err());
}
