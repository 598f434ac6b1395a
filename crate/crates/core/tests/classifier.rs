use emofuse::autodiff::{grad_check_params, GradCheckOptions, Params, Tape, Tensor};
use emofuse::classifier::{classify, classify_logits, cross_entropy, init_classifier, pool_channel, ClassifierConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn setup(d: usize, n: usize, kernels: &[usize], seed: u64) -> (Params, ClassifierConfig, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ClassifierConfig { kernel_sizes: kernels.to_vec(), filters: n };
    let mut p = Params::new();
    init_classifier(&mut p, &["u", "e", "h"], d, 3, &cfg, &mut rng);
    let keys: Vec<(String, Tensor)> = p.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    for (k, v) in keys {
        if k.ends_with(".b") {
            let noisy = Tensor::matrix(v.rows(), v.cols(), (0..v.data().len()).map(|_| rng.gen_range(-0.2..0.2)).collect());
            p.insert(k, noisy);
        }
    }
    (p, cfg, rng)
}

/// Straight-line pooled features and logits.
fn oracle(channels: &[(&str, &Tensor)], p: &Params, cfg: &ClassifierConfig) -> Vec<f64> {
    let k_max = *cfg.kernel_sizes.iter().max().unwrap();
    let mut v = Vec::new();
    for (name, x) in channels {
        let (l, d) = (x.rows(), x.cols());
        let padded = l.max(k_max);
        let at = |t: usize, j: usize| if t < l { x.get(t, j) } else { 0.0 };
        for &k in &cfg.kernel_sizes {
            let w = p.get(&format!("{name}.conv{k}.W")).unwrap();
            let b = p.get(&format!("{name}.conv{k}.b")).unwrap();
            let windows = if l >= k { l - k + 1 } else { 1 };
            assert!(windows <= padded - k + 1);
            for f in 0..cfg.filters {
                let mut best = f64::NEG_INFINITY;
                for t in 0..windows {
                    let mut s = b.data()[f];
                    for tap in 0..k {
                        for j in 0..d {
                            s += w.get(f, tap * d + j) * at(t + tap, j);
                        }
                    }
                    best = best.max(s.max(0.0));
                }
                v.push(best);
            }
        }
    }
    let dw = p.get("dense.W").unwrap();
    let db = p.get("dense.b").unwrap();
    (0..dw.cols())
        .map(|c| db.data()[c] + v.iter().enumerate().map(|(i, x)| x * dw.get(i, c)).sum::<f64>())
        .collect()
}

#[test]
fn logits_match_straight_line_oracle() {
    let (p, cfg, mut rng) = setup(3, 2, &[2, 3, 4], 1);
    // Channel lengths below, at and above the widest kernel.
    let u = random(5, 3, &mut rng);
    let e = random(1, 3, &mut rng);
    let h = random(4, 3, &mut rng);
    let tape = Tape::new();
    let b = p.bind(&tape);
    let chans = [("u", tape.constant(u.clone())), ("e", tape.constant(e.clone())), ("h", tape.constant(h.clone()))];
    let logits = classify_logits(&chans, &b, &cfg).unwrap().value();
    let expect = oracle(&[("u", &u), ("e", &e), ("h", &h)], &p, &cfg);
    for (a, b) in logits.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn classify_gradient_check() {
    let (mut p, cfg, mut rng) = setup(8, 2, &[2, 3, 4], 2);
    p.insert("in_u", random(5, 8, &mut rng));
    p.insert("in_e", random(2, 8, &mut rng));
    p.insert("in_h", random(5, 8, &mut rng));
    let report = grad_check_params(
        |_, b| {
            let chans = [("u", b.var("in_u")?), ("e", b.var("in_e")?), ("h", b.var("in_h")?)];
            cross_entropy(classify_logits(&chans, b, &cfg)?, 1)
        },
        &p,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.excluded * 20 < report.checked, "{report:?}");
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::new();
    let sure = tape.constant(Tensor::row(vec![0.0, 800.0]));
    assert!(cross_entropy(sure, 1).unwrap().item().abs() < 1e-12);
    let flat = tape.constant(Tensor::row(vec![0.3; 4]));
    assert!((cross_entropy(flat, 2).unwrap().item() - 4f64.ln()).abs() < 1e-12);
    assert!(cross_entropy(flat, 4).is_err());
    let a = cross_entropy(tape.constant(Tensor::row(vec![0.1, 0.9])), 0).unwrap();
    let b = cross_entropy(tape.constant(Tensor::row(vec![1.5, -0.2])), 1).unwrap();
    let batch = tape.concat(&[a, b], 1).unwrap().mean().unwrap().item();
    assert!((batch - (a.item() + b.item()) / 2.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), lu in 1usize..7, le in 1usize..4) {
        let (p, cfg, mut rng) = setup(4, 3, &[1, 2, 3], seed % 1000);
        let tape = Tape::new();
        let b = p.bind_frozen(&tape);
        let scale = rng.gen_range(0.1..50.0);
        let chans = [
            ("u", tape.constant(random(lu, 4, &mut rng).map(|v| v * scale))),
            ("e", tape.constant(random(le, 4, &mut rng))),
            ("h", tape.constant(random(lu, 4, &mut rng))),
        ];
        let probs = classify(&chans, &b, &cfg).unwrap().value();
        let total: f64 = probs.data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(probs.data().iter().all(|&x| x >= 0.0 && x <= 1.0));
    }

    #[test]
    fn padding_rows_do_not_change_pooling(seed in any::<u64>(), l in 1usize..6, extra in 1usize..4) {
        let (p, cfg, mut rng) = setup(3, 2, &[2, 3], seed % 1000);
        let x = random(l, 3, &mut rng);
        let mut padded_rows: Vec<Vec<f64>> = (0..l).map(|r| x.row_slice(r).to_vec()).collect();
        padded_rows.extend((0..extra).map(|_| vec![0.0; 3]));
        let padded = Tensor::from_rows(&padded_rows).unwrap();
        let tape = Tape::new();
        let b = p.bind_frozen(&tape);
        let a = pool_channel(tape.constant(x), l, &b, "u", &cfg).unwrap().value();
        let c = pool_channel(tape.constant(padded), l, &b, "u", &cfg).unwrap().value();
        prop_assert_eq!(a.data(), c.data());
    }
}
