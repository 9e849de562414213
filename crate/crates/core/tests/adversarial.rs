use ndarray::{Array1, Array2};
use rand::Rng;

use fairaudit::adversarial::{
    adversary_accuracy, adversary_accuracy_on_scores, fit_adversary, train_adversarial, AdvConfig,
    AdvMode,
};
use fairaudit::data::DataSplit;
use fairaudit::metrics::p_rule;
use fairaudit::model::predict;
use fairaudit::rng;

/// Two features; `x1` carries `s` when `leak > 0`, and the label depends on
/// both features.
fn synthetic(n: usize, seed: u64, leak: f64) -> DataSplit {
    let mut r = rng::stream(seed, "synthetic-adversarial");
    let mut x = Array2::zeros((n, 2));
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let g = u8::from(r.gen_bool(0.5));
        let x0: f64 = r.gen_range(-2.0..2.0);
        let x1 = leak * (f64::from(g) - 0.5) * 2.0 + r.gen_range(-1.0..1.0);
        let noise: f64 = r.gen_range(-0.5..0.5);
        x[[i, 0]] = x0;
        x[[i, 1]] = x1;
        s.push(g);
        y.push(u8::from(x0 + x1 + noise > 0.0));
    }
    DataSplit {
        ids: (0..n as u64).collect(),
        x,
        s,
        y,
        feature_names: vec!["x0".into(), "x1".into()],
        standardization: vec![(0.0, 1.0); 2],
    }
}

fn majority_rate(s: &[u8]) -> f64 {
    let ones = s.iter().filter(|&&v| v == 1).count();
    ones.max(s.len() - ones) as f64 / s.len() as f64
}

fn quick(mode: AdvMode, alpha: f64, seed: u64) -> AdvConfig {
    let mut c = AdvConfig::for_mode(mode);
    c.adversary_weight = alpha;
    c.classifier.hidden_sizes = vec![8];
    c.classifier.epochs = 15;
    c.classifier.learning_rate = 5e-3;
    c.classifier.seed = seed;
    c.adversary_seed = seed;
    c.adversary_learning_rate = 5e-3;
    c
}

#[test]
fn independent_sensitive_attribute_leaves_adversary_at_base_rate() {
    let train = synthetic(2000, 1, 0.0);
    let model = train_adversarial(&train, &quick(AdvMode::Dp, 1.0, 1)).unwrap();
    let acc = adversary_accuracy(&model, &train, 1.0).unwrap();
    let base = majority_rate(&train.s);
    assert!(
        acc <= base + 0.03,
        "adversary accuracy {acc} vs base {base}"
    );
}

#[test]
fn leaked_sensitive_attribute_is_recovered() {
    let mut r = rng::stream(3, "leak");
    let s: Vec<u8> = (0..1000).map(|_| u8::from(r.gen_bool(0.5))).collect();
    let scores = Array1::from_iter(s.iter().map(|&g| if g == 1 { 0.9 } else { 0.1 }));
    let mut cfg = AdvConfig::for_mode(AdvMode::Dp);
    cfg.adversary_learning_rate = 1e-2;
    cfg.classifier.epochs = 60;
    let adv = fit_adversary(AdvMode::Dp, scores.view(), None, &s, &cfg).unwrap();
    let acc =
        adversary_accuracy_on_scores(&adv, AdvMode::Dp, scores.view(), None, &s, 1.0).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn random_scores_give_chance_adversary() {
    let mut r = rng::stream(4, "random-scores");
    let n = 4000;
    let s: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.5))).collect();
    let scores = Array1::from_iter((0..n).map(|_| r.gen_range(0.0..1.0)));
    let cfg = AdvConfig::for_mode(AdvMode::Dp);
    let adv = fit_adversary(AdvMode::Dp, scores.view(), None, &s, &cfg).unwrap();
    // Held-out draws, so memorization cannot help.
    let s2: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.5))).collect();
    let scores2 = Array1::from_iter((0..n).map(|_| r.gen_range(0.0..1.0)));
    let acc =
        adversary_accuracy_on_scores(&adv, AdvMode::Dp, scores2.view(), None, &s2, 1.0).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn parity_improves_with_adversary_weight() {
    let train = synthetic(1500, 10, 1.0);
    let test = synthetic(1500, 11, 1.0);
    let mean_p_rule = |alpha: f64| {
        let mut total = 0.0;
        for seed in 0..5 {
            let model = train_adversarial(&train, &quick(AdvMode::Dp, alpha, seed)).unwrap();
            let preds = predict(&model, &test.ids, test.x.view(), 0.5).unwrap();
            total += p_rule(&preds, &test.s).unwrap();
        }
        total / 5.0
    };
    let rules: Vec<f64> = [0.0, 0.3, 3.0].into_iter().map(mean_p_rule).collect();
    assert!(
        rules.windows(2).all(|w| w[0] <= w[1]),
        "p%-rule by increasing weight: {rules:?}"
    );
    assert!(rules[2] > rules[0] + 0.1, "{rules:?}");
}

#[test]
fn eo_adversary_sees_labels() {
    let train = synthetic(600, 5, 1.0);
    let model = train_adversarial(&train, &quick(AdvMode::Eo, 0.5, 0)).unwrap();
    assert_eq!(model.adversary().unwrap().input_dim(), 3);
    let acc = adversary_accuracy(&model, &train, 2.0).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
