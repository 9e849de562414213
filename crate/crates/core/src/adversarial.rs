//! Adversarial debiasing: the classifier is trained jointly with an
//! adversary that tries to recover the sensitive attribute from the
//! classifier's score (and, in equalized-odds mode, the true label).
//!
//! Each mini-batch the classifier descends along
//! `g_P - proj_{g_A}(g_P) - alpha * g_A`, computed per parameter tensor,
//! where `g_P` is the gradient of the prediction loss and `g_A` the
//! gradient of the adversary's loss with respect to the classifier. The
//! adversary then takes one step on its own cross-entropy.
//!
//! The equalized-odds adversary also sees the product `score * y`, so even a
//! small network can weigh the score differently for each true class.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::mlp::{
    self, backward, bce, bce_logit_grad, forward_cached, gather_labels, Activation, BatchPlan,
    MlpParams, Optimizer, OptimizerConfig, TrainConfig,
};
use crate::model::{Classifier, ModelRole, TrainedModel};
use crate::rng;

/// Norm below which the projection term is skipped.
const PROJECTION_MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvMode {
    /// Demographic parity: the adversary sees only the score.
    #[serde(rename = "dp")]
    Dp,
    /// Equalized odds: the adversary sees the score and the true label.
    #[serde(rename = "eo")]
    Eo,
}

impl AdvMode {
    pub fn role(self) -> ModelRole {
        match self {
            AdvMode::Dp => ModelRole::AdversarialDp,
            AdvMode::Eo => ModelRole::AdversarialEo,
        }
    }

    pub fn input_width(self) -> usize {
        match self {
            AdvMode::Dp => 1,
            AdvMode::Eo => 3,
        }
    }

    fn from_role(role: ModelRole) -> Option<Self> {
        match role {
            ModelRole::AdversarialDp => Some(AdvMode::Dp),
            ModelRole::AdversarialEo => Some(AdvMode::Eo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvConfig {
    pub mode: AdvMode,
    /// Weight of the adversary gradient in the classifier update.
    pub adversary_weight: f64,
    pub projection: bool,
    pub classifier: TrainConfig,
    pub adversary_hidden: Vec<usize>,
    pub adversary_activation: Activation,
    pub adversary_learning_rate: f64,
    pub adversary_seed: u64,
    /// Adversary updates per classifier update.
    pub adversary_steps: usize,
    /// Steepness applied to the classifier logit before the adversary
    /// reads it; 1 feeds the plain score.
    pub sharpness: f64,
    /// Classifier step size in epoch `e` is `lr / (1 + decay * e)`.
    pub learning_rate_decay: f64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self::for_mode(AdvMode::Dp)
    }
}

impl AdvConfig {
    /// Defaults tuned on Adult for each mode.
    pub fn for_mode(mode: AdvMode) -> Self {
        let (adversary_weight, sharpness) = match mode {
            AdvMode::Dp => (3.0, 1.0),
            AdvMode::Eo => (0.5, 2.0),
        };
        Self {
            mode,
            adversary_weight,
            projection: true,
            classifier: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            adversary_hidden: vec![16],
            adversary_activation: Activation::Relu,
            adversary_learning_rate: 1e-3,
            adversary_seed: 0,
            adversary_steps: 1,
            sharpness,
            learning_rate_decay: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        if !(self.adversary_weight >= 0.0 && self.adversary_weight.is_finite()) {
            return Err(Error::InvalidArgument(
                "adversary weight must be >= 0".into(),
            ));
        }
        if !(self.adversary_learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "adversary learning rate must be > 0".into(),
            ));
        }
        if self.adversary_steps == 0 {
            return Err(Error::InvalidArgument(
                "adversary steps must be >= 1".into(),
            ));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::InvalidArgument("sharpness must be > 0".into()));
        }
        if !(self.learning_rate_decay >= 0.0 && self.learning_rate_decay.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rate decay must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Adversary features for one instance at sharpness 1: `[score]` for
/// demographic parity, `[score, y, score * y]` for equalized odds.
pub fn adversary_input(mode: AdvMode, score: f64, label: Option<u8>) -> Result<Vec<f64>> {
    if !(score > 0.0 && score < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "score {score} outside (0, 1)"
        )));
    }
    match (mode, label) {
        (AdvMode::Dp, _) => Ok(vec![score]),
        (AdvMode::Eo, Some(y)) => {
            let y = f64::from(y);
            Ok(vec![score, y, score * y])
        }
        (AdvMode::Eo, None) => Err(Error::InvalidArgument(
            "equalized-odds adversary needs true labels".into(),
        )),
    }
}

/// Logit of a score, clipped away from 0 and 1.
pub fn score_logit(p: f64) -> f64 {
    let p = p.clamp(mlp::BCE_EPS, 1.0 - mlp::BCE_EPS);
    (p / (1.0 - p)).ln()
}

/// Batched adversary features from classifier logits. The score column is
/// `sigmoid(sharpness * logit)`; a sharpness of 1 is the score itself.
/// Also returns d(feature)/d(logit) for backpropagation into the classifier.
fn adversary_features(
    mode: AdvMode,
    logits: ArrayView1<f64>,
    y: Option<&[u8]>,
    sharpness: f64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = logits.len();
    let feature = logits.mapv(|z| mlp::sigmoid(sharpness * z));
    let slope = feature.mapv(|f| sharpness * f * (1.0 - f));
    let x = match mode {
        AdvMode::Dp => feature.insert_axis(Axis(1)),
        AdvMode::Eo => {
            let y = y.ok_or_else(|| {
                Error::InvalidArgument("equalized-odds adversary needs true labels".into())
            })?;
            Array2::from_shape_fn((n, 3), |(i, j)| match j {
                0 => feature[i],
                1 => f64::from(y[i]),
                _ => feature[i] * f64::from(y[i]),
            })
        }
    };
    Ok((x, slope))
}

fn adversary_inputs(
    mode: AdvMode,
    scores: ArrayView1<f64>,
    y: Option<&[u8]>,
    sharpness: f64,
) -> Result<Array2<f64>> {
    let logits = scores.mapv(score_logit);
    adversary_features(mode, logits.view(), y, sharpness).map(|(x, _)| x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection of `g` onto `onto`, or `None` when `onto` is too small.
pub fn project(g: &[f64], onto: &[f64]) -> Option<Vec<f64>> {
    let norm_sq = dot(onto, onto);
    if norm_sq.sqrt() < PROJECTION_MIN_NORM {
        return None;
    }
    let c = dot(g, onto) / norm_sq;
    Some(onto.iter().map(|v| c * v).collect())
}

/// Classifier update direction for one tensor.
pub fn combine_gradients(g_pred: &[f64], g_adv: &[f64], alpha: f64, projection: bool) -> Vec<f64> {
    let mut d: Vec<f64> = g_pred.to_vec();
    if projection {
        if let Some(p) = project(g_pred, g_adv) {
            for (di, pi) in d.iter_mut().zip(p) {
                *di -= pi;
            }
        }
    }
    for (di, ai) in d.iter_mut().zip(g_adv) {
        *di -= alpha * ai;
    }
    d
}

fn group_check(s: &[u8]) -> Result<()> {
    if !s.contains(&0) {
        return Err(Error::DegenerateGroup(0));
    }
    if !s.contains(&1) {
        return Err(Error::DegenerateGroup(1));
    }
    Ok(())
}

fn init_adversary(config: &AdvConfig) -> MlpParams {
    let mut r = rng::stream(config.adversary_seed, "adversary-init");
    MlpParams::init(
        config.mode.input_width(),
        &config.adversary_hidden,
        config.adversary_activation,
        1.0,
        &mut r,
    )
}

/// Train classifier and adversary jointly.
pub fn train_adversarial(train: &DataSplit, config: &AdvConfig) -> Result<TrainedModel> {
    config.validate()?;
    let x = train.x.view();
    let (y, s) = (&train.y[..], &train.s[..]);
    if x.nrows() == 0 {
        return Err(Error::Empty("training split".into()));
    }
    mlp::check_two_classes(y)?;
    group_check(s)?;

    let cc = &config.classifier;
    let mut params = cc.init_params(x.ncols());
    let mut opt = Optimizer::for_params(cc.optimizer, cc.learning_rate, &params);
    let mut plan = BatchPlan::new(cc.seed, x.nrows(), cc.batch_size);

    let mut adversary = init_adversary(config);
    let mut adv_opt = Optimizer::for_params(
        OptimizerConfig::default(),
        config.adversary_learning_rate,
        &adversary,
    );

    for epoch in 0..cc.epochs {
        opt.set_learning_rate(cc.learning_rate / (1.0 + config.learning_rate_decay * epoch as f64));
        let mut pred_total = 0.0;
        let mut adv_total = 0.0;
        for rows in plan.epoch() {
            let bx = x.select(Axis(0), &rows);
            let by = gather_labels(y, &rows);
            let bs = gather_labels(s, &rows);

            let cache = forward_cached(&params, bx.view())?;
            let pred_loss = bce(cache.scores.view(), &by);
            if !pred_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: pred_loss,
                });
            }
            let d_logit = bce_logit_grad(cache.scores.view(), &by);
            let (g_pred, _) = backward(&params, &cache, d_logit.view());

            // Adversary loss and its gradient through the classifier score.
            let (adv_in, slope) =
                adversary_features(config.mode, cache.logits(), Some(&by), config.sharpness)?;
            let adv_cache = forward_cached(&adversary, adv_in.view())?;
            let adv_loss = bce(adv_cache.scores.view(), &bs);
            let adv_d_logit = bce_logit_grad(adv_cache.scores.view(), &bs);
            let (g_adversary, d_adv_in) = backward(&adversary, &adv_cache, adv_d_logit.view());
            let d_feature = match config.mode {
                AdvMode::Dp => d_adv_in.column(0).to_owned(),
                AdvMode::Eo => {
                    let yf = Array1::from_iter(by.iter().map(|&v| f64::from(v)));
                    &d_adv_in.column(0) + &(&d_adv_in.column(2) * &yf)
                }
            };
            let d_cls_logit = &d_feature * &slope;
            let (g_adv, _) = backward(&params, &cache, d_cls_logit.view());

            let direction: Vec<Vec<f64>> = g_pred
                .tensors()
                .iter()
                .zip(g_adv.tensors())
                .map(|(gp, ga)| {
                    combine_gradients(gp, ga, config.adversary_weight, config.projection)
                })
                .collect();
            opt.update(
                params.tensors_mut(),
                direction.iter().map(Vec::as_slice).collect(),
            );

            adv_opt.update(adversary.tensors_mut(), g_adversary.tensors());
            for _ in 1..config.adversary_steps {
                let c = forward_cached(&adversary, adv_in.view())?;
                let d = bce_logit_grad(c.scores.view(), &bs);
                let (g, _) = backward(&adversary, &c, d.view());
                adv_opt.update(adversary.tensors_mut(), g.tensors());
            }

            pred_total += pred_loss * rows.len() as f64;
            adv_total += adv_loss * rows.len() as f64;
        }
        log::debug!(
            "adversarial epoch {epoch}: prediction loss {:.5}, adversary loss {:.5}",
            pred_total / x.nrows() as f64,
            adv_total / x.nrows() as f64
        );
        if params
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
    }

    TrainedModel::new(
        config.mode.role(),
        Classifier::Mlp(params),
        Some(adversary),
        cc.seed,
    )
}

/// Train an adversary alone on fixed scores.
pub fn fit_adversary(
    mode: AdvMode,
    scores: ArrayView1<f64>,
    y: Option<&[u8]>,
    s: &[u8],
    config: &AdvConfig,
) -> Result<MlpParams> {
    group_check(s)?;
    let inputs = adversary_inputs(mode, scores, y, config.sharpness)?;
    let cfg = TrainConfig {
        hidden_sizes: config.adversary_hidden.clone(),
        learning_rate: config.adversary_learning_rate,
        seed: config.adversary_seed,
        ..config.classifier.clone()
    };
    let mut adversary = init_adversary(&AdvConfig {
        mode,
        ..config.clone()
    });
    let mut opt = Optimizer::for_params(OptimizerConfig::default(), cfg.learning_rate, &adversary);
    let mut plan = BatchPlan::new(cfg.seed, inputs.nrows(), cfg.batch_size);
    for _ in 0..cfg.epochs {
        for rows in plan.epoch() {
            let bx = inputs.select(Axis(0), &rows);
            let bs = gather_labels(s, &rows);
            let (_, g) = mlp::loss_and_grads(&adversary, bx.view(), &bs)?;
            opt.update(adversary.tensors_mut(), g.tensors());
        }
    }
    Ok(adversary)
}

/// Accuracy of an adversary predicting `s` from fixed classifier scores.
pub fn adversary_accuracy_on_scores(
    adversary: &MlpParams,
    mode: AdvMode,
    scores: ArrayView1<f64>,
    y: Option<&[u8]>,
    s: &[u8],
    sharpness: f64,
) -> Result<f64> {
    let inputs = adversary_inputs(mode, scores, y, sharpness)?;
    let out = mlp::forward(adversary, inputs.view())?;
    let labels: Vec<u8> = out.iter().map(|&p| u8::from(p > 0.5)).collect();
    crate::metrics::accuracy_of(&labels, s)
}

/// Accuracy of a trained model's adversary on `split`; `sharpness` must match
/// the value used in training.
pub fn adversary_accuracy(model: &TrainedModel, split: &DataSplit, sharpness: f64) -> Result<f64> {
    let adversary = model
        .adversary()
        .ok_or_else(|| Error::InvalidArgument("model has no trained adversary".into()))?;
    let mode = AdvMode::from_role(model.role()).ok_or_else(|| {
        Error::InvalidArgument(format!("{} model has no adversary", model.role().as_str()))
    })?;
    let scores = model.classifier().scores(split.x.view())?;
    adversary_accuracy_on_scores(
        adversary,
        mode,
        scores.view(),
        Some(&split.y),
        &split.s,
        sharpness,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_instance_features() {
        assert_eq!(adversary_input(AdvMode::Dp, 0.7, None).unwrap(), vec![0.7]);
        assert_eq!(
            adversary_input(AdvMode::Eo, 0.7, Some(1)).unwrap(),
            vec![0.7, 1.0, 0.7]
        );
        assert_eq!(
            adversary_input(AdvMode::Eo, 0.7, Some(0)).unwrap(),
            vec![0.7, 0.0, 0.0]
        );
        assert!(adversary_input(AdvMode::Eo, 0.7, None).is_err());
        assert!(adversary_input(AdvMode::Dp, 1.0, None).is_err());
    }

    #[test]
    fn batched_features_match_single_instance_at_unit_sharpness() {
        let scores = Array1::from(vec![0.05, 0.5, 0.93]);
        let y = [1u8, 0, 1];
        for mode in [AdvMode::Dp, AdvMode::Eo] {
            let batch = adversary_inputs(mode, scores.view(), Some(&y), 1.0).unwrap();
            assert_eq!(batch.ncols(), mode.input_width());
            for i in 0..3 {
                let one = adversary_input(mode, scores[i], Some(y[i])).unwrap();
                for (a, b) in batch.row(i).iter().zip(&one) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sharpness_slope_matches_finite_difference() {
        let logits = Array1::from(vec![-2.0, -0.1, 0.0, 0.7, 3.0]);
        let h = 1e-6;
        let (_, slope) = adversary_features(AdvMode::Dp, logits.view(), None, 2.5).unwrap();
        for (i, &z) in logits.iter().enumerate() {
            let f = |z: f64| mlp::sigmoid(2.5 * z);
            let numeric = (f(z + h) - f(z - h)) / (2.0 * h);
            assert!((numeric - slope[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = AdvConfig::for_mode(AdvMode::Eo);
        c.sharpness = 0.0;
        assert!(c.validate().is_err());
        let mut c = AdvConfig::default();
        c.adversary_steps = 0;
        assert!(c.validate().is_err());
        let mut c = AdvConfig::default();
        c.adversary_weight = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn projection_skipped_for_tiny_adversary_gradient() {
        let g = [1.0, 2.0];
        assert!(project(&g, &[0.0, 1e-13]).is_none());
        assert_eq!(
            combine_gradients(&g, &[0.0, 0.0], 5.0, true),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn zero_weight_without_projection_is_identity() {
        let g = [1.5, -0.0, 3.25];
        assert_eq!(
            combine_gradients(&g, &[7.0, 8.0, -9.0], 0.0, false),
            g.to_vec()
        );
    }

    #[test]
    fn zero_weight_adversary_predicts_constant() {
        let adversary = MlpParams::zeros(1, &[16], Activation::Relu);
        let scores = Array1::from(vec![0.2, 0.9, 0.4, 0.6, 0.3]);
        let s = [0, 0, 0, 1, 1];
        // Output 0.5 everywhere, so the strict threshold predicts the
        // majority group s = 0 for all: accuracy is the majority base rate.
        let acc =
            adversary_accuracy_on_scores(&adversary, AdvMode::Dp, scores.view(), None, &s, 1.0)
                .unwrap();
        assert_eq!(acc, 0.6);
    }

    proptest! {
        #[test]
        fn projection_decomposition(
            g in proptest::collection::vec(-10.0f64..10.0, 1..20),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut r = rng::stream(seed, "proj");
            let a: Vec<f64> = g.iter().map(|_| r.gen_range(-5.0..5.0)).collect();
            prop_assume!(dot(&a, &a).sqrt() > 1e-3);
            let p = project(&g, &a).unwrap();
            let residual: Vec<f64> = g.iter().zip(&p).map(|(x, y)| x - y).collect();
            let scale = dot(&g, &g).sqrt() * dot(&a, &a).sqrt();
            prop_assert!(dot(&residual, &a).abs() <= 1e-8 * scale.max(1e-300));
            // p is parallel to a: |p . a| = |p| |a|.
            let pn = dot(&p, &p).sqrt();
            let an = dot(&a, &a).sqrt();
            prop_assert!((dot(&p, &a).abs() - pn * an).abs() <= 1e-8 * (pn * an).max(1e-12));
        }
    }
}
