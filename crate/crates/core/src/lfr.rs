//! Learning fair representations: instances are softly assigned to K
//! prototypes so that the assignment distribution is the same for both
//! sensitive groups, while still reconstructing the features and
//! predicting the label through per-prototype label probabilities.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::mlp::{sigmoid, BCE_EPS};
use crate::model::{Classifier, ModelRole, TrainedModel};
use crate::predictions::PredictionSet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reconstruct: f64,
    pub target: f64,
    pub fairness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfrParams {
    /// K x m prototype locations in standardized feature space.
    pub prototypes: Array2<f64>,
    /// Probability of the favorable label attached to each prototype.
    pub prototype_labels: Array1<f64>,
    pub loss_weights: LossWeights,
}

impl LfrParams {
    pub fn k(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() == 0 {
            return Err(Error::InvalidArgument(
                "LFR needs at least one prototype".into(),
            ));
        }
        if self.prototype_labels.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: self.prototype_labels.len(),
            });
        }
        if self
            .prototype_labels
            .iter()
            .any(|&l| !(0.0..=1.0).contains(&l))
        {
            return Err(Error::InvalidArgument(
                "prototype labels must lie in [0, 1]".into(),
            ));
        }
        let w = self.loss_weights;
        if [w.reconstruct, w.target, w.fairness]
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfrLoss {
    pub total: f64,
    pub reconstruct: f64,
    pub target: f64,
    pub fairness: f64,
}

/// Gradients with respect to the prototypes and the label logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LfrGrads {
    pub prototypes: Array2<f64>,
    pub label_logits: Array1<f64>,
}

fn check_width(params: &LfrParams, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.prototypes.ncols() {
        return Err(Error::DimensionMismatch {
            expected: params.prototypes.ncols(),
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Soft assignment: row-wise softmax of negative squared distances.
pub fn lfr_assign(params: &LfrParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_width(params, &x)?;
    let v = &params.prototypes;
    let x_sq = x.map_axis(Axis(1), |r| r.dot(&r));
    let v_sq = v.map_axis(Axis(1), |r| r.dot(&r));
    let mut m = x.dot(&v.t());
    for ((i, k), d) in m.indexed_iter_mut() {
        *d = -(x_sq[i] - 2.0 * *d + v_sq[k]).max(0.0);
    }
    if m.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("prototype distances".into()));
    }
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|d| (d - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(m)
}

/// Favorable-label probability: assignment-weighted prototype labels.
pub fn lfr_scores(params: &LfrParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(lfr_assign(params, x)?.dot(&params.prototype_labels))
}

pub fn lfr_predict(
    params: &LfrParams,
    ids: &[u64],
    x: ArrayView2<f64>,
    threshold: f64,
) -> Result<PredictionSet> {
    let scores = lfr_scores(params, x)?;
    PredictionSet::from_scores(ids.to_vec(), scores.to_vec(), threshold)
}

fn group_counts(s: &[u8]) -> Result<(f64, f64)> {
    let n1 = s.iter().filter(|&&v| v == 1).count();
    let n0 = s.len() - n1;
    if n0 == 0 {
        return Err(Error::DegenerateGroup(0));
    }
    if n1 == 0 {
        return Err(Error::DegenerateGroup(1));
    }
    Ok((n0 as f64, n1 as f64))
}

/// Loss and analytic gradients. Label probabilities are parametrized by
/// logits, so `label_logits` holds dL/dlogit.
pub fn lfr_loss_and_grads(
    params: &LfrParams,
    x: ArrayView2<f64>,
    s: &[u8],
    y: &[u8],
) -> Result<(LfrLoss, LfrGrads)> {
    params.validate()?;
    let n = x.nrows();
    if s.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.len().min(y.len()),
        });
    }
    let (n0, n1) = group_counts(s)?;
    let w = params.loss_weights;
    let v = &params.prototypes;
    let labels = &params.prototype_labels;
    let (k, m_dim) = v.dim();
    let assign = lfr_assign(params, x)?;

    // Reconstruction.
    let recon = assign.dot(v);
    let resid = &recon - &x;
    let denom = (n * m_dim).max(1) as f64;
    let l_x = resid.iter().map(|r| r * r).sum::<f64>() / denom;
    let d_recon = resid * (2.0 / denom);

    // Prediction.
    let y_hat = assign.dot(labels);
    let mut l_y = 0.0;
    let mut d_yhat = Array1::zeros(n);
    for i in 0..n {
        let raw = y_hat[i];
        let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let t = f64::from(y[i]);
        l_y -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        if (BCE_EPS..=1.0 - BCE_EPS).contains(&raw) {
            d_yhat[i] = (p - t) / (p * (1.0 - p)) / n as f64;
        }
    }
    l_y /= n as f64;

    // Group parity of mean assignments.
    let mut mean0 = Array1::<f64>::zeros(k);
    let mut mean1 = Array1::<f64>::zeros(k);
    for (row, &g) in assign.rows().into_iter().zip(s) {
        if g == 1 {
            mean1 += &row;
        } else {
            mean0 += &row;
        }
    }
    mean0 /= n0;
    mean1 /= n1;
    let diff = &mean0 - &mean1;
    let l_z = diff.iter().map(|d| d.abs()).sum::<f64>();
    let sign = diff.mapv(f64::signum);

    let total = w.reconstruct * l_x + w.target * l_y + w.fairness * l_z;

    // dL/dM
    let mut d_assign = d_recon.dot(&v.t()) * w.reconstruct;
    for i in 0..n {
        let group_scale = if s[i] == 1 { -1.0 / n1 } else { 1.0 / n0 };
        for kk in 0..k {
            d_assign[[i, kk]] +=
                w.target * d_yhat[i] * labels[kk] + w.fairness * sign[kk] * group_scale;
        }
    }

    // Softmax over negative distances: dL/dD_ik = -M_ik (G_ik - sum_j G_ij M_ij).
    let mut d_dist = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let row_m = assign.row(i);
        let row_g = d_assign.row(i);
        let inner = row_m.dot(&row_g);
        for kk in 0..k {
            d_dist[[i, kk]] = -row_m[kk] * (row_g[kk] - inner);
        }
    }

    // D_ik = |x_i - v_k|^2.
    let col = d_dist.sum_axis(Axis(0));
    let mut d_proto = d_dist.t().dot(&x) * -2.0;
    for kk in 0..k {
        for j in 0..m_dim {
            d_proto[[kk, j]] += 2.0 * col[kk] * v[[kk, j]];
        }
    }
    // Direct reconstruction path through V.
    d_proto = d_proto + assign.t().dot(&d_recon) * w.reconstruct;

    let d_labels = assign.t().dot(&d_yhat) * w.target;
    let d_logits = d_labels * labels.mapv(|l| l * (1.0 - l));

    Ok((
        LfrLoss {
            total,
            reconstruct: l_x,
            target: l_y,
            fairness: l_z,
        },
        LfrGrads {
            prototypes: d_proto,
            label_logits: d_logits,
        },
    ))
}

pub fn lfr_loss(params: &LfrParams, x: ArrayView2<f64>, s: &[u8], y: &[u8]) -> Result<LfrLoss> {
    lfr_loss_and_grads(params, x, s, y).map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LfrConfig {
    pub prototypes: usize,
    pub reconstruct_weight: f64,
    pub target_weight: f64,
    pub fairness_weight: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for LfrConfig {
    fn default() -> Self {
        Self {
            prototypes: 10,
            reconstruct_weight: 0.01,
            target_weight: 10.0,
            fairness_weight: 5.0,
            iterations: 600,
            learning_rate: 0.05,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl LfrConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            reconstruct: self.reconstruct_weight,
            target: self.target_weight,
            fairness: self.fairness_weight,
        }
    }
}

/// Prototypes start on K distinct training rows (plus small jitter), label
/// probabilities at 0.5.
pub fn init_params(x: ArrayView2<f64>, config: &LfrConfig) -> Result<LfrParams> {
    let (n, m) = x.dim();
    let k = config.prototypes;
    if k == 0 {
        return Err(Error::InvalidArgument(
            "LFR needs at least one prototype".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Empty("training split".into()));
    }
    let mut r = rng::stream(config.seed, "lfr-init");
    let rows: Vec<usize> = if k <= n {
        sample(&mut r, n, k).into_vec()
    } else {
        (0..k).map(|_| r.gen_range(0..n)).collect()
    };
    let mut prototypes = Array2::zeros((k, m));
    for (kk, &row) in rows.iter().enumerate() {
        for j in 0..m {
            prototypes[[kk, j]] = x[[row, j]] + r.gen_range(-0.01..0.01);
        }
    }
    let params = LfrParams {
        prototypes,
        prototype_labels: Array1::from_elem(k, 0.5),
        loss_weights: config.loss_weights(),
    };
    params.validate()?;
    Ok(params)
}

/// Full-batch Adam over prototypes and label logits.
pub fn fit_lfr_arrays(
    x: ArrayView2<f64>,
    s: &[u8],
    y: &[u8],
    config: &LfrConfig,
) -> Result<LfrParams> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    let mut params = init_params(x, config)?;
    let mut logits = params.prototype_labels.mapv(|l| (l / (1.0 - l)).ln());
    let shapes = [params.prototypes.len(), logits.len()];
    let mut opt = crate::mlp::Optimizer::new(
        crate::mlp::OptimizerConfig::default(),
        config.learning_rate,
        &shapes,
    );
    for it in 0..config.iterations {
        let (loss, grads) = lfr_loss_and_grads(&params, x, s, y)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch: it,
                loss: loss.total,
            });
        }
        if it % 50 == 0 {
            log::debug!(
                "lfr iter {it}: total {:.5} (x {:.5}, y {:.5}, z {:.5})",
                loss.total,
                loss.reconstruct,
                loss.target,
                loss.fairness
            );
        }
        opt.update(
            vec![
                params.prototypes.as_slice_mut().expect("standard layout"),
                logits.as_slice_mut().expect("standard layout"),
            ],
            vec![
                grads.prototypes.as_slice().expect("standard layout"),
                grads.label_logits.as_slice().expect("standard layout"),
            ],
        );
        params.prototype_labels = logits.mapv(sigmoid);
    }
    if params.prototypes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            epoch: config.iterations,
            loss: f64::NAN,
        });
    }
    Ok(params)
}

pub fn fit_lfr(train: &DataSplit, config: &LfrConfig) -> Result<(LfrParams, TrainedModel)> {
    let params = fit_lfr_arrays(train.x.view(), &train.s, &train.y, config)?;
    let model = TrainedModel::new(
        ModelRole::Lfr,
        Classifier::Lfr(params.clone()),
        None,
        config.seed,
    )?;
    Ok((params, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_params(seed: u64, k: usize, m: usize, w: LossWeights) -> LfrParams {
        let mut r = rng::stream(seed, "lfr-test-params");
        LfrParams {
            prototypes: Array2::from_shape_fn((k, m), |_| r.gen_range(-1.0..1.0)),
            prototype_labels: Array1::from_shape_fn(k, |_| r.gen_range(0.05..0.95)),
            loss_weights: w,
        }
    }

    fn random_data(seed: u64, n: usize, m: usize) -> (Array2<f64>, Vec<u8>, Vec<u8>) {
        let mut r = rng::stream(seed, "lfr-test-data");
        let x = Array2::from_shape_fn((n, m), |_| r.gen_range(-1.5..1.5));
        let mut s: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let y: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        s[0] = 0;
        s[1] = 1;
        (x, s, y)
    }

    const W: LossWeights = LossWeights {
        reconstruct: 0.7,
        target: 1.3,
        fairness: 2.1,
    };

    #[test]
    fn single_prototype_assigns_everything() {
        let p = random_params(1, 1, 3, W);
        let (x, s, y) = random_data(2, 6, 3);
        let m = lfr_assign(&p, x.view()).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        assert_eq!(lfr_loss(&p, x.view(), &s, &y).unwrap().fairness, 0.0);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let p = LfrParams {
            prototypes: array![[1.0, 0.0], [-1.0, 0.0]],
            prototype_labels: array![0.2, 0.8],
            loss_weights: W,
        };
        let m = lfr_assign(&p, array![[0.0, 3.0]].view()).unwrap();
        assert!((m[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((m[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn assignment_rows_sum_to_one() {
        let p = random_params(3, 4, 3, W);
        let (x, _, _) = random_data(4, 10, 3);
        let m = lfr_assign(&p, x.view()).unwrap();
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn mirrored_groups_have_zero_parity_loss() {
        let (x, _, y) = random_data(5, 8, 3);
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let s2: Vec<u8> = (0..16).map(|i| u8::from(i >= 8)).collect();
        let y2: Vec<u8> = y.iter().chain(&y).copied().collect();
        let p = random_params(6, 4, 3, W);
        assert_eq!(lfr_loss(&p, x2.view(), &s2, &y2).unwrap().fairness, 0.0);
    }

    /// Straight-line re-implementation of the three loss terms.
    fn loss_oracle(p: &LfrParams, x: &Array2<f64>, s: &[u8], y: &[u8]) -> (f64, f64, f64, f64) {
        let (n, m) = x.dim();
        let k = p.k();
        let mut assign = vec![vec![0.0; k]; n];
        for i in 0..n {
            let mut d = vec![0.0; k];
            for kk in 0..k {
                for j in 0..m {
                    d[kk] += (x[[i, j]] - p.prototypes[[kk, j]]).powi(2);
                }
            }
            let z: f64 = d.iter().map(|v| (-v).exp()).sum();
            for kk in 0..k {
                assign[i][kk] = (-d[kk]).exp() / z;
            }
        }
        let mut lx = 0.0;
        let mut ly = 0.0;
        for i in 0..n {
            for j in 0..m {
                let mut r = 0.0;
                for kk in 0..k {
                    r += assign[i][kk] * p.prototypes[[kk, j]];
                }
                lx += (r - x[[i, j]]).powi(2);
            }
            let mut yh = 0.0;
            for kk in 0..k {
                yh += assign[i][kk] * p.prototype_labels[kk];
            }
            ly += if y[i] == 1 {
                -yh.ln()
            } else {
                -(1.0 - yh).ln()
            };
        }
        lx /= (n * m) as f64;
        ly /= n as f64;
        let mut lz = 0.0;
        for kk in 0..k {
            let (mut a, mut na, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if s[i] == 0 {
                    a += assign[i][kk];
                    na += 1.0;
                } else {
                    b += assign[i][kk];
                    nb += 1.0;
                }
            }
            lz += (a / na - b / nb).abs();
        }
        let w = p.loss_weights;
        (
            w.reconstruct * lx + w.target * ly + w.fairness * lz,
            lx,
            ly,
            lz,
        )
    }

    #[test]
    fn loss_matches_straight_line_oracle() {
        for seed in 0..5 {
            let p = random_params(seed, 3, 2, W);
            let (x, s, y) = random_data(seed + 100, 7, 2);
            let got = lfr_loss(&p, x.view(), &s, &y).unwrap();
            let (t, lx, ly, lz) = loss_oracle(&p, &x, &s, &y);
            assert!((got.total - t).abs() < 1e-12 * t.abs().max(1.0));
            assert!((got.reconstruct - lx).abs() < 1e-12);
            assert!((got.target - ly).abs() < 1e-12);
            assert!((got.fairness - lz).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_group_is_an_error() {
        let p = random_params(1, 2, 2, W);
        let (x, _, y) = random_data(2, 4, 2);
        assert!(matches!(
            lfr_loss(&p, x.view(), &[1, 1, 1, 1], &y),
            Err(Error::DegenerateGroup(0))
        ));
    }

    #[test]
    fn prediction_edge_cases() {
        let mut p = random_params(1, 3, 2, W);
        let (x, _, _) = random_data(2, 5, 2);
        let ids: Vec<u64> = (0..5).collect();

        p.prototype_labels = Array1::from_elem(3, 1.0);
        let pred = lfr_predict(&p, &ids, x.view(), 0.5).unwrap();
        assert!(pred.scores.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(pred.labels.iter().all(|&l| l == 1));

        p.prototype_labels = Array1::from_elem(3, 0.5);
        let pred = lfr_predict(&p, &ids, x.view(), 0.5).unwrap();
        assert!(pred.scores.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        // Rounding can land a hair above 0.5; compare against the exact scores.
        for (score, label) in pred.scores.iter().zip(&pred.labels) {
            assert_eq!(*label, u8::from(*score > 0.5));
        }
    }

    #[test]
    fn separable_data_without_fairness_term() {
        let mut r = rng::stream(11, "lfr-sep");
        let n = 200;
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![0u8; n];
        let mut s = vec![0u8; n];
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 1.5 } else { -1.5 };
            x[[i, 0]] = c + r.gen_range(-0.5..0.5);
            x[[i, 1]] = r.gen_range(-1.0..1.0);
            y[i] = label;
            s[i] = r.gen_range(0..2);
        }
        let config = LfrConfig {
            prototypes: 4,
            reconstruct_weight: 0.0,
            target_weight: 1.0,
            fairness_weight: 0.0,
            iterations: 300,
            learning_rate: 0.05,
            threshold: 0.5,
            seed: 3,
        };
        let params = fit_lfr_arrays(x.view(), &s, &y, &config).unwrap();
        let ids: Vec<u64> = (0..n as u64).collect();
        let pred = lfr_predict(&params, &ids, x.view(), 0.5).unwrap();
        let acc = pred.labels.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / n as f64;
        assert!(acc >= 0.95, "accuracy {acc}");

        let again = fit_lfr_arrays(x.view(), &s, &y, &config).unwrap();
        assert_eq!(again, params);
    }

    proptest! {
        #[test]
        fn scores_are_convex_combinations(seed in 0u64..1000) {
            let p = random_params(seed, 4, 3, W);
            let (x, _, _) = random_data(seed + 1, 6, 3);
            let scores = lfr_scores(&p, x.view()).unwrap();
            let lo = p.prototype_labels.fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = p.prototype_labels.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            for v in scores {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn parity_loss_ignores_within_group_order(seed in 0u64..1000) {
            let p = random_params(seed, 3, 2, W);
            let (x, s, y) = random_data(seed + 7, 9, 2);
            let mut order: Vec<usize> = (0..9).collect();
            let mut r = rng::stream(seed, "perm");
            // Permute rows within each group only.
            for g in 0..2u8 {
                let mut idx: Vec<usize> = (0..9).filter(|&i| s[i] == g).collect();
                let orig = idx.clone();
                rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut r);
                for (a, b) in orig.iter().zip(idx) {
                    order[*a] = b;
                }
            }
            let xp = x.select(Axis(0), &order);
            let sp: Vec<u8> = order.iter().map(|&i| s[i]).collect();
            let yp: Vec<u8> = order.iter().map(|&i| y[i]).collect();
            let a = lfr_loss(&p, x.view(), &s, &y).unwrap().fairness;
            let b = lfr_loss(&p, xp.view(), &sp, &yp).unwrap().fairness;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
