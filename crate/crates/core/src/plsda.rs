//! Two-class partial least squares discriminant analysis, used to describe
//! which instances one method changes compared with another.
//!
//! Labels are coded ±1 and centered; components are extracted by NIPALS
//! with deflation of X and y after each component.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this norm a component is treated as absent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    /// m × c, unit-norm columns.
    pub weights: Array2<f64>,
    /// m × c.
    pub loadings: Array2<f64>,
    /// Length c.
    pub y_loadings: Array1<f64>,
    pub x_means: Array1<f64>,
    pub y_mean: f64,
    /// m × c map from centered X to scores: W (PᵀW)⁻¹.
    pub rotation: Array2<f64>,
    /// Fewer components than requested could be extracted.
    pub rank_deficient: bool,
}

impl PlsModel {
    pub fn components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.x_means.len()
    }

    /// Negate component `k` (weights, loadings and y-loading); predictions
    /// are unchanged and only score column `k` flips sign.
    pub fn flip_component(&mut self, k: usize) -> Result<()> {
        if k >= self.components() {
            return Err(Error::InvalidArgument(format!(
                "component {k} of {}",
                self.components()
            )));
        }
        self.weights.column_mut(k).mapv_inplace(|v| -v);
        self.loadings.column_mut(k).mapv_inplace(|v| -v);
        self.y_loadings[k] = -self.y_loadings[k];
        self.rotation = rotation(&self.weights, &self.loadings)?;
        Ok(())
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if let Some(v) = labels.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("label {v} is not 0 or 1")));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument(
            "both classes must be present".into(),
        ));
    }
    Ok(())
}

fn check_finite(x: ArrayView2<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PLS input".into()));
    }
    Ok(())
}

/// Solve for the inverse of a small square matrix by Gauss-Jordan
/// elimination with partial pivoting.
fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        if m[[pivot, col]].abs() < 1e-14 {
            return Err(Error::InvalidArgument("singular PᵀW matrix".into()));
        }
        for j in 0..n {
            m.swap([col, j], [pivot, j]);
            inv.swap([col, j], [pivot, j]);
        }
        let d = m[[col, col]];
        for j in 0..n {
            m[[col, j]] /= d;
            inv[[col, j]] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[[i, col]];
                if f != 0.0 {
                    for j in 0..n {
                        m[[i, j]] -= f * m[[col, j]];
                        inv[[i, j]] -= f * inv[[col, j]];
                    }
                }
            }
        }
    }
    Ok(inv)
}

fn rotation(w: &Array2<f64>, p: &Array2<f64>) -> Result<Array2<f64>> {
    if w.ncols() == 0 {
        return Ok(w.clone());
    }
    Ok(w.dot(&invert(&p.t().dot(w))?))
}

/// Fit with every row weighted equally.
pub fn fit_plsda(x: ArrayView2<f64>, labels: &[u8], components: usize) -> Result<PlsModel> {
    let weights = vec![1.0; labels.len()];
    fit_plsda_weighted(x, labels, &weights, components)
}

/// Fit with non-negative row weights; an integer weight behaves exactly
/// like repeating the row that many times.
pub fn fit_plsda_weighted(
    x: ArrayView2<f64>,
    labels: &[u8],
    row_weights: &[f64],
    components: usize,
) -> Result<PlsModel> {
    let (n, m) = x.dim();
    for len in [labels.len(), row_weights.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    if components == 0 {
        return Err(Error::InvalidArgument("at least one component".into()));
    }
    if n <= components {
        return Err(Error::InvalidArgument(format!(
            "{n} rows cannot support {components} components"
        )));
    }
    check_labels(labels)?;
    check_finite(x)?;
    if row_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("row weights must be >= 0".into()));
    }
    let d = Array1::from(row_weights.to_vec());
    let total: f64 = d.sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("row weights sum to zero".into()));
    }

    let x_means = x.t().dot(&d) / total;
    let mut xr = &x - &x_means.view().insert_axis(Axis(0));
    let coded: Array1<f64> = labels
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();
    let y_mean = coded.dot(&d) / total;
    let mut yr = coded - y_mean;

    let mut w_cols: Vec<Array1<f64>> = Vec::new();
    let mut p_cols: Vec<Array1<f64>> = Vec::new();
    let mut q = Vec::new();
    let mut rank_deficient = false;
    for _ in 0..components {
        let dy = &yr * &d;
        let mut w = xr.t().dot(&dy);
        let norm = w.dot(&w).sqrt();
        if norm < RANK_TOL {
            rank_deficient = true;
            break;
        }
        w /= norm;
        let t = xr.dot(&w);
        let dt = &t * &d;
        let tt = t.dot(&dt);
        if tt < RANK_TOL {
            rank_deficient = true;
            break;
        }
        let p = xr.t().dot(&dt) / tt;
        let qa = yr.dot(&dt) / tt;
        xr -= &(t
            .view()
            .insert_axis(Axis(1))
            .dot(&p.view().insert_axis(Axis(0))));
        yr.scaled_add(-qa, &t);
        w_cols.push(w);
        p_cols.push(p);
        q.push(qa);
    }
    if rank_deficient {
        log::warn!(
            "PLS-DA: only {} of {components} components extracted",
            w_cols.len()
        );
    }
    let stack = |cols: &[Array1<f64>]| Array2::from_shape_fn((m, cols.len()), |(i, j)| cols[j][i]);
    let weights = stack(&w_cols);
    let loadings = stack(&p_cols);
    let rotation = rotation(&weights, &loadings)?;
    Ok(PlsModel {
        weights,
        loadings,
        y_loadings: Array1::from(q),
        x_means,
        y_mean,
        rotation,
        rank_deficient,
    })
}

fn check_width(model: &PlsModel, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: x.ncols(),
        });
    }
    check_finite(x)
}

/// Component scores of each row: n × c.
pub fn project(model: &PlsModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_width(model, x)?;
    let centered = &x - &model.x_means.view().insert_axis(Axis(0));
    Ok(centered.dot(&model.rotation))
}

/// Fitted linear response on the ±1 label scale.
pub fn predict_response(model: &PlsModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    let t = project(model, x)?;
    Ok(t.dot(&model.y_loadings) + model.y_mean)
}

fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson correlation of every feature with every component score
/// (m × c); constant columns give 0.
pub fn feature_correlations(model: &PlsModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let t = project(model, x)?;
    let (m, c) = (x.ncols(), t.ncols());
    Ok(Array2::from_shape_fn((m, c), |(i, k)| {
        pearson(x.column(i), t.column(k))
    }))
}

/// Rank-based AUC of `scores` for separating label 1 from label 0; ties
/// count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    check_labels(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tied blocks.
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let npos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let nneg = labels.len() as f64 - npos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    Ok((rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg))
}

/// AUC of the model's full linear response.
pub fn discriminant_auc(model: &PlsModel, x: ArrayView2<f64>, labels: &[u8]) -> Result<f64> {
    let response = predict_response(model, x)?;
    auc(response.as_slice().expect("contiguous"), labels)
}
