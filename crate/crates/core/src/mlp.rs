//! A small fully connected binary classifier with hand-written
//! backpropagation and an Adam optimizer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelRole, TrainedModel};
use crate::rng;

/// Probability clipping inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One dense layer: `out x in` weights and `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Network parameters. The last layer has a single unit whose logistic
/// output is the score.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers, activation }
    }

    /// Uniform fan-in initialisation: weights in `±scale / sqrt(fan_in)`,
    /// zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        scale: f64,
        rng: &mut rng::Rng,
    ) -> Self {
        let mut params = Self::zeros(input_dim, hidden, activation);
        for layer in &mut params.layers {
            let limit = scale / (layer.in_dim() as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.gen_range(-limit..=limit));
        }
        params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.out_dim(),
                    got: layer.bias.len(),
                });
            }
        }
        let last = self.layers.last().unwrap();
        if last.out_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "final layer has {} units, expected 1",
                last.out_dim()
            )));
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            activation: self.activation,
        }
    }

    /// Parameter tensors in layer order: w0, b0, w1, b1, ...
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    pub scores: Array1<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> ArrayView1<'_, f64> {
        self.pre.last().unwrap().column(0)
    }
}

fn check_input(params: &MlpParams, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input matrix".into()));
    }
    Ok(())
}

pub fn forward_cached(params: &MlpParams, x: ArrayView2<f64>) -> Result<ForwardCache> {
    check_input(params, &x)?;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut current = x.to_owned();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let z = current.dot(&layer.weights.t()) + &layer.bias;
        inputs.push(current);
        current = if l == last {
            z.clone()
        } else {
            z.mapv(|v| params.activation.apply(v))
        };
        pre.push(z);
    }
    let scores = current.column(0).mapv(sigmoid);
    Ok(ForwardCache {
        inputs,
        pre,
        scores,
    })
}

/// Scores in (0, 1), one per row.
pub fn forward(params: &MlpParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    forward_cached(params, x).map(|c| c.scores)
}

/// Backpropagate `d_logit` (dL/dz of the output unit, one entry per row).
/// Returns parameter gradients and the gradient with respect to the input.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    d_logit: ArrayView1<f64>,
) -> (MlpParams, Array2<f64>) {
    let mut grads = params.zeros_like();
    let mut dz: Array2<f64> = d_logit.to_owned().insert_axis(Axis(1));
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        grads.layers[l].weights = dz.t().dot(&cache.inputs[l]);
        grads.layers[l].bias = dz.sum_axis(Axis(0));
        let d_input = dz.dot(&layer.weights);
        if l == 0 {
            return (grads, d_input);
        }
        let act = params.activation;
        dz = d_input * cache.pre[l - 1].mapv(|z| act.derivative(z));
    }
    unreachable!("network has at least one layer")
}

/// Mean binary cross-entropy with probabilities clipped to `[eps, 1 - eps]`.
pub fn bce(scores: ArrayView1<f64>, y: &[u8]) -> f64 {
    let n = y.len() as f64;
    scores
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// dBCE/dlogit per row for the mean-reduced loss.
pub fn bce_logit_grad(scores: ArrayView1<f64>, y: &[u8]) -> Array1<f64> {
    let n = y.len() as f64;
    Array1::from_iter(scores.iter().zip(y).map(|(&p, &t)| {
        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
            0.0
        } else {
            (p - f64::from(t)) / n
        }
    }))
}

fn check_labels(y: &[u8]) -> Result<()> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean BCE of the batch and its exact gradient.
pub fn loss_and_grads(
    params: &MlpParams,
    x: ArrayView2<f64>,
    y: &[u8],
) -> Result<(f64, MlpParams)> {
    if x.nrows() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    check_labels(y)?;
    let cache = forward_cached(params, x)?;
    let loss = bce(cache.scores.view(), y);
    let d_logit = bce_logit_grad(cache.scores.view(), y);
    let (grads, _) = backward(params, &cache, d_logit.view());
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer state over a list of flat tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    learning_rate: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, learning_rate: f64, shapes: &[usize]) -> Self {
        Self {
            config,
            learning_rate,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: OptimizerConfig, learning_rate: f64, params: &MlpParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, learning_rate, &shapes)
    }

    /// Descend along `grads`.
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.config {
            OptimizerConfig::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32, 32],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 128,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.weight_init_scale > 0.0) {
            return Err(Error::InvalidArgument(
                "weight_init_scale must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn init_params(&self, input_dim: usize) -> MlpParams {
        let mut init_rng = rng::stream(self.seed, "mlp-init");
        MlpParams::init(
            input_dim,
            &self.hidden_sizes,
            self.activation,
            self.weight_init_scale,
            &mut init_rng,
        )
    }
}

/// Seeded mini-batch order: a fresh permutation per epoch.
pub struct BatchPlan {
    rng: rng::Rng,
    n: usize,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(seed: u64, n: usize, batch_size: usize) -> Self {
        Self {
            rng: rng::stream(seed, "mlp-shuffle"),
            n,
            batch_size,
        }
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

pub(crate) fn gather_labels(y: &[u8], rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&i| y[i]).collect()
}

pub(crate) fn check_two_classes(y: &[u8]) -> Result<()> {
    check_labels(y)?;
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::InvalidArgument(
            "training labels contain a single class".into(),
        ));
    }
    Ok(())
}

/// Train the accuracy-only model.
pub fn train_biased(train: &DataSplit, config: &TrainConfig) -> Result<TrainedModel> {
    let params = fit_mlp(train.x.view(), &train.y, config)?;
    TrainedModel::new(
        ModelRole::Biased,
        Classifier::Mlp(params),
        None,
        config.seed,
    )
}

/// Plain BCE training loop shared by the biased model and tests.
pub fn fit_mlp(x: ArrayView2<f64>, y: &[u8], config: &TrainConfig) -> Result<MlpParams> {
    config.validate()?;
    if x.nrows() == 0 {
        return Err(Error::Empty("training split".into()));
    }
    check_two_classes(y)?;
    let mut params = config.init_params(x.ncols());
    let mut opt = Optimizer::for_params(config.optimizer, config.learning_rate, &params);
    let mut plan = BatchPlan::new(config.seed, x.nrows(), config.batch_size);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for rows in plan.epoch() {
            let bx = x.select(Axis(0), &rows);
            let by = gather_labels(y, &rows);
            let (loss, grads) = loss_and_grads(&params, bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * rows.len() as f64;
            opt.update(params.tensors_mut(), grads.tensors());
        }
        log::debug!("epoch {epoch}: mean loss {:.5}", total / x.nrows() as f64);
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
    Ok(params)
}
