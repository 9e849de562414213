//! Trained models, prediction and the text persistence format.
//!
//! A model file is UTF-8 text, one record per line. Fields are separated by a
//! single tab, shown as two spaces below; values within a field are separated
//! by one space:
//!
//! ```text
//! fairaudit-model  1
//! role  <biased|lfr|adversarial_dp|adversarial_eo>
//! seed  <u64>
//! fingerprint  <sha256 hex of the classifier block>
//! classifier  mlp  <activation>  <layer count>
//! layer  <out>  <in>
//! w  <row-major weights>
//! b  <biases>
//! ...
//! adversary  none | adversary  mlp  <activation>  <layer count> followed by layer records
//! ```
//!
//! An LFR classifier block is instead
//!
//! ```text
//! classifier  lfr  <K>  <m>
//! loss_weights  <reconstruct> <target> <fairness>
//! prototypes  <row-major K x m values>
//! labels  <K values>
//! ```
//!
//! Numbers use the shortest decimal form that parses back to the same
//! double, so files and fingerprints are identical on every platform.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lfr::{self, LfrParams};
use crate::mlp::{self, Activation, Layer, MlpParams};
use crate::predictions::PredictionSet;

const MAGIC: &str = "fairaudit-model";
const VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Biased,
    Lfr,
    AdversarialDp,
    AdversarialEo,
}

impl ModelRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Biased => "biased",
            ModelRole::Lfr => "lfr",
            ModelRole::AdversarialDp => "adversarial_dp",
            ModelRole::AdversarialEo => "adversarial_eo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "biased" => Some(ModelRole::Biased),
            "lfr" => Some(ModelRole::Lfr),
            "adversarial_dp" => Some(ModelRole::AdversarialDp),
            "adversarial_eo" => Some(ModelRole::AdversarialEo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Mlp(MlpParams),
    Lfr(LfrParams),
}

impl Classifier {
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            Classifier::Mlp(p) => mlp::forward(p, x),
            Classifier::Lfr(p) => lfr::lfr_scores(p, x),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Mlp(p) => p.input_dim(),
            Classifier::Lfr(p) => p.prototypes.ncols(),
        }
    }
}

/// A biased or fair model. The role never changes after training and the
/// fingerprint always equals the hash of the classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    role: ModelRole,
    classifier: Classifier,
    adversary: Option<MlpParams>,
    seed: u64,
    fingerprint: String,
}

impl TrainedModel {
    pub fn new(
        role: ModelRole,
        classifier: Classifier,
        adversary: Option<MlpParams>,
        seed: u64,
    ) -> Result<Self> {
        if let Classifier::Mlp(p) = &classifier {
            p.validate()?;
        }
        if let Some(a) = &adversary {
            a.validate()?;
        }
        let fingerprint = fingerprint(&classifier);
        Ok(Self {
            role,
            classifier,
            adversary,
            seed,
            fingerprint,
        })
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn adversary(&self) -> Option<&MlpParams> {
        self.adversary.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}\t{VERSION}");
        let _ = writeln!(out, "role\t{}", self.role.as_str());
        let _ = writeln!(out, "seed\t{}", self.seed);
        let _ = writeln!(out, "fingerprint\t{}", self.fingerprint);
        out.push_str(&classifier_block(&self.classifier));
        match &self.adversary {
            None => out.push_str("adversary\tnone\n"),
            Some(a) => out.push_str(&mlp_block("adversary", a)),
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut reader = Records::new(text);
        let header = reader.next_record()?;
        if header != [MAGIC, VERSION] {
            return Err(Error::parse("model file", "unrecognized header"));
        }
        let role = reader.expect("role", 2)?;
        let role = ModelRole::parse(&role[1])
            .ok_or_else(|| Error::parse("model file", format!("unknown role `{}`", role[1])))?;
        let seed: u64 = parse_num(&reader.expect("seed", 2)?[1])?;
        let stored = reader.expect("fingerprint", 2)?[1].clone();
        let classifier = reader.read_classifier()?;
        let adv = reader.next_record()?;
        let adversary = match adv.get(1).map(String::as_str) {
            Some("none") if adv[0] == "adversary" => None,
            Some("mlp") if adv[0] == "adversary" => Some(reader.read_mlp_body(&adv)?),
            _ => return Err(Error::parse("model file", "malformed adversary record")),
        };
        let model = TrainedModel::new(role, classifier, adversary, seed)?;
        if model.fingerprint != stored {
            return Err(Error::parse(
                "model file",
                format!(
                    "fingerprint mismatch: stored {stored}, recomputed {}",
                    model.fingerprint
                ),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Score and threshold rows of `x`; labels use `score > threshold`.
pub fn predict(
    model: &TrainedModel,
    ids: &[u64],
    x: ArrayView2<f64>,
    threshold: f64,
) -> Result<PredictionSet> {
    if ids.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: ids.len(),
        });
    }
    let scores = model.classifier.scores(x)?;
    PredictionSet::from_scores(ids.to_vec(), scores.to_vec(), threshold)
}

pub fn fingerprint(classifier: &Classifier) -> String {
    hex::encode(Sha256::digest(classifier_block(classifier).as_bytes()))
}

fn join<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn mlp_block(tag: &str, p: &MlpParams) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{tag}\tmlp\t{}\t{}",
        p.activation.as_str(),
        p.layers.len()
    );
    for layer in &p.layers {
        let _ = writeln!(out, "layer\t{}\t{}", layer.out_dim(), layer.in_dim());
        let _ = writeln!(out, "w\t{}", join(layer.weights.iter()));
        let _ = writeln!(out, "b\t{}", join(layer.bias.iter()));
    }
    out
}

fn classifier_block(c: &Classifier) -> String {
    match c {
        Classifier::Mlp(p) => mlp_block("classifier", p),
        Classifier::Lfr(p) => {
            let mut out = String::new();
            let (k, m) = p.prototypes.dim();
            let _ = writeln!(out, "classifier\tlfr\t{k}\t{m}");
            let w = p.loss_weights;
            let _ = writeln!(
                out,
                "loss_weights\t{} {} {}",
                w.reconstruct, w.target, w.fairness
            );
            let _ = writeln!(out, "prototypes\t{}", join(p.prototypes.iter()));
            let _ = writeln!(out, "labels\t{}", join(p.prototype_labels.iter()));
            out
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse("model file", format!("bad number `{s}`")))
}

fn parse_values(field: Option<&String>, n: usize) -> Result<Vec<f64>> {
    let field = field.map(String::as_str).unwrap_or("");
    let values: Vec<f64> = if field.is_empty() {
        Vec::new()
    } else {
        field.split(' ').map(parse_num).collect::<Result<_>>()?
    };
    if values.len() != n {
        return Err(Error::parse(
            "model file",
            format!("expected {n} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

struct Records<'a> {
    lines: std::str::Lines<'a>,
}

impl<'a> Records<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines(),
        }
    }

    fn next_record(&mut self) -> Result<Vec<String>> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::parse("model file", "truncated file"))?;
        Ok(line.split('\t').map(str::to_string).collect())
    }

    fn expect(&mut self, key: &str, len: usize) -> Result<Vec<String>> {
        let rec = self.next_record()?;
        if rec[0] != key || rec.len() < len {
            return Err(Error::parse(
                "model file",
                format!("expected `{key}` record, found `{}`", rec[0]),
            ));
        }
        Ok(rec)
    }

    fn read_mlp_body(&mut self, header: &[String]) -> Result<MlpParams> {
        if header.len() != 4 {
            return Err(Error::parse("model file", "malformed network header"));
        }
        let activation = Activation::parse(&header[2]).ok_or_else(|| {
            Error::parse("model file", format!("unknown activation `{}`", header[2]))
        })?;
        let n_layers: usize = parse_num(&header[3])?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let dims = self.expect("layer", 3)?;
            let out: usize = parse_num(&dims[1])?;
            let inp: usize = parse_num(&dims[2])?;
            let w = parse_values(self.expect("w", 1)?.get(1), out * inp)?;
            let b = parse_values(self.expect("b", 1)?.get(1), out)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((out, inp), w)
                    .map_err(|e| Error::parse("model file", e))?,
                bias: Array1::from(b),
            });
        }
        Ok(MlpParams { layers, activation })
    }

    fn read_classifier(&mut self) -> Result<Classifier> {
        let header = self.expect("classifier", 2)?;
        match header[1].as_str() {
            "mlp" => Ok(Classifier::Mlp(self.read_mlp_body(&header)?)),
            "lfr" => {
                if header.len() != 4 {
                    return Err(Error::parse("model file", "malformed lfr header"));
                }
                let k: usize = parse_num(&header[2])?;
                let m: usize = parse_num(&header[3])?;
                let w = parse_values(self.expect("loss_weights", 2)?.get(1), 3)?;
                let protos = parse_values(self.expect("prototypes", 1)?.get(1), k * m)?;
                let labels = parse_values(self.expect("labels", 1)?.get(1), k)?;
                Ok(Classifier::Lfr(LfrParams {
                    prototypes: Array2::from_shape_vec((k, m), protos)
                        .map_err(|e| Error::parse("model file", e))?,
                    prototype_labels: Array1::from(labels),
                    loss_weights: lfr::LossWeights {
                        reconstruct: w[0],
                        target: w[1],
                        fairness: w[2],
                    },
                }))
            }
            other => Err(Error::parse(
                "model file",
                format!("unknown classifier kind `{other}`"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn mlp_model_round_trips() {
        let mut r = rng::stream(1, "t");
        let p = MlpParams::init(4, &[3], Activation::Relu, 1.0, &mut r);
        let a = MlpParams::init(1, &[2], Activation::Tanh, 1.0, &mut r);
        let model =
            TrainedModel::new(ModelRole::AdversarialDp, Classifier::Mlp(p), Some(a), 9).unwrap();
        let text = model.to_text();
        let back = TrainedModel::from_text(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn tampered_file_fails_fingerprint_check() {
        let p = MlpParams::zeros(2, &[], Activation::Relu);
        let model = TrainedModel::new(ModelRole::Biased, Classifier::Mlp(p), None, 0).unwrap();
        let text = model.to_text().replace("w\t0 0", "w\t0 1");
        assert!(TrainedModel::from_text(&text).is_err());
    }

    #[test]
    fn fingerprint_ignores_role_and_seed() {
        let p = MlpParams::zeros(2, &[1], Activation::Relu);
        let a = TrainedModel::new(ModelRole::Biased, Classifier::Mlp(p.clone()), None, 0).unwrap();
        let b = TrainedModel::new(ModelRole::AdversarialDp, Classifier::Mlp(p), None, 5).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
