//! The multi-run study as a file-based pipeline.
//!
//! Every stage reads the artifacts of earlier stages from the output
//! directory and writes its own, so any stage can be re-run in isolation:
//!
//! ```text
//! out/
//!   config.json                 resolved config, with its hash
//!   data/{train,test}.split     standardized splits
//!   models/                     biased and fair models, post-processing rules
//!   predictions/<method>_run<r>.csv
//!   status/<method>_run<r>.txt  why a (method, run) cell failed
//!   audit/audit.json
//!   plsda/                      summary.json, projections, correlations
//!   report/report.json, report/report.sha256, report/tables/*.csv
//! ```

mod files;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversarial::{train_adversarial, AdvConfig, AdvMode};
use crate::audit::{self, DeltaSet};
use crate::data::{self, DataSplit, DatasetManifest};
use crate::error::{Error, Result};
use crate::lfr::{fit_lfr, LfrConfig};
use crate::metrics::{self, FairnessScores};
use crate::mlp::{train_biased, TrainConfig};
use crate::model::{predict, TrainedModel};
use crate::plsda;
use crate::postprocess::{
    apply_group_thresholds, fit_group_thresholds, roc_flip, roc_search, RocConfig,
};
use crate::predictions::PredictionSet;

pub use files::PredictionsFile;
pub use report::{
    render_report, AuditReport, BiasedAudit, BiasedRun, IouSeries, MethodAudit, MethodSummary,
    PlsdaSummary, Rendered, ReportFormat, RunCell, Stat,
};

type CellDeltas = BTreeMap<(String, u32), std::result::Result<(PredictionsFile, DeltaSet), String>>;

/// Environment variable that overrides `output_dir`.
pub const OUT_ENV: &str = "FAIRAUDIT_OUT";

const BIASED: &str = "biased";
const LABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lfr,
    AdversarialDp,
    AdversarialEo,
    Roc,
    ThresholdOpt,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lfr,
        Method::AdversarialDp,
        Method::AdversarialEo,
        Method::Roc,
        Method::ThresholdOpt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lfr => "lfr",
            Method::AdversarialDp => "adversarial_dp",
            Method::AdversarialEo => "adversarial_eo",
            Method::Roc => "roc",
            Method::ThresholdOpt => "threshold_opt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Methods targeting demographic parity.
    pub fn targets_parity(self) -> bool {
        matches!(self, Method::Lfr | Method::AdversarialDp | Method::Roc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdOptConfig {
    /// Split whose biased scores and labels the group rules are fitted on.
    pub fit_split: FitSplit,
}

impl Default for ThresholdOptConfig {
    fn default() -> Self {
        Self {
            fit_split: FitSplit::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlsdaConfig {
    /// Method pairs to contrast; the first method's exclusive changes are
    /// class 1.
    pub pairs: Vec<(Method, Method)>,
    /// Restrict to one sensitive group; `None` uses everyone.
    pub group: Option<u8>,
    pub components: usize,
    pub runs: Vec<u32>,
    pub top_features: usize,
}

impl Default for PlsdaConfig {
    fn default() -> Self {
        Self {
            pairs: vec![(Method::Lfr, Method::AdversarialDp)],
            group: Some(0),
            components: 2,
            runs: vec![0],
            top_features: 10,
        }
    }
}

/// A full study. Seeds inside method blocks are replaced by the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Dataset manifest; relative paths resolve against the config file.
    pub dataset: PathBuf,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub base_seed: u64,
    /// Train one biased model on `base_seed` and reuse it in every run.
    pub fixed_biased_model: bool,
    pub output_dir: PathBuf,
    /// Worker threads for independent cells; 0 uses all cores. Results do
    /// not depend on it.
    pub workers: usize,
    pub biased: TrainConfig,
    pub lfr: LfrConfig,
    pub adversarial_dp: AdvConfig,
    pub adversarial_eo: AdvConfig,
    pub roc: RocConfig,
    pub threshold_opt: ThresholdOptConfig,
    pub plsda: PlsdaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: PathBuf::new(),
            methods: Method::ALL.to_vec(),
            runs: 10,
            base_seed: 0,
            fixed_biased_model: true,
            output_dir: PathBuf::from("out"),
            workers: 0,
            biased: TrainConfig::default(),
            lfr: LfrConfig::default(),
            adversarial_dp: AdvConfig::for_mode(AdvMode::Dp),
            adversarial_eo: AdvConfig::for_mode(AdvMode::Eo),
            roc: RocConfig::default(),
            threshold_opt: ThresholdOptConfig::default(),
            plsda: PlsdaConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// Parse a config document. Keys not given keep their defaults, also
    /// inside method blocks.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut value =
            toml::Value::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut value, user);
        let mut config: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(dir) = base_dir {
            if config.dataset.is_relative() && !config.dataset.as_os_str().is_empty() {
                config.dataset = dir.join(&config.dataset);
            }
            if config.output_dir.is_relative() {
                config.output_dir = dir.join(&config.output_dir);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("no dataset manifest given".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("methods listed twice".into()));
        }
        if self.adversarial_dp.mode != AdvMode::Dp {
            return Err(Error::Config(
                "adversarial_dp block must use mode dp".into(),
            ));
        }
        if self.adversarial_eo.mode != AdvMode::Eo {
            return Err(Error::Config(
                "adversarial_eo block must use mode eo".into(),
            ));
        }
        self.biased.validate()?;
        self.adversarial_dp.validate()?;
        self.adversarial_eo.validate()?;
        self.roc.validate()?;
        if self.plsda.components == 0 {
            return Err(Error::Config("plsda components must be >= 1".into()));
        }
        if matches!(self.plsda.group, Some(g) if g > 1) {
            return Err(Error::Config("plsda group must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: u32) -> u64 {
        self.base_seed.wrapping_add(u64::from(run))
    }

    pub fn run_ids(&self) -> impl Iterator<Item = u32> {
        0..self.runs as u32
    }

    fn worker_count(&self) -> usize {
        match self.workers {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}

/// Create parent directories and write.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(what, e))?;
    text.push('\n');
    Ok(text)
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// Hash of everything that determines the results: the config without
/// output location and worker count, the manifest without its file path,
/// and the bytes of the data file.
pub fn config_hash(config: &ExperimentConfig, manifest: &DatasetManifest) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    c.dataset = PathBuf::new();
    c.workers = 0;
    let mut m = manifest.clone();
    m.source_path = PathBuf::new();
    let data =
        std::fs::read(&manifest.source_path).map_err(|e| Error::io(&manifest.source_path, e))?;
    let mut doc = serde_json::to_string(&c).map_err(|e| Error::parse("config", e))?;
    doc.push('\n');
    doc.push_str(&serde_json::to_string(&m).map_err(|e| Error::parse("manifest", e))?);
    doc.push('\n');
    doc.push_str(&report::sha256_hex(&data));
    Ok(report::sha256_hex(doc.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResolvedConfig {
    config_hash: String,
    config: ExperimentConfig,
}

/// Outcome of the mitigation stage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MitigationSummary {
    pub succeeded: usize,
    /// (method, run, reason)
    pub failed: Vec<(String, u32, String)>,
}

/// A configured study bound to its output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let manifest = DatasetManifest::load(&config.dataset)?;
        let hash = config_hash(&config, &manifest)?;
        Ok(Self {
            config,
            manifest,
            hash,
        })
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    fn split_path(&self, name: &str) -> PathBuf {
        self.out().join("data").join(format!("{name}.split"))
    }

    pub fn predictions_path(&self, method: &str, run: u32) -> PathBuf {
        self.out()
            .join("predictions")
            .join(format!("{method}_run{run}.csv"))
    }

    fn status_path(&self, method: &str, run: u32) -> PathBuf {
        self.out()
            .join("status")
            .join(format!("{method}_run{run}.txt"))
    }

    fn biased_model_path(&self, run: u32) -> PathBuf {
        let name = if self.config.fixed_biased_model {
            "biased.model".to_string()
        } else {
            format!("biased_run{run}.model")
        };
        self.out().join("models").join(name)
    }

    pub fn audit_path(&self) -> PathBuf {
        self.out().join("audit").join("audit.json")
    }

    fn plsda_summary_path(&self) -> PathBuf {
        self.out().join("plsda").join("summary.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out().join("report")
    }

    fn load_splits(&self) -> Result<(DataSplit, DataSplit)> {
        Ok((
            data::read_split(&self.split_path("train"))?,
            data::read_split(&self.split_path("test"))?,
        ))
    }

    fn parallel<T: Send>(&self, jobs: usize, work: impl Fn(usize) -> T + Sync) -> Vec<T> {
        let workers = self.config.worker_count().min(jobs).max(1);
        let next = AtomicUsize::new(0);
        let mut results: Vec<(usize, T)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= jobs {
                                break done;
                            }
                            done.push((i, work(i)));
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker thread panicked"))
                .collect()
        });
        results.sort_by_key(|(i, _)| *i);
        results.into_iter().map(|(_, t)| t).collect()
    }

    /// Load, split and standardize the dataset; record the resolved config.
    pub fn prepare_data(&self) -> Result<data::LoadReport> {
        let (train, test, load) = data::load_dataset_with_report(&self.manifest)?;
        data::write_split(&self.split_path("train"), &train)?;
        data::write_split(&self.split_path("test"), &test)?;
        write_file(
            &self.out().join("data").join("load_report.json"),
            to_json(&load, "load report")?.as_bytes(),
        )?;
        let resolved = ResolvedConfig {
            config_hash: self.hash.clone(),
            config: self.config.clone(),
        };
        write_file(
            &self.out().join("config.json"),
            to_json(&resolved, "config")?.as_bytes(),
        )?;
        Ok(load)
    }

    /// Train the biased model(s) and write biased test predictions per run.
    pub fn train(&self) -> Result<()> {
        let (train, test) = self.load_splits()?;
        let seeds: Vec<(u32, u64)> = if self.config.fixed_biased_model {
            vec![(0, self.config.base_seed)]
        } else {
            self.config
                .run_ids()
                .map(|r| (r, self.config.run_seed(r)))
                .collect()
        };
        let models = self.parallel(seeds.len(), |i| {
            let started = Instant::now();
            let cfg = TrainConfig {
                seed: seeds[i].1,
                ..self.config.biased.clone()
            };
            let model = train_biased(&train, &cfg);
            log::info!(
                "biased model seed {} trained in {:.1?}",
                seeds[i].1,
                started.elapsed()
            );
            model
        });
        let mut trained = Vec::new();
        for ((run, _), model) in seeds.iter().zip(models) {
            let model = model?;
            model.save(&self.biased_model_path(*run))?;
            trained.push(model);
        }
        for run in self.config.run_ids() {
            let model = if self.config.fixed_biased_model {
                &trained[0]
            } else {
                &trained[run as usize]
            };
            let preds = predict(model, &test.ids, test.x.view(), LABEL_THRESHOLD)?;
            PredictionsFile::new(BIASED, run, &self.hash, &preds, &test.s, &test.y)?
                .save(&self.predictions_path(BIASED, run))?;
        }
        Ok(())
    }

    fn mitigate_cell(
        &self,
        method: Method,
        run: u32,
        train: &DataSplit,
        test: &DataSplit,
    ) -> Result<PredictionSet> {
        let seed = self.config.run_seed(run);
        let models = self.out().join("models");
        let tag = format!("{}_run{run}", method.as_str());
        let fair_model = |model: TrainedModel| -> Result<PredictionSet> {
            model.save(&models.join(format!("{tag}.model")))?;
            predict(&model, &test.ids, test.x.view(), LABEL_THRESHOLD)
        };
        match method {
            Method::Lfr => {
                let cfg = LfrConfig {
                    seed,
                    ..self.config.lfr.clone()
                };
                let (_, model) = fit_lfr(train, &cfg)?;
                let preds = fair_model(model)?;
                // The LFR decision threshold may differ from the base one.
                PredictionSet::from_scores(preds.ids, preds.scores, cfg.threshold)
            }
            Method::AdversarialDp | Method::AdversarialEo => {
                let base = if method == Method::AdversarialDp {
                    &self.config.adversarial_dp
                } else {
                    &self.config.adversarial_eo
                };
                let mut cfg = base.clone();
                cfg.classifier.seed = seed;
                cfg.adversary_seed = seed;
                fair_model(train_adversarial(train, &cfg)?)
            }
            Method::Roc => {
                let biased = self.biased_predictions(run)?;
                let theta = if self.config.roc.search {
                    let found = roc_search(
                        &biased.scores,
                        &test.s,
                        self.config.roc.objective_target,
                        self.config.roc.search_grid,
                    )?;
                    write_file(
                        &models.join(format!("{tag}.json")),
                        to_json(&found, "roc search")?.as_bytes(),
                    )?;
                    found.theta
                } else {
                    self.config.roc.theta
                };
                roc_flip(&test.ids, &biased.scores, &test.s, theta)
            }
            Method::ThresholdOpt => {
                let biased = self.biased_predictions(run)?;
                let fit = match self.config.threshold_opt.fit_split {
                    FitSplit::Test => fit_group_thresholds(&biased.scores, &test.y, &test.s, seed)?,
                    FitSplit::Train => {
                        let model = TrainedModel::load(&self.biased_model_path(run))?;
                        let scores = model.classifier().scores(train.x.view())?;
                        fit_group_thresholds(
                            scores.as_slice().unwrap_or(&scores.to_vec()),
                            &train.y,
                            &train.s,
                            seed,
                        )?
                    }
                };
                write_file(
                    &models.join(format!("{tag}.json")),
                    to_json(&fit, "threshold fit")?.as_bytes(),
                )?;
                apply_group_thresholds(&test.ids, &biased.scores, &test.s, &fit.thresholds)
            }
        }
    }

    fn biased_predictions(&self, run: u32) -> Result<PredictionsFile> {
        PredictionsFile::load_checked(&self.predictions_path(BIASED, run), &self.hash)
    }

    /// Derive every (method, run) fair model. A failing cell records its
    /// error under `status/` and the others continue.
    pub fn mitigate(&self) -> Result<MitigationSummary> {
        let (train, test) = self.load_splits()?;
        // Fail early, naming the file, when the training stage has not run.
        for run in self.config.run_ids() {
            if self
                .config
                .methods
                .iter()
                .any(|m| matches!(m, Method::Roc | Method::ThresholdOpt))
            {
                self.biased_predictions(run)?;
            }
        }
        let cells: Vec<(Method, u32)> = self
            .config
            .methods
            .iter()
            .flat_map(|&m| self.config.run_ids().map(move |r| (m, r)))
            .collect();
        let outcomes = self.parallel(cells.len(), |i| {
            let (method, run) = cells[i];
            let started = Instant::now();
            let result = self.mitigate_cell(method, run, &train, &test);
            log::info!(
                "{} run {run}: {} in {:.1?}",
                method.as_str(),
                if result.is_ok() { "done" } else { "failed" },
                started.elapsed()
            );
            result
        });
        let mut summary = MitigationSummary::default();
        for ((method, run), outcome) in cells.into_iter().zip(outcomes) {
            let name = method.as_str();
            let status = self.status_path(name, run);
            let preds_path = self.predictions_path(name, run);
            match outcome {
                Ok(preds) => {
                    PredictionsFile::new(name, run, &self.hash, &preds, &test.s, &test.y)?
                        .save(&preds_path)?;
                    if status.exists() {
                        std::fs::remove_file(&status).map_err(|e| Error::io(&status, e))?;
                    }
                    summary.succeeded += 1;
                }
                Err(e) => {
                    log::warn!("{name} run {run} failed: {e}");
                    if preds_path.exists() {
                        std::fs::remove_file(&preds_path).map_err(|e| Error::io(&preds_path, e))?;
                    }
                    write_file(&status, format!("{e}\n").as_bytes())?;
                    summary.failed.push((name.to_string(), run, e.to_string()));
                }
            }
        }
        Ok(summary)
    }

    /// Fair predictions of one cell, or the recorded reason it is missing.
    /// Config mismatches and corrupt files are hard errors.
    fn fair_predictions(
        &self,
        method: &str,
        run: u32,
    ) -> Result<std::result::Result<PredictionsFile, String>> {
        let path = self.predictions_path(method, run);
        match PredictionsFile::load_checked(&path, &self.hash) {
            Ok(f) => Ok(Ok(f)),
            Err(Error::MissingArtifact(_)) => {
                let status = self.status_path(method, run);
                let reason = if status.exists() {
                    read_text(&status)?.trim().to_string()
                } else {
                    format!("{} not found", path.display())
                };
                Ok(Err(reason))
            }
            Err(e) => Err(e),
        }
    }

    fn delta(
        &self,
        method: &str,
        run: u32,
        f: &PredictionsFile,
        g: &PredictionsFile,
    ) -> Result<DeltaSet> {
        if f.ids != g.ids || f.s != g.s || f.y != g.y {
            return Err(Error::IdMismatch {
                left: self.predictions_path(BIASED, run).display().to_string(),
                right: self.predictions_path(method, run).display().to_string(),
            });
        }
        Ok(
            audit::compute_delta(&f.predictions(), &g.predictions(), &f.s)?
                .with_origin(method, run),
        )
    }

    /// All Δ-sets of the study, keyed by (method, run); `Err(reason)` marks
    /// a missing cell.
    fn deltas(&self) -> Result<(Vec<PredictionsFile>, CellDeltas)> {
        let mut biased = Vec::new();
        for run in self.config.run_ids() {
            biased.push(self.biased_predictions(run)?);
        }
        let mut cells = BTreeMap::new();
        for method in &self.config.methods {
            let name = method.as_str();
            for run in self.config.run_ids() {
                let cell = match self.fair_predictions(name, run)? {
                    Ok(g) => {
                        let d = self.delta(name, run, &biased[run as usize], &g)?;
                        Ok((g, d))
                    }
                    Err(reason) => Err(reason),
                };
                cells.insert((name.to_string(), run), cell);
            }
        }
        Ok((biased, cells))
    }

    /// Compare every fair prediction file with the biased one of its run.
    pub fn audit(&self) -> Result<AuditReport> {
        let (biased, cells) = self.deltas()?;
        let runs = self.config.runs;

        let mut biased_runs = Vec::new();
        let mut biased_scores = Vec::new();
        for f in &biased {
            let p = f.predictions();
            let fairness = metrics::fairness_scores(&p, &f.y, &f.s)?;
            biased_scores.push(fairness);
            biased_runs.push(BiasedRun {
                run: f.run,
                fairness,
                rates: audit::group_outcome_rates(&p, &f.s, Some(&f.y))?,
            });
        }

        let mut methods = Vec::new();
        for method in &self.config.methods {
            let name = method.as_str();
            let mut run_cells = Vec::new();
            let mut scores: Vec<FairnessScores> = Vec::new();
            let mut impacts = Vec::new();
            let mut deltas = Vec::new();
            for run in self.config.run_ids() {
                match &cells[&(name.to_string(), run)] {
                    Ok((g, delta)) => {
                        let f = &biased[run as usize];
                        let (cell, _) =
                            audit::audit_cell(&f.predictions(), &g.predictions(), &g.y, &g.s)?;
                        scores.push(cell.fairness);
                        impacts.push(cell.impact_fraction);
                        deltas.push(delta);
                        run_cells.push(RunCell {
                            run,
                            missing: None,
                            audit: Some(cell),
                        });
                    }
                    Err(reason) => run_cells.push(RunCell {
                        run,
                        missing: Some(reason.clone()),
                        audit: None,
                    }),
                }
            }
            let stability = if deltas.len() >= 2 {
                Some(audit::stability(&deltas)?)
            } else {
                None
            };
            methods.push(MethodAudit {
                method: name.to_string(),
                runs: run_cells,
                summary: MethodSummary::from_scores(&scores, Some(&impacts)),
                stability,
            });
        }

        let mut groups: Vec<(String, Vec<Method>)> = Vec::new();
        let dp: Vec<Method> = self
            .config
            .methods
            .iter()
            .copied()
            .filter(|m| m.targets_parity())
            .collect();
        let eo: Vec<Method> = self
            .config
            .methods
            .iter()
            .copied()
            .filter(|m| !m.targets_parity())
            .collect();
        for (name, set) in [("all", self.config.methods.clone()), ("dp", dp), ("eo", eo)] {
            if set.len() >= 2 {
                groups.push((name.to_string(), set));
            }
        }
        for (i, &a) in self.config.methods.iter().enumerate() {
            for &b in &self.config.methods[i + 1..] {
                groups.push((format!("{}|{}", a.as_str(), b.as_str()), vec![a, b]));
            }
        }
        let mut iou = Vec::new();
        for (name, set) in groups {
            let mut per_run = Vec::with_capacity(runs);
            for run in self.config.run_ids() {
                let members: Option<Vec<&DeltaSet>> = set
                    .iter()
                    .map(|m| {
                        cells[&(m.as_str().to_string(), run)]
                            .as_ref()
                            .ok()
                            .map(|(_, d)| d)
                    })
                    .collect();
                per_run.push(match members {
                    Some(ds) => Some(audit::iou(&ds)?),
                    None => None,
                });
            }
            let values: Vec<f64> = per_run.iter().flatten().map(|i| i.value).collect();
            iou.push(IouSeries {
                name,
                methods: set.iter().map(|m| m.as_str().to_string()).collect(),
                per_run,
                mean: Stat::of(&values).map(|s| s.mean),
            });
        }

        let report = AuditReport {
            schema_version: report::SCHEMA_VERSION,
            dataset: self.manifest.name.clone(),
            config_hash: self.hash.clone(),
            base_seed: self.config.base_seed,
            runs,
            fixed_biased_model: self.config.fixed_biased_model,
            methods: self
                .config
                .methods
                .iter()
                .map(|m| m.as_str().to_string())
                .collect(),
            biased: BiasedAudit {
                runs: biased_runs,
                summary: MethodSummary::from_scores(&biased_scores, None),
            },
            cells: methods,
            iou,
            plsda: Vec::new(),
        };
        write_file(&self.audit_path(), report.to_json()?.as_bytes())?;
        Ok(report)
    }

    /// Contrast the instances changed only by one method with those changed
    /// only by another, for the configured pairs.
    pub fn plsda(&self) -> Result<Vec<PlsdaSummary>> {
        let (_, test) = self.load_splits()?;
        let (_, cells) = self.deltas()?;
        let cfg = &self.config.plsda;
        let dir = self.out().join("plsda");
        let mut out = Vec::new();
        for &(a, b) in &cfg.pairs {
            for &run in &cfg.runs {
                let mut summary = PlsdaSummary {
                    first: a.as_str().into(),
                    second: b.as_str().into(),
                    run,
                    group: cfg.group,
                    n_first: 0,
                    n_second: 0,
                    skipped: None,
                    auc: None,
                    components: 0,
                    rank_deficient: false,
                    top_features: Vec::new(),
                };
                let lookup = |m: Method| cells.get(&(m.as_str().to_string(), run));
                let (da, db) = match (lookup(a), lookup(b)) {
                    (Some(Ok((_, da))), Some(Ok((_, db)))) => (da, db),
                    (None, _) | (_, None) => {
                        summary.skipped = Some("method or run not in this study".into());
                        out.push(summary);
                        continue;
                    }
                    _ => {
                        summary.skipped = Some("a compared cell is missing".into());
                        out.push(summary);
                        continue;
                    }
                };
                match self.plsda_pair(&test, da, db, &mut summary, &dir) {
                    Ok(()) => {}
                    Err(
                        e @ (Error::Empty(_)
                        | Error::DegenerateGroup(_)
                        | Error::InvalidArgument(_)),
                    ) => {
                        summary.skipped = Some(e.to_string());
                    }
                    Err(e) => return Err(e),
                }
                out.push(summary);
            }
        }
        write_file(
            &self.plsda_summary_path(),
            to_json(&out, "plsda summary")?.as_bytes(),
        )?;
        Ok(out)
    }

    fn plsda_pair(
        &self,
        test: &DataSplit,
        da: &DeltaSet,
        db: &DeltaSet,
        summary: &mut PlsdaSummary,
        dir: &Path,
    ) -> Result<()> {
        let cfg = &self.config.plsda;
        let ia = da.ids();
        let ib = db.ids();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, id) in test.ids.iter().enumerate() {
            if matches!(cfg.group, Some(g) if test.s[i] != g) {
                continue;
            }
            match (ia.contains(id), ib.contains(id)) {
                (true, false) => {
                    rows.push(i);
                    labels.push(1u8);
                }
                (false, true) => {
                    rows.push(i);
                    labels.push(0u8);
                }
                _ => {}
            }
        }
        summary.n_first = labels.iter().filter(|&&l| l == 1).count();
        summary.n_second = labels.len() - summary.n_first;
        if summary.n_first == 0 || summary.n_second == 0 {
            return Err(Error::Empty(
                "one side of the comparison has no exclusive changes".into(),
            ));
        }
        if labels.len() <= cfg.components {
            return Err(Error::InvalidArgument(format!(
                "{} instances are too few for {} components",
                labels.len(),
                cfg.components
            )));
        }
        let sub = test.select(&rows);
        let model = plsda::fit_plsda(sub.x.view(), &labels, cfg.components)?;
        summary.components = model.components();
        summary.rank_deficient = model.rank_deficient;
        summary.auc = Some(plsda::discriminant_auc(&model, sub.x.view(), &labels)?);

        let scores = plsda::project(&model, sub.x.view())?;
        let corr = plsda::feature_correlations(&model, sub.x.view())?;
        let stem = format!(
            "{}_vs_{}_run{}_{}",
            summary.first,
            summary.second,
            summary.run,
            cfg.group.map_or("all".to_string(), |g| format!("s{g}"))
        );
        let comp_cols: Vec<String> = (1..=model.components()).map(|k| format!("c{k}")).collect();

        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::parse("plsda table", e);
        let mut header = vec!["id".to_string(), "class".to_string()];
        header.extend(comp_cols.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (r, &label) in labels.iter().enumerate() {
            let mut rec = vec![
                sub.ids[r].to_string(),
                if label == 1 {
                    summary.first.clone()
                } else {
                    summary.second.clone()
                },
            ];
            rec.extend(scores.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::parse("plsda table", e.to_string()))?;
        write_file(&dir.join(format!("{stem}_projection.csv")), &bytes)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["feature".to_string()];
        header.extend(comp_cols);
        w.write_record(&header).map_err(csv_err)?;
        for (j, name) in sub.feature_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(corr.row(j).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::parse("plsda table", e.to_string()))?;
        write_file(&dir.join(format!("{stem}_correlations.csv")), &bytes)?;

        let mut order: Vec<usize> = (0..corr.nrows()).collect();
        order.sort_by(|&i, &j| {
            corr[[j, 0]]
                .abs()
                .total_cmp(&corr[[i, 0]].abs())
                .then(i.cmp(&j))
        });
        summary.top_features = order
            .into_iter()
            .take(cfg.top_features)
            .map(|j| {
                let second = if corr.ncols() > 1 { corr[[j, 1]] } else { 0.0 };
                (sub.feature_names[j].clone(), corr[[j, 0]], second)
            })
            .collect();
        Ok(())
    }

    /// Merge the audit with the PLS-DA summary (when present) and render.
    pub fn report(&self, format: ReportFormat) -> Result<(AuditReport, Rendered)> {
        let mut report = AuditReport::from_json(&read_text(&self.audit_path())?)?;
        if report.config_hash != self.hash {
            return Err(Error::ConfigHashMismatch {
                path: self.audit_path(),
                found: report.config_hash,
                expected: self.hash.clone(),
            });
        }
        let plsda_path = self.plsda_summary_path();
        if plsda_path.exists() {
            report.plsda = from_json(&plsda_path)?;
        }
        let rendered = render_report(&report, format, &self.report_dir())?;
        Ok((report, rendered))
    }

    pub fn run_all(&self) -> Result<(AuditReport, Rendered)> {
        let started = Instant::now();
        self.prepare_data()?;
        self.train()?;
        let summary = self.mitigate()?;
        if !summary.failed.is_empty() {
            log::warn!(
                "{} cells failed; they are reported as missing",
                summary.failed.len()
            );
        }
        self.audit()?;
        self.plsda()?;
        let out = self.report(ReportFormat::Both)?;
        log::info!("study finished in {:.1?}", started.elapsed());
        Ok(out)
    }
}

/// Run the whole study described by `config`.
pub fn run_experiment(config: ExperimentConfig) -> Result<(Experiment, AuditReport, Rendered)> {
    let exp = Experiment::new(config)?;
    let (report, rendered) = exp.run_all()?;
    Ok((exp, report, rendered))
}
