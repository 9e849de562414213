//! Audit report document and its flat-table rendering.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{
    round2, CellAudit, Direction, DirectionTable, GroupRates, Iou, StabilitySummary,
};
use crate::error::{Error, Result};
use crate::metrics::FairnessScores;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub dataset: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub runs: usize,
    pub fixed_biased_model: bool,
    pub methods: Vec<String>,
    pub biased: BiasedAudit,
    pub cells: Vec<MethodAudit>,
    pub iou: Vec<IouSeries>,
    #[serde(default)]
    pub plsda: Vec<PlsdaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedAudit {
    pub runs: Vec<BiasedRun>,
    pub summary: MethodSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedRun {
    pub run: u32,
    pub fairness: FairnessScores,
    pub rates: GroupRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAudit {
    pub method: String,
    pub runs: Vec<RunCell>,
    pub summary: MethodSummary,
    /// Absent when fewer than two runs succeeded.
    pub stability: Option<StabilitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCell {
    pub run: u32,
    /// Why the cell has no audit; `None` when it succeeded.
    pub missing: Option<String>,
    pub audit: Option<CellAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub runs_ok: usize,
    pub accuracy: Option<Stat>,
    pub p_rule: Option<Stat>,
    pub d_tpr: Option<Stat>,
    pub d_fpr: Option<Stat>,
    /// |Δ| / n in percent; absent for the biased model.
    pub impact_pct: Option<Stat>,
}

impl MethodSummary {
    pub fn from_scores(scores: &[FairnessScores], impacts: Option<&[f64]>) -> Self {
        let pick =
            |f: fn(&FairnessScores) -> f64| Stat::of(&scores.iter().map(f).collect::<Vec<_>>());
        MethodSummary {
            runs_ok: scores.len(),
            accuracy: pick(|s| s.accuracy),
            p_rule: pick(|s| s.p_rule),
            d_tpr: pick(|s| s.d_tpr),
            d_fpr: pick(|s| s.d_fpr),
            impact_pct: impacts
                .and_then(|v| Stat::of(&v.iter().map(|x| 100.0 * x).collect::<Vec<_>>())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouSeries {
    /// `dp`, `eo`, or `a|b` for a pair.
    pub name: String,
    pub methods: Vec<String>,
    /// One entry per run; `None` when a member cell is missing.
    pub per_run: Vec<Option<Iou>>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsdaSummary {
    pub first: String,
    pub second: String,
    pub run: u32,
    pub group: Option<u8>,
    /// Instances changed only by `first` / only by `second`.
    pub n_first: usize,
    pub n_second: usize,
    pub skipped: Option<String>,
    pub auc: Option<f64>,
    pub components: usize,
    pub rank_deficient: bool,
    /// Features most correlated with the first component: (name, r1, r2).
    pub top_features: Vec<(String, f64, f64)>,
}

impl AuditReport {
    pub fn method(&self, name: &str) -> Option<&MethodAudit> {
        self.cells.iter().find(|m| m.method == name)
    }

    pub fn iou_series(&self, name: &str) -> Option<&IouSeries> {
        self.iou.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse("audit report", e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: AuditReport =
            serde_json::from_str(text).map_err(|e| Error::parse("audit report", e.to_string()))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                "audit report",
                format!(
                    "schema version {} (expected {SCHEMA_VERSION})",
                    report.schema_version
                ),
            ));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    Tables,
    Both,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "structured" => Some(ReportFormat::Structured),
            "tables" => Some(ReportFormat::Tables),
            "both" => Some(ReportFormat::Both),
            _ => None,
        }
    }
}

/// Files written by [`render_report`].
#[derive(Debug, Clone, Default)]
pub struct Rendered {
    pub files: Vec<PathBuf>,
    /// SHA-256 of the structured document, when written.
    pub report_hash: Option<String>,
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) => format!("{v:.decimals$}"),
        None => "missing".into(),
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", round2(v))
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::parse("table", e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::parse("table", e.to_string()))
}

fn summary_rows(method: &str, s: &MethodSummary, rows: &mut Vec<Vec<String>>) {
    let metrics: [(&str, Option<Stat>, f64); 5] = [
        ("accuracy_pct", s.accuracy, 100.0),
        ("p_rule", s.p_rule, 1.0),
        ("d_tpr", s.d_tpr, 1.0),
        ("d_fpr", s.d_fpr, 1.0),
        ("impact_pct", s.impact_pct, 1.0),
    ];
    for (name, stat, scale) in metrics {
        if name == "impact_pct" && method == "biased" {
            continue;
        }
        rows.push(vec![
            method.to_string(),
            name.to_string(),
            fmt_opt(stat.map(|v| v.mean * scale), 4),
            fmt_opt(stat.map(|v| v.std * scale), 4),
            s.runs_ok.to_string(),
        ]);
    }
}

/// Flat tables, keyed by file name.
pub fn tables(report: &AuditReport) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut out = Vec::new();

    let mut rows = Vec::new();
    if !report.biased.runs.is_empty() {
        summary_rows("biased", &report.biased.summary, &mut rows);
    }
    for m in &report.cells {
        summary_rows(&m.method, &m.summary, &mut rows);
    }
    out.push((
        "performance.csv",
        table(&["method", "metric", "mean", "std", "runs_ok"], rows)?,
    ));

    let mut rows = Vec::new();
    for m in &report.cells {
        for cell in &m.runs {
            let run = cell.run.to_string();
            match (&cell.audit, &cell.missing) {
                (Some(a), _) => match &a.directions {
                    DirectionTable::Empty => rows.push(vec![
                        m.method.clone(),
                        run,
                        "empty".into(),
                        "empty".into(),
                        "0".into(),
                        "empty".into(),
                    ]),
                    DirectionTable::Cells { counts, percent } => {
                        for (d, dname) in [
                            (Direction::Positive, "positive"),
                            (Direction::Negative, "negative"),
                        ] {
                            let di = usize::from(d == Direction::Negative);
                            for g in 0..2 {
                                rows.push(vec![
                                    m.method.clone(),
                                    run.clone(),
                                    dname.into(),
                                    g.to_string(),
                                    counts[di][g].to_string(),
                                    pct(percent[di][g]),
                                ]);
                            }
                        }
                    }
                },
                (None, reason) => rows.push(vec![
                    m.method.clone(),
                    run,
                    "missing".into(),
                    "missing".into(),
                    "missing".into(),
                    reason.clone().unwrap_or_default(),
                ]),
            }
        }
    }
    out.push((
        "directions.csv",
        table(
            &["method", "run", "direction", "group", "count", "percent"],
            rows,
        )?,
    ));

    let mut rows = Vec::new();
    for m in &report.cells {
        rows.push(match &m.stability {
            Some(s) => vec![
                m.method.clone(),
                s.run_count.to_string(),
                pct(s.mean_changed_pct),
                pct(s.always_changed_pct),
            ],
            None => vec![
                m.method.clone(),
                m.summary.runs_ok.to_string(),
                "missing".into(),
                "missing".into(),
            ],
        });
    }
    out.push((
        "stability.csv",
        table(
            &[
                "method",
                "runs_ok",
                "mean_changed_pct",
                "always_changed_pct",
            ],
            rows,
        )?,
    ));

    let mut rows = Vec::new();
    let rate_rows =
        |method: &str, run: u32, rates: Option<&GroupRates>, rows: &mut Vec<Vec<String>>| {
            for g in 0..2 {
                let pick = |pair: Option<(f64, f64)>| pair.map(|p| if g == 0 { p.0 } else { p.1 });
                rows.push(vec![
                    method.to_string(),
                    run.to_string(),
                    g.to_string(),
                    fmt_opt(
                        rates.map(|r| {
                            100.0
                                * if g == 0 {
                                    r.positive_rate.0
                                } else {
                                    r.positive_rate.1
                                }
                        }),
                        2,
                    ),
                    fmt_opt(rates.and_then(|r| pick(r.tpr)).map(|v| 100.0 * v), 2),
                    fmt_opt(rates.and_then(|r| pick(r.fpr)).map(|v| 100.0 * v), 2),
                ]);
            }
        };
    for b in &report.biased.runs {
        rate_rows("biased", b.run, Some(&b.rates), &mut rows);
    }
    for m in &report.cells {
        for cell in &m.runs {
            rate_rows(
                &m.method,
                cell.run,
                cell.audit.as_ref().map(|a| &a.rates),
                &mut rows,
            );
        }
    }
    out.push((
        "group_rates.csv",
        table(
            &[
                "method",
                "run",
                "group",
                "positive_rate_pct",
                "tpr_pct",
                "fpr_pct",
            ],
            rows,
        )?,
    ));

    let mut rows = Vec::new();
    for m in &report.cells {
        for cell in &m.runs {
            rows.push(vec![
                m.method.clone(),
                cell.run.to_string(),
                cell.audit
                    .as_ref()
                    .map(|a| a.changed.to_string())
                    .unwrap_or_else(|| "missing".into()),
                fmt_opt(
                    cell.audit
                        .as_ref()
                        .map(|a| round2(100.0 * a.impact_fraction)),
                    2,
                ),
            ]);
        }
    }
    out.push((
        "impact.csv",
        table(&["method", "run", "changed", "impact_pct"], rows)?,
    ));

    let mut rows = Vec::new();
    for series in &report.iou {
        for (run, v) in series.per_run.iter().enumerate() {
            rows.push(vec![
                series.name.clone(),
                series.methods.join(" "),
                run.to_string(),
                fmt_opt(v.map(|i| i.value), 4),
                v.map(|i| i.degenerate.to_string())
                    .unwrap_or_else(|| "missing".into()),
            ]);
        }
    }
    out.push((
        "iou.csv",
        table(&["set", "methods", "run", "iou", "degenerate"], rows)?,
    ));

    let mut rows = Vec::new();
    for m in &report.cells {
        for cell in &m.runs {
            rows.push(vec![
                m.method.clone(),
                cell.run.to_string(),
                if cell.missing.is_some() {
                    "missing"
                } else {
                    "ok"
                }
                .into(),
                cell.missing.clone().unwrap_or_default(),
            ]);
        }
    }
    out.push((
        "cells.csv",
        table(&["method", "run", "status", "reason"], rows)?,
    ));

    let rows = report
        .plsda
        .iter()
        .map(|p| {
            vec![
                p.first.clone(),
                p.second.clone(),
                p.run.to_string(),
                p.group
                    .map(|g| g.to_string())
                    .unwrap_or_else(|| "all".into()),
                p.n_first.to_string(),
                p.n_second.to_string(),
                fmt_opt(p.auc, 4),
                p.skipped.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.push((
        "plsda.csv",
        table(
            &[
                "first", "second", "run", "group", "n_first", "n_second", "auc", "skipped",
            ],
            rows,
        )?,
    ));
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write the structured document (`report.json` plus `report.sha256`)
/// and/or the flat tables under `dir`.
pub fn render_report(report: &AuditReport, format: ReportFormat, dir: &Path) -> Result<Rendered> {
    let mut rendered = Rendered::default();
    if matches!(format, ReportFormat::Structured | ReportFormat::Both) {
        let json = report.to_json()?;
        let hash = sha256_hex(json.as_bytes());
        let path = dir.join("report.json");
        super::write_file(&path, json.as_bytes())?;
        let hash_path = dir.join("report.sha256");
        super::write_file(&hash_path, format!("{hash}  report.json\n").as_bytes())?;
        rendered.files.push(path);
        rendered.files.push(hash_path);
        rendered.report_hash = Some(hash);
    }
    if matches!(format, ReportFormat::Tables | ReportFormat::Both) {
        let tdir = dir.join("tables");
        for (name, bytes) in tables(report)? {
            let path = tdir.join(name);
            super::write_file(&path, &bytes)?;
            rendered.files.push(path);
        }
    }
    Ok(rendered)
}
