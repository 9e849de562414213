//! Prediction-level audit of a biased model `f` against fair models `g`:
//! which instances changed, in which direction, for which group, and how
//! consistently across methods and runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{self, FairnessScores};
use crate::predictions::PredictionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// 0 -> 1: gained the favorable outcome.
    Positive,
    /// 1 -> 0.
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub id: u64,
    pub s: u8,
    pub direction: Direction,
}

/// Instances whose label differs between `f` and `g`, in split order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSet {
    pub method_id: String,
    pub run_id: u32,
    pub changes: Vec<Change>,
    pub n_total: usize,
    /// Digest of the audited split's id sequence.
    pub split_key: String,
}

impl DeltaSet {
    pub fn with_origin(mut self, method_id: impl Into<String>, run_id: u32) -> Self {
        self.method_id = method_id.into();
        self.run_id = run_id;
        self
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<u64> {
        self.changes.iter().map(|c| c.id).collect()
    }

    pub fn count(&self, direction: Direction, s: u8) -> usize {
        self.changes
            .iter()
            .filter(|c| c.direction == direction && c.s == s)
            .count()
    }
}

/// Stable digest of an id sequence, used to tell audited splits apart.
pub fn split_key(ids: &[u64]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Compare `f` and `g` on the same split; `s` annotates each change.
pub fn compute_delta(f: &PredictionSet, g: &PredictionSet, s: &[u8]) -> Result<DeltaSet> {
    if f.ids != g.ids {
        return Err(Error::IdMismatch {
            left: "biased predictions".into(),
            right: "fair predictions".into(),
        });
    }
    for len in [f.labels.len(), g.labels.len(), s.len()] {
        if len != f.ids.len() {
            return Err(Error::DimensionMismatch {
                expected: f.ids.len(),
                got: len,
            });
        }
    }
    let mut changes = Vec::new();
    for i in 0..f.ids.len() {
        let (a, b) = (f.labels[i], g.labels[i]);
        if a != b {
            changes.push(Change {
                id: f.ids[i],
                s: s[i],
                direction: if b > a {
                    Direction::Positive
                } else {
                    Direction::Negative
                },
            });
        }
    }
    Ok(DeltaSet {
        method_id: String::new(),
        run_id: 0,
        changes,
        n_total: f.ids.len(),
        split_key: split_key(&f.ids),
    })
}

/// |Δ| / n.
pub fn impact_fraction(delta: &DeltaSet) -> Result<f64> {
    if delta.n_total == 0 {
        return Err(Error::Empty("audited split".into()));
    }
    Ok(delta.len() as f64 / delta.n_total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iou {
    pub value: f64,
    /// Every input was empty; the value 1 is vacuous.
    pub degenerate: bool,
}

fn same_split(deltas: &[&DeltaSet]) -> Result<()> {
    let first = deltas[0];
    for d in &deltas[1..] {
        if d.split_key != first.split_key || d.n_total != first.n_total {
            return Err(Error::IdMismatch {
                left: format!("{} run {}", first.method_id, first.run_id),
                right: format!("{} run {}", d.method_id, d.run_id),
            });
        }
    }
    Ok(())
}

fn intersection(deltas: &[&DeltaSet]) -> BTreeSet<u64> {
    let mut acc = deltas[0].ids();
    for d in &deltas[1..] {
        let other = d.ids();
        acc.retain(|id| other.contains(id));
    }
    acc
}

/// Intersection over union of the changed sets.
pub fn iou(deltas: &[&DeltaSet]) -> Result<Iou> {
    if deltas.len() < 2 {
        return Err(Error::InvalidArgument(
            "IOU needs at least two delta sets".into(),
        ));
    }
    same_split(deltas)?;
    let union: BTreeSet<u64> = deltas.iter().flat_map(|d| d.ids()).collect();
    if union.is_empty() {
        return Ok(Iou {
            value: 1.0,
            degenerate: true,
        });
    }
    let inter = intersection(deltas);
    Ok(Iou {
        value: inter.len() as f64 / union.len() as f64,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub method_id: String,
    pub run_count: usize,
    /// Mean of |Δ| / n over runs, in percent.
    pub mean_changed_pct: f64,
    /// Share of the split changed in every run, in percent.
    pub always_changed_pct: f64,
    pub always_changed: Vec<u64>,
}

/// Consistency of one method's Δ-sets across runs.
///
/// Both percentages are a single division of exact integers, so identical
/// runs give bit-identical values.
pub fn stability(deltas: &[&DeltaSet]) -> Result<StabilitySummary> {
    if deltas.len() < 2 {
        return Err(Error::InvalidArgument(
            "stability needs at least two runs".into(),
        ));
    }
    let method = &deltas[0].method_id;
    if let Some(d) = deltas.iter().find(|d| &d.method_id != method) {
        return Err(Error::InvalidArgument(format!(
            "stability over mixed methods `{method}` and `{}`",
            d.method_id
        )));
    }
    same_split(deltas)?;
    let n = deltas[0].n_total;
    if n == 0 {
        return Err(Error::Empty("audited split".into()));
    }
    let runs = deltas.len();
    let total: usize = deltas.iter().map(|d| d.len()).sum();
    let always = intersection(deltas);
    Ok(StabilitySummary {
        method_id: method.clone(),
        run_count: runs,
        mean_changed_pct: (100 * total) as f64 / (n * runs) as f64,
        always_changed_pct: (100 * always.len()) as f64 / n as f64,
        always_changed: always.into_iter().collect(),
    })
}

/// Share of Δ in each (direction, group) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionTable {
    /// Δ was empty; there is nothing to split.
    Empty,
    Cells {
        /// counts[direction][s], direction 0 = positive, 1 = negative.
        counts: [[usize; 2]; 2],
        /// The same cells as percentages of |Δ|.
        percent: [[f64; 2]; 2],
    },
}

impl DirectionTable {
    pub fn percent(&self, direction: Direction, s: u8) -> Option<f64> {
        match self {
            DirectionTable::Empty => None,
            DirectionTable::Cells { percent, .. } => {
                Some(percent[dir_index(direction)][s as usize])
            }
        }
    }
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Positive => 0,
        Direction::Negative => 1,
    }
}

pub fn direction_table(delta: &DeltaSet) -> Result<DirectionTable> {
    if delta.is_empty() {
        return Ok(DirectionTable::Empty);
    }
    let mut counts = [[0usize; 2]; 2];
    for c in &delta.changes {
        if c.s > 1 {
            return Err(Error::InvalidArgument(format!(
                "group value {} is not 0 or 1",
                c.s
            )));
        }
        counts[dir_index(c.direction)][c.s as usize] += 1;
    }
    let total = delta.len();
    let percent = counts.map(|row| row.map(|k| (100 * k) as f64 / total as f64));
    Ok(DirectionTable::Cells { counts, percent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    /// (E[ŷ | s=0], E[ŷ | s=1])
    pub positive_rate: (f64, f64),
    pub tpr: Option<(f64, f64)>,
    pub fpr: Option<(f64, f64)>,
}

pub fn group_outcome_rates(
    preds: &PredictionSet,
    s: &[u8],
    y: Option<&[u8]>,
) -> Result<GroupRates> {
    let positive_rate = metrics::demographic_parity_rates(preds, s)?;
    let (tpr, fpr) = match y {
        Some(y) => {
            let (tpr, fpr) = metrics::error_rates_by_group(&preds.labels, y, s)?;
            (Some(tpr), Some(fpr))
        }
        None => (None, None),
    };
    Ok(GroupRates {
        positive_rate,
        tpr,
        fpr,
    })
}

/// Round to two decimals, as reported tables do.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Audit of one fair model in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAudit {
    pub fairness: FairnessScores,
    pub rates: GroupRates,
    pub changed: usize,
    pub impact_fraction: f64,
    pub directions: DirectionTable,
}

pub fn audit_cell(
    f: &PredictionSet,
    g: &PredictionSet,
    y: &[u8],
    s: &[u8],
) -> Result<(CellAudit, DeltaSet)> {
    let delta = compute_delta(f, g, s)?;
    let cell = CellAudit {
        fairness: metrics::fairness_scores(g, y, s)?,
        rates: group_outcome_rates(g, s, Some(y))?,
        changed: delta.len(),
        impact_fraction: impact_fraction(&delta)?,
        directions: direction_table(&delta)?,
    };
    Ok((cell, delta))
}
