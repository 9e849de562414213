//! Post-processing on frozen scores: reject option classification for
//! demographic parity and per-group (randomized) thresholds for equalized
//! odds.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{p_rule_from_rates, positive_rates};
use crate::predictions::PredictionSet;
use crate::rng;

const BASE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RocConfig {
    /// Confidence threshold used when `search` is off.
    pub theta: f64,
    /// Minimum p%-rule the search tries to reach.
    pub objective_target: f64,
    /// Step of the theta grid over [0.5, 1].
    pub search_grid: f64,
    /// Pick theta with [`roc_search`] instead of using `theta` as given.
    pub search: bool,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            theta: 0.86,
            objective_target: 0.9,
            search_grid: 0.005,
            search: true,
        }
    }
}

impl RocConfig {
    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        if !(self.search_grid > 0.0 && self.search_grid <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "search grid step {} outside (0, 0.5]",
                self.search_grid
            )));
        }
        if !(0.0..=1.0).contains(&self.objective_target) {
            return Err(Error::InvalidArgument(format!(
                "objective target {} outside [0, 1]",
                self.objective_target
            )));
        }
        Ok(())
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.5..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta {theta} outside [0.5, 1]"
        )));
    }
    Ok(())
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        Some(p) => Err(Error::InvalidArgument(format!("score {p} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn check_groups(s: &[u8]) -> Result<()> {
    if let Some(v) = s.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!(
            "group value {v} is not 0 or 1"
        )));
    }
    for g in 0..2u8 {
        if !s.contains(&g) {
            return Err(Error::DegenerateGroup(g));
        }
    }
    Ok(())
}

fn roc_labels(scores: &[f64], s: &[u8], theta: f64) -> Vec<u8> {
    scores
        .iter()
        .zip(s)
        .map(|(&p, &g)| {
            let confidence = p.max(1.0 - p);
            if confidence < theta {
                // Critical region: favor the disadvantaged group.
                u8::from(g == 0)
            } else {
                u8::from(p > BASE_THRESHOLD)
            }
        })
        .collect()
}

/// Reject option classification. Instances whose confidence
/// `max(p, 1 - p)` is below `theta` get the favorable label if they belong to
/// the disadvantaged group and the unfavorable one otherwise; all others keep
/// the 0.5-threshold label. Scores are passed through unchanged.
pub fn roc_flip(ids: &[u64], scores: &[f64], s: &[u8], theta: f64) -> Result<PredictionSet> {
    check_theta(theta)?;
    check_scores(scores)?;
    for len in [scores.len(), s.len()] {
        if len != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: len,
            });
        }
    }
    if let Some(v) = s.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!(
            "group value {v} is not 0 or 1"
        )));
    }
    Ok(PredictionSet {
        ids: ids.to_vec(),
        scores: scores.to_vec(),
        labels: roc_labels(scores, s, theta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocSearch {
    pub theta: f64,
    pub p_rule: f64,
    /// False when no grid point reaches the target; `theta` is then the
    /// p%-rule maximizer.
    pub reached: bool,
}

/// The theta grid `0.5, 0.5 + step, ...` up to and including 1.
pub fn theta_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "grid step {step} outside (0, 0.5]"
        )));
    }
    let n = (0.5 / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|j| 0.5 + j as f64 * step).collect();
    if *grid.last().unwrap() < 1.0 - 1e-12 {
        grid.push(1.0);
    }
    if let Some(last) = grid.last_mut() {
        *last = last.min(1.0);
    }
    Ok(grid)
}

/// Smallest grid theta whose ROC labels reach `p_rule >= target`.
pub fn roc_search(scores: &[f64], s: &[u8], target: f64, step: f64) -> Result<RocSearch> {
    check_scores(scores)?;
    check_groups(s)?;
    let mut best: Option<RocSearch> = None;
    for theta in theta_grid(step)? {
        let (r0, r1) = positive_rates(&roc_labels(scores, s, theta), s)?;
        let p = p_rule_from_rates(r0, r1);
        if p >= target {
            return Ok(RocSearch {
                theta,
                p_rule: p,
                reached: true,
            });
        }
        if best.is_none_or(|b| p > b.p_rule) {
            best = Some(RocSearch {
                theta,
                p_rule: p,
                reached: false,
            });
        }
    }
    let best = best.expect("grid is never empty");
    log::warn!(
        "ROC search: target p%-rule {target} unreachable, best {:.4} at theta {}",
        best.p_rule,
        best.theta
    );
    Ok(best)
}

/// Decision rule for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupRule {
    Single {
        threshold: f64,
    },
    /// Uses `high` with probability `p_high` and `low` otherwise.
    Mixed {
        low: f64,
        high: f64,
        p_high: f64,
    },
}

impl GroupRule {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            GroupRule::Single { threshold } => (0.0..=1.0).contains(&threshold),
            GroupRule::Mixed { low, high, p_high } => {
                (0.0..=1.0).contains(&low)
                    && (0.0..=1.0).contains(&high)
                    && (0.0..=1.0).contains(&p_high)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid group rule {self:?}"
            )))
        }
    }

    /// Probability that a score receives the favorable label.
    pub fn positive_probability(&self, score: f64) -> f64 {
        match *self {
            GroupRule::Single { threshold } => f64::from(u8::from(score > threshold)),
            GroupRule::Mixed { low, high, p_high } => {
                (1.0 - p_high) * f64::from(u8::from(score > low))
                    + p_high * f64::from(u8::from(score > high))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    /// Rules for s = 0 and s = 1.
    pub groups: [GroupRule; 2],
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub thresholds: GroupThresholds,
    /// Shared (FPR, TPR) the rules aim at.
    pub operating_point: (f64, f64),
    /// Accuracy of the operating point on the fitting data.
    pub expected_accuracy: f64,
    /// Largest gap between a group's expected rates and the operating point.
    pub realization_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RocPoint {
    fpr: f64,
    tpr: f64,
    threshold: f64,
}

/// Operating points of `score > t` for every distinct threshold, from
/// all-negative to all-positive.
fn roc_points(scores: &[f64], y: &[u8]) -> Vec<RocPoint> {
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let npos = pairs.iter().filter(|p| p.1 == 1).count() as f64;
    let nneg = pairs.len() as f64 - npos;
    let mut points = Vec::with_capacity(pairs.len() + 1);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        // Threshold at this score: everything strictly above is positive.
        points.push(RocPoint {
            fpr: fp as f64 / nneg,
            tpr: tp as f64 / npos,
            threshold: pairs[i].0,
        });
        let score = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == score {
            if pairs[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: 0.0,
    });
    points
}

fn cross(o: &RocPoint, a: &RocPoint, b: &RocPoint) -> f64 {
    (a.fpr - o.fpr) * (b.tpr - o.tpr) - (a.tpr - o.tpr) * (b.fpr - o.fpr)
}

/// Upper convex hull, ordered by increasing FPR.
fn upper_hull(points: &[RocPoint]) -> Vec<RocPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(b.tpr.total_cmp(&a.tpr)));
    sorted.dedup_by(|b, a| a.fpr == b.fpr);
    let mut hull: Vec<RocPoint> = Vec::with_capacity(sorted.len());
    for p in sorted {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], &p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Index `i` with `hull[i].fpr <= x <= hull[i + 1].fpr` (or the last vertex).
fn hull_segment(hull: &[RocPoint], x: f64) -> usize {
    let i = hull.partition_point(|p| p.fpr <= x);
    i.saturating_sub(1).min(hull.len().saturating_sub(2))
}

fn hull_value(hull: &[RocPoint], x: f64) -> f64 {
    if hull.len() == 1 {
        return hull[0].tpr;
    }
    let i = hull_segment(hull, x);
    let (a, b) = (&hull[i], &hull[i + 1]);
    if b.fpr == a.fpr {
        return a.tpr.max(b.tpr);
    }
    let w = ((x - a.fpr) / (b.fpr - a.fpr)).clamp(0.0, 1.0);
    a.tpr + w * (b.tpr - a.tpr)
}

/// Mixture of a higher-threshold point `a` (smaller FPR) and a
/// lower-threshold point `b` hitting FPR `x` exactly.
fn mix(a: &RocPoint, b: &RocPoint, x: f64) -> (GroupRule, f64) {
    if b.fpr <= a.fpr || x <= a.fpr {
        return (
            GroupRule::Single {
                threshold: a.threshold,
            },
            a.tpr,
        );
    }
    if x >= b.fpr {
        return (
            GroupRule::Single {
                threshold: b.threshold,
            },
            b.tpr,
        );
    }
    let p_high = (b.fpr - x) / (b.fpr - a.fpr);
    let tpr = p_high * a.tpr + (1.0 - p_high) * b.tpr;
    (
        GroupRule::Mixed {
            low: b.threshold,
            high: a.threshold,
            p_high,
        },
        tpr,
    )
}

/// Two-threshold rule for one group whose (FPR, TPR) lands as close as
/// possible to `(x, y)`; FPR is matched exactly and the returned value is
/// the TPR error.
fn realize(points: &[RocPoint], hull: &[RocPoint], x: f64, y: f64) -> (GroupRule, f64) {
    if hull.len() >= 2 {
        let i = hull_segment(hull, x);
        let (rule, tpr) = mix(&hull[i], &hull[i + 1], x);
        if (tpr - y).abs() <= 1e-12 {
            return (rule, 0.0);
        }
    }

    let mut best: Option<(GroupRule, f64)> = None;
    let mut consider = |rule: GroupRule, tpr: f64| {
        let err = (tpr - y).abs();
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((rule, err));
        }
    };

    // Points sitting exactly on the FPR: a single threshold, or a mixture of
    // two of them bracketing the target.
    let on_x: Vec<&RocPoint> = points.iter().filter(|p| p.fpr == x).collect();
    for p in &on_x {
        consider(
            GroupRule::Single {
                threshold: p.threshold,
            },
            p.tpr,
        );
    }
    if let (Some(lo), Some(hi)) = (
        on_x.iter().min_by(|a, b| a.tpr.total_cmp(&b.tpr)),
        on_x.iter().max_by(|a, b| a.tpr.total_cmp(&b.tpr)),
    ) {
        if lo.tpr <= y && y <= hi.tpr && hi.tpr > lo.tpr {
            // `hi` has the lower threshold (more positives).
            let p_high = (hi.tpr - y) / (hi.tpr - lo.tpr);
            consider(
                GroupRule::Mixed {
                    low: hi.threshold,
                    high: lo.threshold,
                    p_high,
                },
                y,
            );
        }
    }

    // Chords from a left point through the target: the right endpoint
    // nearest in angle to the chord's continuation.
    let left: Vec<&RocPoint> = points.iter().filter(|p| p.fpr < x).collect();
    let mut right: Vec<(f64, &RocPoint)> = points
        .iter()
        .filter(|p| p.fpr > x)
        .map(|p| ((p.tpr - y).atan2(p.fpr - x), p))
        .collect();
    right.sort_by(|a, b| a.0.total_cmp(&b.0));
    if !right.is_empty() {
        for l in left {
            let angle = (y - l.tpr).atan2(x - l.fpr);
            let k = right.partition_point(|r| r.0 < angle);
            for j in [k.wrapping_sub(1), k] {
                if let Some((_, r)) = right.get(j) {
                    // The left point has the larger threshold.
                    let (rule, tpr) = mix(l, r, x);
                    consider(rule, tpr);
                }
            }
        }
    }
    best.expect("every group has at least the two constant classifiers")
}

/// Per-group thresholds equalizing TPR and FPR across groups at the most
/// accurate feasible operating point.
///
/// The feasible set of each group is the convex hull of its ROC curve; the
/// best shared point lies on the lower envelope of the two upper hulls,
/// at one of their vertices or crossings. The group whose hull attains the
/// point uses an exact mixture of two adjacent hull thresholds; the other
/// group uses the closest two-threshold chord, reported as
/// `realization_error`.
pub fn fit_group_thresholds(
    scores: &[f64],
    y: &[u8],
    s: &[u8],
    rng_seed: u64,
) -> Result<ThresholdFit> {
    for len in [y.len(), s.len()] {
        if len != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                got: len,
            });
        }
    }
    check_scores(scores)?;
    check_groups(s)?;
    let mut counts = [[0usize; 2]; 2];
    for (&g, &label) in s.iter().zip(y) {
        if label > 1 {
            return Err(Error::InvalidArgument(format!(
                "label {label} is not 0 or 1"
            )));
        }
        counts[g as usize][label as usize] += 1;
    }
    for g in 0..2u8 {
        for label in 0..2u8 {
            if counts[g as usize][label as usize] == 0 {
                return Err(Error::DegenerateCell { s: g, y: label });
            }
        }
    }

    let mut points = Vec::with_capacity(2);
    let mut hulls = Vec::with_capacity(2);
    for g in 0..2u8 {
        let (gs, gy): (Vec<f64>, Vec<u8>) = scores
            .iter()
            .zip(y)
            .zip(s)
            .filter(|(_, &sg)| sg == g)
            .map(|((&p, &l), _)| (p, l))
            .unzip();
        let pts = roc_points(&gs, &gy);
        hulls.push(upper_hull(&pts));
        points.push(pts);
    }

    let n = scores.len() as f64;
    let npos = (counts[0][1] + counts[1][1]) as f64;
    let nneg = n - npos;
    let envelope = |x: f64| hull_value(&hulls[0], x).min(hull_value(&hulls[1], x));
    let objective = |x: f64| (npos * envelope(x) + nneg * (1.0 - x)) / n;

    let mut candidates: Vec<f64> = hulls.iter().flatten().map(|p| p.fpr).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut crossings = Vec::new();
    for w in candidates.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = hull_value(&hulls[0], a) - hull_value(&hulls[1], a);
        let db = hull_value(&hulls[0], b) - hull_value(&hulls[1], b);
        if da * db < 0.0 {
            crossings.push(a + (b - a) * da / (da - db));
        }
    }
    candidates.extend(crossings);
    candidates.sort_by(f64::total_cmp);

    let mut x_best = candidates[0];
    let mut acc_best = objective(x_best);
    for &x in &candidates[1..] {
        let acc = objective(x);
        if acc > acc_best + 1e-15 {
            x_best = x;
            acc_best = acc;
        }
    }
    let y_best = envelope(x_best);

    let (rule0, err0) = realize(&points[0], &hulls[0], x_best, y_best);
    let (rule1, err1) = realize(&points[1], &hulls[1], x_best, y_best);
    let thresholds = GroupThresholds {
        groups: [rule0, rule1],
        rng_seed,
    };
    Ok(ThresholdFit {
        thresholds,
        operating_point: (x_best, y_best),
        expected_accuracy: acc_best,
        realization_error: err0.max(err1),
    })
}

/// Apply per-group rules. Mixed rules draw one uniform per instance from the
/// seeded stream, so results are reproducible.
pub fn apply_group_thresholds(
    ids: &[u64],
    scores: &[f64],
    s: &[u8],
    thresholds: &GroupThresholds,
) -> Result<PredictionSet> {
    for len in [scores.len(), s.len()] {
        if len != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: len,
            });
        }
    }
    for rule in &thresholds.groups {
        rule.validate()?;
    }
    let mut r = rng::stream(thresholds.rng_seed, "group-thresholds");
    let mut labels = Vec::with_capacity(scores.len());
    for (&p, &g) in scores.iter().zip(s) {
        let rule = thresholds
            .groups
            .get(g as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("group value {g} is not 0 or 1")))?;
        let u: f64 = r.gen();
        let label = match *rule {
            GroupRule::Single { threshold } => p > threshold,
            GroupRule::Mixed { low, high, p_high } => {
                if u < p_high {
                    p > high
                } else {
                    p > low
                }
            }
        };
        labels.push(u8::from(label));
    }
    Ok(PredictionSet {
        ids: ids.to_vec(),
        scores: scores.to_vec(),
        labels,
    })
}

/// Expected (TPR, FPR) of each group under `thresholds`, without sampling.
pub fn expected_group_rates(
    scores: &[f64],
    y: &[u8],
    s: &[u8],
    thresholds: &GroupThresholds,
) -> Result<[(f64, f64); 2]> {
    let mut hits = [[0.0f64; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for ((&p, &label), &g) in scores.iter().zip(y).zip(s) {
        let g = g as usize;
        let rule = thresholds
            .groups
            .get(g)
            .ok_or_else(|| Error::InvalidArgument(format!("group value {g} is not 0 or 1")))?;
        hits[g][label as usize] += rule.positive_probability(p);
        counts[g][label as usize] += 1;
    }
    let mut out = [(0.0, 0.0); 2];
    for g in 0..2 {
        for label in 0..2 {
            if counts[g][label] == 0 {
                return Err(Error::DegenerateCell {
                    s: g as u8,
                    y: label as u8,
                });
            }
        }
        out[g] = (
            hits[g][1] / counts[g][1] as f64,
            hits[g][0] / counts[g][0] as f64,
        );
    }
    Ok(out)
}
