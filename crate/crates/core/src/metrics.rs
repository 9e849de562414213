//! Group fairness and performance metrics on hard labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictions::PredictionSet;

/// Accuracy and group fairness of one prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessScores {
    pub accuracy: f64,
    /// (P[ŷ=1 | s=0], P[ŷ=1 | s=1])
    pub positive_rate_by_group: (f64, f64),
    pub p_rule: f64,
    pub tpr_by_group: (f64, f64),
    pub fpr_by_group: (f64, f64),
    /// TPR(s=1) - TPR(s=0)
    pub d_tpr: f64,
    /// FPR(s=1) - FPR(s=0)
    pub d_fpr: f64,
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Empirical P[ŷ = 1 | s = k] for k = 0, 1.
pub fn demographic_parity_rates(preds: &PredictionSet, s: &[u8]) -> Result<(f64, f64)> {
    positive_rates(&preds.labels, s)
}

pub(crate) fn positive_rates(labels: &[u8], s: &[u8]) -> Result<(f64, f64)> {
    check_len(labels.len(), s.len())?;
    let mut pos = [0usize; 2];
    let mut count = [0usize; 2];
    for (&l, &g) in labels.iter().zip(s) {
        let g = usize::from(g == 1);
        count[g] += 1;
        pos[g] += usize::from(l == 1);
    }
    for (g, &c) in count.iter().enumerate() {
        if c == 0 {
            return Err(Error::DegenerateGroup(g as u8));
        }
    }
    Ok((
        pos[0] as f64 / count[0] as f64,
        pos[1] as f64 / count[1] as f64,
    ))
}

/// Ratio form of the p%-rule for a pair of positive rates.
///
/// Both rates zero counts as no disparity (1); exactly one zero rate is
/// total disparity (0).
pub fn p_rule_from_rates(rate_s0: f64, rate_s1: f64) -> f64 {
    match (rate_s0 == 0.0, rate_s1 == 0.0) {
        (true, true) => {
            log::debug!("p%-rule: both positive rates are zero, reporting 1");
            1.0
        }
        (true, false) | (false, true) => {
            log::debug!("p%-rule: one positive rate is zero, reporting 0");
            0.0
        }
        (false, false) => (rate_s0 / rate_s1).min(rate_s1 / rate_s0),
    }
}

pub fn p_rule(preds: &PredictionSet, s: &[u8]) -> Result<f64> {
    let (r0, r1) = demographic_parity_rates(preds, s)?;
    Ok(p_rule_from_rates(r0, r1))
}

/// ((TPR s=0, TPR s=1), (FPR s=0, FPR s=1)).
pub fn error_rates_by_group(labels: &[u8], y: &[u8], s: &[u8]) -> Result<((f64, f64), (f64, f64))> {
    check_len(labels.len(), y.len())?;
    check_len(labels.len(), s.len())?;
    // [s][y] -> (positives predicted, count)
    let mut cells = [[(0usize, 0usize); 2]; 2];
    for ((&l, &t), &g) in labels.iter().zip(y).zip(s) {
        let cell = &mut cells[usize::from(g == 1)][usize::from(t == 1)];
        cell.1 += 1;
        cell.0 += usize::from(l == 1);
    }
    let rate = |g: usize, t: usize| -> Result<f64> {
        let (p, c) = cells[g][t];
        if c == 0 {
            return Err(Error::DegenerateCell {
                s: g as u8,
                y: t as u8,
            });
        }
        Ok(p as f64 / c as f64)
    };
    Ok(((rate(0, 1)?, rate(1, 1)?), (rate(0, 0)?, rate(1, 0)?)))
}

/// (D_TPR, D_FPR), privileged minus disadvantaged.
pub fn disparate_mistreatment(preds: &PredictionSet, y: &[u8], s: &[u8]) -> Result<(f64, f64)> {
    let ((tpr0, tpr1), (fpr0, fpr1)) = error_rates_by_group(&preds.labels, y, s)?;
    Ok((tpr1 - tpr0, fpr1 - fpr0))
}

pub fn accuracy(preds: &PredictionSet, y: &[u8]) -> Result<f64> {
    accuracy_of(&preds.labels, y)
}

pub(crate) fn accuracy_of(labels: &[u8], y: &[u8]) -> Result<f64> {
    check_len(labels.len(), y.len())?;
    if labels.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    let hits = labels.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn fairness_scores(preds: &PredictionSet, y: &[u8], s: &[u8]) -> Result<FairnessScores> {
    let accuracy = accuracy(preds, y)?;
    let positive_rate_by_group = demographic_parity_rates(preds, s)?;
    let ((tpr0, tpr1), (fpr0, fpr1)) = error_rates_by_group(&preds.labels, y, s)?;
    Ok(FairnessScores {
        accuracy,
        positive_rate_by_group,
        p_rule: p_rule_from_rates(positive_rate_by_group.0, positive_rate_by_group.1),
        tpr_by_group: (tpr0, tpr1),
        fpr_by_group: (fpr0, fpr1),
        d_tpr: tpr1 - tpr0,
        d_fpr: fpr1 - fpr0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn preds(labels: &[u8]) -> PredictionSet {
        PredictionSet {
            ids: (0..labels.len() as u64).collect(),
            scores: labels.iter().map(|&l| f64::from(l)).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn parity_rates_by_counting() {
        let p = preds(&[1, 0, 1, 1]);
        assert_eq!(
            demographic_parity_rates(&p, &[0, 0, 1, 1]).unwrap(),
            (0.5, 1.0)
        );
        assert_eq!(p_rule(&p, &[0, 0, 1, 1]).unwrap(), 0.5);
        let all = preds(&[1, 1, 1, 1]);
        assert_eq!(
            demographic_parity_rates(&all, &[0, 0, 1, 1]).unwrap(),
            (1.0, 1.0)
        );
        assert_eq!(p_rule(&all, &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn zero_rate_conventions() {
        assert_eq!(p_rule_from_rates(0.0, 0.0), 1.0);
        assert_eq!(p_rule_from_rates(0.0, 0.3), 0.0);
        assert_eq!(p_rule_from_rates(0.3, 0.0), 0.0);
        assert_eq!(p_rule_from_rates(0.5, 1.0), 0.5);
        assert_eq!(p_rule_from_rates(0.4, 0.4), 1.0);
    }

    #[test]
    fn missing_group_is_reported() {
        let p = preds(&[1, 0]);
        assert!(matches!(
            demographic_parity_rates(&p, &[1, 1]),
            Err(Error::DegenerateGroup(0))
        ));
        assert!(matches!(
            disparate_mistreatment(&p, &[1, 1], &[0, 1]),
            Err(Error::DegenerateCell { s: 0, y: 0 })
        ));
    }

    #[test]
    fn mistreatment_by_counting() {
        let labels = [1, 0, 1, 0, 1, 1, 0, 0];
        let y = [1, 1, 0, 0, 1, 1, 0, 0];
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        let (d_tpr, d_fpr) = disparate_mistreatment(&preds(&labels), &y, &s).unwrap();
        assert_eq!(d_tpr, 0.5);
        assert_eq!(d_fpr, -0.5);

        let labels = [1, 0, 1, 0, 1, 0, 1, 0];
        let y = [1, 1, 0, 0, 1, 1, 0, 0];
        assert_eq!(
            disparate_mistreatment(&preds(&labels), &y, &s).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn accuracy_extremes() {
        let y = [0, 1, 1, 0];
        assert_eq!(accuracy(&preds(&y), &y).unwrap(), 1.0);
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        assert_eq!(accuracy(&preds(&flipped), &y).unwrap(), 0.0);
        assert!(matches!(
            accuracy(&preds(&[1]), &[1, 0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn random_instances_match_tally() {
        let mut r = crate::rng::stream(42, "metrics");
        let n = 1000;
        let labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let y: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let s: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let p = preds(&labels);

        let (mut pos0, mut n0, mut pos1, mut n1, mut hit) = (0, 0, 0, 0, 0);
        for i in 0..n {
            if s[i] == 0 {
                n0 += 1;
                if labels[i] == 1 {
                    pos0 += 1;
                }
            } else {
                n1 += 1;
                if labels[i] == 1 {
                    pos1 += 1;
                }
            }
            if labels[i] == y[i] {
                hit += 1;
            }
        }
        let (r0, r1) = demographic_parity_rates(&p, &s).unwrap();
        assert_eq!(r0, pos0 as f64 / n0 as f64);
        assert_eq!(r1, pos1 as f64 / n1 as f64);
        assert_eq!(accuracy(&p, &y).unwrap(), hit as f64 / n as f64);
    }

    proptest! {
        #[test]
        fn p_rule_symmetric_under_group_swap(
            cells in proptest::collection::vec((0u8..2, 0u8..2), 4..60)
        ) {
            let mut labels: Vec<u8> = cells.iter().map(|c| c.0).collect();
            let mut s: Vec<u8> = cells.iter().map(|c| c.1).collect();
            s[0] = 0;
            s[1] = 1;
            labels[0] = 1;
            let p = preds(&labels);
            let swapped: Vec<u8> = s.iter().map(|v| 1 - v).collect();
            let a = p_rule(&p, &s).unwrap();
            let b = p_rule(&p, &swapped).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn mistreatment_bounded(
            cells in proptest::collection::vec((0u8..2, 0u8..2, 0u8..2), 8..60)
        ) {
            let mut labels: Vec<u8> = cells.iter().map(|c| c.0).collect();
            let mut y: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let mut s: Vec<u8> = cells.iter().map(|c| c.2).collect();
            for (i, (g, t)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                s[i] = g;
                y[i] = t;
                labels[i] = t;
            }
            let (dt, df) = disparate_mistreatment(&preds(&labels), &y, &s).unwrap();
            prop_assert!((-1.0..=1.0).contains(&dt));
            prop_assert!((-1.0..=1.0).contains(&df));
        }
    }
}
