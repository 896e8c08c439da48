use serde::Serialize;

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney statistic, ties averaged.
/// Labels are ±1.
pub fn auc(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument("probabilities and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && probs[idx[j + 1]] == probs[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += idx[i..=j].iter().filter(|&&k| labels[k] > 0.0).count() as f64 * avg;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub rho: f64,
    pub abstention: f64,
    pub accuracy: f64,
    /// `None` until the retained set first contains both classes.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityScores {
    pub capacity_accuracy: f64,
    /// `None` when AUC is undefined on every retained set.
    pub capacity_auc: Option<f64>,
    pub curve: Vec<CapacityPoint>,
}

/// Sweeps the abstention half-width ρ over 0, 0.01, …, 0.50; a point abstains
/// when `0.5 − ρ < p < 0.5 + ρ`. Accuracy and AUC on the retained points are
/// integrated against the abstention fraction (trapezoid) and divided by the
/// largest abstention reached. The curves stop at the first ρ where every
/// point abstains; an undefined AUC carries the previous value forward.
pub fn capacity_scores(probs: &[f64], labels: &[f64]) -> Result<CapacityScores> {
    let n = probs.len();
    if n == 0 || labels.len() != n {
        return Err(Error::InvalidArgument(
            "need equally long, non-empty probabilities and labels".into(),
        ));
    }
    let mut curve = Vec::with_capacity(51);
    let mut last_auc = None;
    for step in 0..=50 {
        let rho = step as f64 / 100.0;
        let kept: Vec<usize> = (0..n).filter(|&i| !(0.5 - rho < probs[i] && probs[i] < 0.5 + rho)).collect();
        if kept.is_empty() {
            break;
        }
        let correct = kept.iter().filter(|&&i| (probs[i] >= 0.5) == (labels[i] > 0.0)).count();
        let p: Vec<f64> = kept.iter().map(|&i| probs[i]).collect();
        let y: Vec<f64> = kept.iter().map(|&i| labels[i]).collect();
        if let Ok(a) = auc(&p, &y) {
            last_auc = Some(a);
        }
        curve.push(CapacityPoint {
            rho,
            abstention: 1.0 - kept.len() as f64 / n as f64,
            accuracy: correct as f64 / kept.len() as f64,
            auc: last_auc,
        });
    }
    let capacity_accuracy = normalized_area(&curve, |c| Some(c.accuracy)).unwrap_or(f64::NAN);
    let capacity_auc = normalized_area(&curve, |c| c.auc);
    Ok(CapacityScores {
        capacity_accuracy,
        capacity_auc,
        curve,
    })
}

/// `(1/A_max) ∫ g dA` over the curve. Without any abstention the curve is a
/// single abscissa and the value at ρ = 0 is returned.
fn normalized_area(curve: &[CapacityPoint], g: impl Fn(&CapacityPoint) -> Option<f64>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve.iter().filter_map(|c| g(c).map(|v| (c.abstention, v))).collect();
    let first = *pts.first()?;
    let max_a = pts.last()?.0;
    if max_a - first.0 <= 0.0 {
        return Some(first.1);
    }
    let area: f64 = pts.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    Some(area / max_a)
}
