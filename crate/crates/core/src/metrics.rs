//! Selection correctness and score separation against ground-truth labels.
//! Clean samples are the positive class.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl SelectionMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SelectionMetrics {
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// Micro-average: sum confusion counts, then derive.
    pub fn pooled(parts: &[SelectionMetrics]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for p in parts {
            tp += p.tp;
            fp += p.fp;
            tn += p.tn;
            fn_ += p.fn_;
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

/// Confusion matrix of a selection. `labels` maps every sample id of the
/// dataset to whether it is clean.
pub fn selection_metrics(selected: &[u64], labels: &[(u64, bool)]) -> Result<SelectionMetrics> {
    let truth: BTreeMap<u64, bool> = labels.iter().copied().collect();
    let mut chosen = alloc::collections::BTreeSet::new();
    for id in selected {
        if !truth.contains_key(id) {
            return Err(Error::Data(format!("selected sample {id} has no quality label")));
        }
        chosen.insert(*id);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (id, clean) in &truth {
        match (chosen.contains(id), *clean) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(SelectionMetrics::from_counts(tp, fp, tn, fn_))
}

/// Probability that a random clean sample outscores a random polluted one;
/// ties count one half.
pub fn score_auc(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both clean and polluted samples"));
    }
    if scored.iter().any(|s| s.0.is_nan()) {
        return Err(Error::Numeric("AUC input"));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U via midranks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for s in &sorted[i..=j] {
            if s.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}
