//! Anchor scoring, the global threshold, and client-side filtering.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::Sample;
use crate::optimizer::Trajectory;
use crate::scoring::{score_dataset_with, QualityScore, ScoringConfig};

pub const DEFAULT_ANCHOR_SIZE: usize = 10;
/// Keep ratio used when the threshold would leave a client with nothing.
pub const FALLBACK_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorScore {
    /// Client whose trajectory produced the score; `None` for a global
    /// trajectory.
    pub client_id: Option<u32>,
    pub sample_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProvenance {
    pub scorer: String,
    pub anchor_ids: Vec<u64>,
    /// Clients whose trajectories were used; empty for a global trajectory.
    pub clients: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalThreshold {
    pub tau: f64,
    pub provenance: ThresholdProvenance,
}

/// Which trajectories the server scores anchors against.
pub enum AnchorTrajectories<'a> {
    /// One shared global-model trajectory.
    Global(&'a Trajectory),
    /// One trajectory per client, in client order.
    PerClient(&'a [(u32, Trajectory)]),
}

pub fn anchor_scores<E: Executor>(
    exec: &E,
    anchor: &AnchorSet,
    trajectories: AnchorTrajectories<'_>,
    val_set: &[Sample],
    config: &ScoringConfig,
) -> Result<Vec<AnchorScore>> {
    if anchor.samples.is_empty() {
        return Err(Error::config("anchor set is empty"));
    }
    let mut out = Vec::new();
    match trajectories {
        AnchorTrajectories::Global(t) => {
            for s in score_dataset_with(exec, &anchor.samples, val_set, t, config)? {
                out.push(AnchorScore {
                    client_id: None,
                    sample_id: s.sample_id,
                    score: s.score,
                });
            }
        }
        AnchorTrajectories::PerClient(list) => {
            if list.is_empty() {
                return Err(Error::State("no client trajectories for anchor scoring".into()));
            }
            for (client, t) in list {
                for s in score_dataset_with(exec, &anchor.samples, val_set, t, config)? {
                    out.push(AnchorScore {
                        client_id: Some(*client),
                        sample_id: s.sample_id,
                        score: s.score,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// τ = arithmetic mean of every (client, anchor) score.
pub fn global_threshold(table: &[AnchorScore], scorer: &str) -> Result<GlobalThreshold> {
    if table.is_empty() {
        return Err(Error::config("anchor score table is empty"));
    }
    let tau = table.iter().map(|a| a.score).sum::<f64>() / table.len() as f64;
    if !tau.is_finite() {
        return Err(Error::Numeric("global threshold"));
    }
    let mut anchor_ids: Vec<u64> = table.iter().map(|a| a.sample_id).collect();
    anchor_ids.sort_unstable();
    anchor_ids.dedup();
    let mut clients: Vec<u32> = table.iter().filter_map(|a| a.client_id).collect();
    clients.sort_unstable();
    clients.dedup();
    Ok(GlobalThreshold {
        tau,
        provenance: ThresholdProvenance {
            scorer: scorer.into(),
            anchor_ids,
            clients,
        },
    })
}

fn sorted_ids(mut ids: Vec<u64>) -> Vec<u64> {
    ids.sort_unstable();
    ids
}

/// `{z : S(z) ≥ τ}`, ordered by sample id. May be empty.
pub fn filter_by_threshold(scores: &[QualityScore], tau: f64) -> Vec<u64> {
    sorted_ids(scores.iter().filter(|s| s.score >= tau).map(|s| s.sample_id).collect())
}

/// Top `⌈ρ·n⌉` by score; ties at the cut go to the lower sample id.
pub fn select_by_ratio(scores: &[QualityScore], ratio: f64) -> Result<Vec<u64>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config("selection ratio must lie in [0, 1]"));
    }
    let k = libm::ceil(ratio * scores.len() as f64) as usize;
    let mut ranked: Vec<&QualityScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.sample_id.cmp(&b.sample_id)));
    Ok(sorted_ids(
        ranked[..k.min(ranked.len())].iter().map(|s| s.sample_id).collect(),
    ))
}

/// `{z : S(z) ≥ s₀}` for a pre-determined score.
pub fn select_by_fixed_score(scores: &[QualityScore], s0: f64) -> Result<Vec<u64>> {
    if !s0.is_finite() {
        return Err(Error::config("fixed score must be finite"));
    }
    Ok(filter_by_threshold(scores, s0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSelection {
    pub selected: Vec<u64>,
    /// The threshold removed every sample and the ratio fallback was used.
    pub fell_back: bool,
}

/// Threshold filtering with the empty-selection fallback.
pub fn select_with_fallback(scores: &[QualityScore], tau: f64) -> ClientSelection {
    let selected = filter_by_threshold(scores, tau);
    if selected.is_empty() && !scores.is_empty() {
        log::warn!(
            "threshold {tau} removed all {} samples; keeping top {FALLBACK_RATIO} by score",
            scores.len()
        );
        return ClientSelection {
            selected: select_by_ratio(scores, FALLBACK_RATIO).expect("valid ratio"),
            fell_back: true,
        };
    }
    ClientSelection {
        selected,
        fell_back: false,
    }
}
