use std::collections::BTreeSet;

use clues_core::scoring::QualityScore;
use clues_core::selection::{
    filter_by_threshold, global_threshold, select_by_fixed_score, select_by_ratio, select_with_fallback, AnchorScore,
};
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<QualityScore>> {
    prop::collection::vec(-10.0f64..10.0, 1..60).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, score)| QualityScore {
                sample_id: 3 * i as u64 + 1,
                score,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn raising_tau_never_grows_the_selection(s in scores(), t1 in -12.0f64..12.0, dt in 0.0f64..5.0) {
        let lo: BTreeSet<u64> = filter_by_threshold(&s, t1).into_iter().collect();
        let hi: BTreeSet<u64> = filter_by_threshold(&s, t1 + dt).into_iter().collect();
        prop_assert!(hi.is_subset(&lo));
    }

    #[test]
    fn selection_is_a_sorted_subset_of_the_input(s in scores(), tau in -12.0f64..12.0) {
        let all: BTreeSet<u64> = s.iter().map(|q| q.sample_id).collect();
        let kept = filter_by_threshold(&s, tau);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kept.iter().all(|id| all.contains(id)));
        for q in &s {
            prop_assert_eq!(kept.contains(&q.sample_id), q.score >= tau);
        }
    }

    #[test]
    fn ratio_keeps_ceil_rho_n_top_scores(s in scores(), rho in 0.0f64..=1.0) {
        let kept = select_by_ratio(&s, rho).unwrap();
        prop_assert_eq!(kept.len(), (rho * s.len() as f64).ceil() as usize);
        let min_kept = s.iter().filter(|q| kept.contains(&q.sample_id)).map(|q| q.score).fold(f64::INFINITY, f64::min);
        for q in s.iter().filter(|q| !kept.contains(&q.sample_id)) {
            prop_assert!(q.score <= min_kept);
        }
    }

    #[test]
    fn fallback_only_when_threshold_empties_the_client(s in scores(), tau in -12.0f64..12.0) {
        let sel = select_with_fallback(&s, tau);
        let plain = filter_by_threshold(&s, tau);
        if plain.is_empty() {
            prop_assert!(sel.fell_back);
            prop_assert_eq!(sel.selected.len(), (0.1 * s.len() as f64).ceil() as usize);
        } else {
            prop_assert!(!sel.fell_back);
            prop_assert_eq!(sel.selected, plain);
        }
    }

    #[test]
    fn threshold_is_the_anchor_mean(v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let table: Vec<AnchorScore> = v
            .iter()
            .enumerate()
            .map(|(i, &score)| AnchorScore { client_id: Some((i % 3) as u32), sample_id: i as u64, score })
            .collect();
        let t = global_threshold(&table, "clues").unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((t.tau - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn ratio_ties_go_to_the_lower_id() {
    let s: Vec<QualityScore> = [(9, 1.0), (2, 1.0), (5, 1.0), (1, 0.0)]
        .into_iter()
        .map(|(sample_id, score)| QualityScore { sample_id, score })
        .collect();
    assert_eq!(select_by_ratio(&s, 0.5).unwrap(), vec![2, 5]);
    assert!(select_by_ratio(&s, 1.5).is_err());
    assert!(select_by_fixed_score(&s, f64::NAN).is_err());
    assert_eq!(select_by_fixed_score(&s, 0.5).unwrap(), vec![2, 5, 9]);
}
