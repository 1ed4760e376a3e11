use clues_core::metrics::{score_auc, selection_metrics, SelectionMetrics};
use proptest::prelude::*;

fn brute_auc(s: &[(f64, bool)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in s.iter().filter(|x| x.1) {
        for n in s.iter().filter(|x| !x.1) {
            den += 1.0;
            num += if p.0 > n.0 {
                1.0
            } else if p.0 == n.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn labelled() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec(((-20i32..20).prop_map(|v| v as f64 / 4.0), any::<bool>()), 2..80)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(s in labelled()) {
        prop_assert!((score_auc(&s).unwrap() - brute_auc(&s)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(s in labelled(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mapped: Vec<(f64, bool)> = s.iter().map(|&(x, l)| ((a * x + b).exp(), l)).collect();
        prop_assert!((score_auc(&s).unwrap() - score_auc(&mapped).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn f1_is_the_harmonic_mean(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
        let m = SelectionMetrics::from_counts(tp, fp, tn, fn_);
        if m.precision + m.recall > 0.0 {
            let h = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
            prop_assert!((m.f1 - h).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
    }

    #[test]
    fn pooled_counts_are_sums(parts in prop::collection::vec((0u64..20, 0u64..20, 0u64..20, 0u64..20), 1..6)) {
        let ms: Vec<SelectionMetrics> = parts.iter().map(|&(a, b, c, d)| SelectionMetrics::from_counts(a, b, c, d)).collect();
        let p = SelectionMetrics::pooled(&ms);
        prop_assert_eq!(p.tp, parts.iter().map(|x| x.0).sum::<u64>());
        prop_assert_eq!(p.fn_, parts.iter().map(|x| x.3).sum::<u64>());
    }
}

#[test]
fn hand_examples() {
    assert_eq!(score_auc(&[(1.0, true), (0.0, false)]).unwrap(), 1.0);
    assert_eq!(score_auc(&[(0.0, true), (1.0, false)]).unwrap(), 0.0);
    assert_eq!(score_auc(&[(1.0, true), (1.0, false)]).unwrap(), 0.5);
    assert!(score_auc(&[(1.0, true)]).is_err());
    assert!(score_auc(&[(f64::NAN, true), (0.0, false)]).is_err());

    let labels = [(10, true), (11, false), (12, true), (13, false), (14, true)];
    let m = selection_metrics(&[10, 11, 12], &labels).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 1, 1));
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!(selection_metrics(&[99], &labels).is_err());
}
