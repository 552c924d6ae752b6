mod common;

use common::{auroc_oracle, flat, fpr_oracle, labeled_scores, prop_auroc_monotone};
use lgplug::detect::ScoreVector;
use lgplug::eval::{auroc, evaluate, fpr_at_tpr};
use lgplug::tag::SplitSpec;
use proptest::prelude::*;

fn split_scores(scores: &[f64], flags: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let id = scores.iter().zip(flags).filter(|(_, &o)| !o).map(|(s, _)| *s).collect();
    let ood = scores.iter().zip(flags).filter(|(_, &o)| o).map(|(s, _)| *s).collect();
    (id, ood)
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_enumeration((scores, flags) in labeled_scores()) {
        let (id, ood) = split_scores(&scores, &flags);
        prop_assert!((auroc(&scores, &flags).unwrap() - auroc_oracle(&id, &ood)).abs() < 1e-12);
    }

    #[test]
    fn fpr_matches_threshold_sweep((scores, flags) in labeled_scores(), pct in 1usize..=100) {
        let (id, ood) = split_scores(&scores, &flags);
        let got = fpr_at_tpr(&scores, &flags, pct as f64 / 100.0).unwrap();
        prop_assert_eq!(got, fpr_oracle(&id, &ood, pct, 100));
    }

    #[test]
    fn auroc_invariant_under_increasing_maps((scores, flags) in labeled_scores()) {
        prop_auroc_monotone(&scores, &flags)?;
    }

    #[test]
    fn negation_complements_auroc_without_ties(n in 2usize..50, seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s: Vec<f64> = (0..n).map(|i| i as f64).collect();
        s.shuffle(&mut rng);
        let flags: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&s, &flags).unwrap() + auroc(&neg, &flags).unwrap() - 1.0).abs() < 1e-12);
    }
}

fn fixture() -> (lgplug::tag::TextAttributedGraph, SplitSpec, ScoreVector) {
    let mut scores: Vec<f64> = (1..=20).map(f64::from).collect();
    scores.extend([10.0, 18.0, 25.0, 30.0]);
    let g = common::graph_from(24, &[], None);
    let split = SplitSpec {
        train: vec![],
        val: vec![],
        test_id: (0..20).map(|i| format!("v{i}")).collect(),
        test_ood: (20..24).map(|i| format!("v{i}")).collect(),
        id_classes: vec!["C0".into()],
    };
    (g, split, ScoreVector::new(scores).unwrap())
}

#[test]
fn report_agrees_with_standalone_metrics() {
    let (g, split, s) = fixture();
    let r = evaluate(&s, &g, &split, 5).unwrap();
    let (id, ood): (Vec<f64>, Vec<f64>) = (s.as_slice()[..20].to_vec(), s.as_slice()[20..].to_vec());
    let (all, flags) = flat(&id, &ood);
    assert_eq!(r.auroc, auroc(&all, &flags).unwrap());
    assert_eq!((r.fpr95, r.threshold_at_tpr95), (0.5, 19.0));
    assert_eq!((r.n_id, r.n_ood), (20, 4));
    assert!((r.histogram.id.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((r.histogram.ood.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn single_bin_report() {
    let (g, split, s) = fixture();
    let r = evaluate(&s, &g, &split, 1).unwrap();
    assert_eq!(r.histogram.id, vec![1.0]);
    assert_eq!(r.histogram.ood, vec![1.0]);
}

#[test]
fn report_ignores_node_order() {
    let (g, split, s) = fixture();
    let order: Vec<usize> = (0..24).rev().collect();
    let pg = g.permuted(&order).unwrap();
    let ps = ScoreVector::new(order.iter().map(|&i| s.as_slice()[i]).collect()).unwrap();
    assert_eq!(evaluate(&s, &g, &split, 7).unwrap(), evaluate(&ps, &pg, &split, 7).unwrap());
}

#[test]
fn empty_test_partition_is_an_error() {
    let (g, mut split, s) = fixture();
    split.test_id.clear();
    split.test_ood.clear();
    assert!(evaluate(&s, &g, &split, 3).is_err());
}
