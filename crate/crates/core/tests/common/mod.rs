//! Independent oracles, instance generators and property checks shared by
//! the integration tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::HashSet;

use lgplug::alignment::{node_alignment_loss, SimilarityMatrix};
use lgplug::detect::{propagate_scores, ScoreVector};
use lgplug::exposure::Codebook;
use lgplug::eval::auroc;
use lgplug::llm::normalize_category;
use lgplug::tag::{make_ood_split, NodeRecord, TextAttributedGraph};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

// ---- metric oracles ----

/// Pairwise enumeration of every (ID, OOD) pair.
pub fn auroc_oracle(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood {
        for &i in id {
            wins += if o > i {
                1.0
            } else if o == i {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Sweeps every observed score as a threshold, ascending, and stops at the
/// first whose ID true-positive rate reaches `num/den` (integer arithmetic).
pub fn fpr_oracle(id: &[f64], ood: &[f64], num: usize, den: usize) -> (f64, f64) {
    let mut candidates: Vec<f64> = id.iter().chain(ood).copied().collect();
    candidates.sort_by(f64::total_cmp);
    for t in candidates {
        let tp = id.iter().filter(|&&s| s <= t).count();
        if tp * den >= num * id.len() {
            let fp = ood.iter().filter(|&&s| s <= t).count();
            return (fp as f64 / ood.len() as f64, t);
        }
    }
    unreachable!("the largest score always reaches full TPR")
}

/// Flattens split scores into the `(scores, is_ood)` form of the metrics.
pub fn flat(id: &[f64], ood: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let s = id.iter().chain(ood).copied().collect();
    let f = (0..id.len() + ood.len()).map(|k| k >= id.len()).collect();
    (s, f)
}

// ---- loss oracles ----

/// Direct evaluation: half the mean row cross-entropy plus half the mean
/// column cross-entropy, diagonal targets, no stabilization tricks.
pub fn node_loss_oracle(s: &Array2<f64>) -> f64 {
    let n = s.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| s[[i, j]].exp()).sum();
        let col: f64 = (0..n).map(|j| s[[j, i]].exp()).sum();
        total += -(s[[i, i]].exp() / row).ln() - (s[[i, i]].exp() / col).ln();
    }
    total / (2.0 * n as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean squared difference of endpoint cosine similarities.
pub fn edge_loss_oracle(z: &Array2<f64>, h: &Array2<f64>, edges: &[(usize, usize)]) -> f64 {
    if edges.is_empty() {
        return 0.0;
    }
    let row = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
    let sum: f64 = edges
        .iter()
        .map(|&(a, b)| {
            let d = cosine(&row(z, a), &row(z, b)) - cosine(&row(h, a), &row(h, b));
            d * d
        })
        .sum();
    sum / edges.len() as f64
}

pub fn reg_oracle(id: &[f64], exp: &[f64], d1: f64, d2: f64) -> f64 {
    let mut total = 0.0;
    for &s in id {
        if s > d1 {
            total += (s - d1) * (s - d1) / id.len() as f64;
        }
    }
    for &s in exp {
        if s < d2 {
            total += (d2 - s) * (d2 - s) / exp.len() as f64;
        }
    }
    total
}

// ---- finite differences ----

/// Central differences of `f` at every entry of `x`.
pub fn central_diff(f: &mut dyn FnMut(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let v = x[idx];
        probe[idx] = v + h;
        let up = f(&probe);
        probe[idx] = v - h;
        let down = f(&probe);
        probe[idx] = v;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)` over all entries.
pub fn rel_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a.mapv(|v| v * v).sum().sqrt() + b.mapv(|v| v * v).sum().sqrt();
    diff / scale.max(1e-12)
}

// ---- generators ----

pub fn graph_from(n: usize, edges: &[(usize, usize)], labels: Option<&[usize]>) -> TextAttributedGraph {
    let nodes = (0..n)
        .map(|i| NodeRecord {
            id: format!("v{i}"),
            text: format!("node {i}"),
            label: labels.map(|l| format!("C{}", l[i])),
        })
        .collect();
    let edges: Vec<(String, String)> = edges
        .iter()
        .filter(|(a, b)| a != b)
        .map(|&(a, b)| (format!("v{a}"), format!("v{b}")))
        .collect();
    TextAttributedGraph::new(nodes, edges).unwrap().0
}

/// A graph of 1..=40 nodes with random edges and scores in [-10, 10].
pub fn graph_and_scores() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<f64>)> {
    (1usize..=40).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..3 * n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

/// A random square similarity matrix with a permutation of its indices.
pub fn matrix_and_permutation() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap()),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

/// Integer-valued scores (so ties occur) with at least one of each class.
pub fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=60).prop_flat_map(|n| {
        (
            prop::collection::vec((-20i32..20).prop_map(f64::from), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut f)| {
                f[0] = false;
                f[1] = true;
                (s, f)
            })
    })
}

/// Category strings drawn from a small pool, varied in case and spacing.
pub fn category_sequence() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    let pool = prop::sample::select(vec![
        "Theory", "theory", " THEORY ", "Neural Networks", "neural  networks", "Genetic Algorithms", "Other",
    ]);
    (
        prop::collection::vec(pool.clone().prop_map(String::from), 0..4),
        prop::collection::vec(pool.prop_map(String::from), 0..40),
    )
}

/// Labels over five classes and a seed for the split.
pub fn labeled_graph() -> impl Strategy<Value = (Vec<usize>, usize, u64)> {
    (2usize..=60).prop_flat_map(|n| (prop::collection::vec(0usize..5, n), 1usize..=4, any::<u64>()))
}

// ---- properties ----

/// Every propagated score lies within the range of the input scores, and a
/// single round stays within each node's closed neighbourhood.
pub fn prop_propagation_convex(n: usize, edges: &[(usize, usize)], scores: &[f64], alpha: f64, k: usize) -> Result<(), TestCaseError> {
    let g = graph_from(n, edges, None);
    let s = ScoreVector::new(scores.to_vec()).unwrap();
    let out = propagate_scores(&s, &g, alpha, k).unwrap();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &v in out.as_slice() {
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{v} outside [{lo}, {hi}]");
    }
    let one = propagate_scores(&s, &g, alpha, 1).unwrap();
    for i in 0..n {
        let hood = std::iter::once(i).chain(g.neighbors(i).iter().copied()).map(|j| scores[j]);
        let (a, b) = hood.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let v = one.as_slice()[i];
        prop_assert!(v >= a - 1e-12 && v <= b + 1e-12);
    }
    Ok(())
}

/// Codebook totals equal the number of recorded assignments and every entry's
/// count equals the assignments matching it.
pub fn prop_codebook_conservation(init: &[String], seq: &[String]) -> Result<(), TestCaseError> {
    let mut book = Codebook::from_categories(init);
    for c in seq {
        book.record(c);
    }
    prop_assert_eq!(book.total(), seq.len());
    let mut keys = HashSet::new();
    for (c, n) in book.entries() {
        let key = normalize_category(c);
        prop_assert!(keys.insert(key.clone()), "duplicate entry {}", c);
        prop_assert_eq!(*n, seq.iter().filter(|s| normalize_category(s) == key).count());
    }
    Ok(())
}

/// Split parts are disjoint, ID parts hold only ID labels, and `test_ood` is
/// exactly the set of nodes labeled outside the ID classes.
pub fn prop_split(labels: &[usize], n_id: usize, seed: u64) -> Result<(), TestCaseError> {
    let g = graph_from(labels.len(), &[], Some(labels));
    let present: Vec<usize> = {
        let mut p: Vec<usize> = labels.to_vec();
        p.sort_unstable();
        p.dedup();
        p
    };
    let id_classes: Vec<String> = present.iter().take(n_id).map(|c| format!("C{c}")).collect();
    let split = make_ood_split(&g, &id_classes, (0.6, 0.2, 0.2), seed).unwrap();
    split.validate(&g).unwrap();
    let mut seen = HashSet::new();
    for id in split.train.iter().chain(&split.val).chain(&split.test_id).chain(&split.test_ood) {
        prop_assert!(seen.insert(id.clone()), "{} appears twice", id);
    }
    let is_id = |id: &str| {
        let l = g.label(g.index_of(id).unwrap()).unwrap();
        id_classes.iter().any(|c| c == l)
    };
    for id in split.train.iter().chain(&split.val).chain(&split.test_id) {
        prop_assert!(is_id(id));
    }
    let ood: HashSet<String> = (0..g.len()).map(|i| g.node_id(i).to_string()).filter(|id| !is_id(id)).collect();
    prop_assert_eq!(split.test_ood.iter().cloned().collect::<HashSet<_>>(), ood);
    prop_assert_eq!(seen.len(), g.len());
    Ok(())
}

/// The node loss is unchanged by transposition and by a joint permutation of
/// rows and columns.
pub fn prop_node_loss_symmetry(m: &Array2<f64>, perm: &[usize]) -> Result<(), TestCaseError> {
    let base = node_alignment_loss(&SimilarityMatrix::new(m.clone()).unwrap()).unwrap();
    let t = node_alignment_loss(&SimilarityMatrix::new(m.t().to_owned()).unwrap()).unwrap();
    let n = m.nrows();
    let p = Array2::from_shape_fn((n, n), |(i, j)| m[[perm[i], perm[j]]]);
    let q = node_alignment_loss(&SimilarityMatrix::new(p).unwrap()).unwrap();
    prop_assert!((base - t).abs() < 1e-9, "{base} vs transpose {t}");
    prop_assert!((base - q).abs() < 1e-9, "{base} vs permuted {q}");
    Ok(())
}

/// AUROC is unchanged by strictly increasing transforms.
pub fn prop_auroc_monotone(scores: &[f64], flags: &[bool]) -> Result<(), TestCaseError> {
    let base = auroc(scores, flags).unwrap();
    let transforms: [fn(f64) -> f64; 3] = [|x| 3.0 * x + 7.0, |x| x * x * x + x, |x| (x / 8.0).exp()];
    for f in transforms {
        let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
        prop_assert_eq!(auroc(&t, flags).unwrap(), base);
    }
    Ok(())
}
