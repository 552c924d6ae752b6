mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn propagation_is_convex((n, edges, scores) in graph_and_scores(), alpha in 0.0f64..=1.0, k in 0usize..5) {
        prop_propagation_convex(n, &edges, &scores, alpha, k)?;
    }
}

proptest! {
    #[test]
    fn codebook_counts_are_conserved((init, seq) in category_sequence()) {
        prop_codebook_conservation(&init, &seq)?;
    }

    #[test]
    fn split_is_disjoint_and_ood_exclusive((labels, n_id, seed) in labeled_graph()) {
        prop_split(&labels, n_id, seed)?;
    }

    #[test]
    fn node_loss_symmetric_and_permutation_invariant((m, perm) in matrix_and_permutation()) {
        prop_node_loss_symmetry(&m, &perm)?;
    }
}
