use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::TextAttributedGraph;
use crate::error::{Error, Result};

/// Train/val/test partition with the ID/OOD label-space split.
///
/// All OOD-labeled nodes live in `test_ood`; the three ID sets only hold
/// nodes whose label is in `id_classes`. Ids are listed in graph order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test_id: Vec<String>,
    pub test_ood: Vec<String>,
    pub id_classes: Vec<String>,
}

/// [`SplitSpec`] resolved to node positions of a specific graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_id: Vec<usize>,
    pub test_ood: Vec<usize>,
}

impl SplitIndices {
    /// Nodes outside train and val, in graph order: the unlabeled pool.
    pub fn unlabeled_pool(&self, n_nodes: usize) -> Vec<usize> {
        let labeled: HashSet<usize> = self.train.iter().chain(&self.val).copied().collect();
        (0..n_nodes).filter(|i| !labeled.contains(i)).collect()
    }

    /// Test nodes in graph order with an is-OOD flag.
    pub fn test_nodes(&self) -> Vec<(usize, bool)> {
        let mut out: Vec<(usize, bool)> = self
            .test_id
            .iter()
            .map(|&i| (i, false))
            .chain(self.test_ood.iter().map(|&i| (i, true)))
            .collect();
        out.sort_unstable();
        out
    }
}

impl SplitSpec {
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.id_classes.iter().position(|c| c == label)
    }

    pub fn indices(&self, graph: &TextAttributedGraph) -> Result<SplitIndices> {
        let resolve = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    graph
                        .index_of(id)
                        .ok_or_else(|| Error::Integrity(format!("split references unknown node {id}")))
                })
                .collect()
        };
        Ok(SplitIndices {
            train: resolve(&self.train)?,
            val: resolve(&self.val)?,
            test_id: resolve(&self.test_id)?,
            test_ood: resolve(&self.test_ood)?,
        })
    }

    /// Checks disjointness and label-space membership against `graph`.
    pub fn validate(&self, graph: &TextAttributedGraph) -> Result<()> {
        let idx = self.indices(graph)?;
        let mut seen = HashSet::new();
        for &i in idx.train.iter().chain(&idx.val).chain(&idx.test_id).chain(&idx.test_ood) {
            if !seen.insert(i) {
                return Err(Error::Integrity(format!(
                    "node {} appears in more than one split",
                    graph.node_id(i)
                )));
            }
        }
        for &i in idx.train.iter().chain(&idx.val).chain(&idx.test_id) {
            match graph.label(i) {
                Some(l) if self.class_index(l).is_some() => {}
                _ => {
                    return Err(Error::Integrity(format!(
                        "ID split node {} lacks an ID label",
                        graph.node_id(i)
                    )))
                }
            }
        }
        for &i in &idx.test_ood {
            match graph.label(i) {
                Some(l) if self.class_index(l).is_none() => {}
                _ => {
                    return Err(Error::Integrity(format!(
                        "OOD split node {} lacks an OOD label",
                        graph.node_id(i)
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

/// Splits `total` items by `ratios` with largest-remainder rounding.
/// Ties in the fractional part go to the earlier bucket.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Builds the ID/OOD split: ID-labeled nodes are shuffled with `seed` and cut
/// by `ratios` (train, val, test); every node labeled outside `id_classes`
/// goes to `test_ood`. Unlabeled nodes are left out of all four sets.
pub fn make_ood_split(
    graph: &TextAttributedGraph,
    id_classes: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios ({rt}, {rv}, {rs}) must be fractions summing to 1"
        )));
    }
    let present: HashSet<&str> = graph.labels().iter().flatten().map(String::as_str).collect();
    let mut unique = HashSet::new();
    for c in id_classes {
        if !unique.insert(c.as_str()) {
            return Err(Error::Config(format!("ID class {c} listed twice")));
        }
        if !present.contains(c.as_str()) {
            return Err(Error::Config(format!("ID class {c} does not label any node")));
        }
    }

    let mut id_nodes = Vec::new();
    let mut ood_nodes = Vec::new();
    for (i, label) in graph.labels().iter().enumerate() {
        match label {
            Some(l) if unique.contains(l.as_str()) => id_nodes.push(i),
            Some(_) => ood_nodes.push(i),
            None => {}
        }
    }
    if id_nodes.is_empty() {
        return Err(Error::EmptyId);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    id_nodes.shuffle(&mut rng);
    let counts = largest_remainder(id_nodes.len(), &[rt, rv, rs]);
    let mut rest = id_nodes.as_slice();
    let mut take = |k: usize| {
        let (head, tail) = rest.split_at(k);
        rest = tail;
        let mut v = head.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| graph.node_id(i).to_string()).collect::<Vec<_>>()
    };
    let train = take(counts[0]);
    let val = take(counts[1]);
    let test_id = take(counts[2]);
    let test_ood = ood_nodes.into_iter().map(|i| graph.node_id(i).to_string()).collect();

    Ok(SplitSpec {
        train,
        val,
        test_id,
        test_ood,
        id_classes: id_classes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag::NodeRecord;
    use proptest::prelude::*;

    fn labeled(labels: &[Option<&str>]) -> TextAttributedGraph {
        let nodes = labels
            .iter()
            .enumerate()
            .map(|(i, l)| NodeRecord {
                id: format!("n{i}"),
                text: String::new(),
                label: l.map(str::to_string),
            })
            .collect();
        TextAttributedGraph::new(nodes, []).unwrap().0
    }

    #[test]
    fn sixty_twenty_twenty() {
        let mut labels = vec![Some("A"); 5];
        labels.extend([Some("B"); 5]);
        labels.extend([Some("X"); 4]);
        let g = labeled(&labels);
        let s = make_ood_split(&g, &["A".into(), "B".into()], (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.test_id.len(), s.test_ood.len()),
            (6, 2, 2, 4)
        );
        s.validate(&g).unwrap();
    }

    #[test]
    fn only_ood_nodes_is_empty_id() {
        // with no ID classes every labeled node is OOD
        let g = labeled(&[Some("X"), Some("Y")]);
        assert!(matches!(
            make_ood_split(&g, &[], (0.6, 0.2, 0.2), 0),
            Err(Error::EmptyId)
        ));
        assert!(matches!(
            make_ood_split(&g, &["Q".into()], (0.6, 0.2, 0.2), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = labeled(&[Some("A"); 30]);
        let a = make_ood_split(&g, &["A".into()], (0.6, 0.2, 0.2), 3).unwrap();
        let b = make_ood_split(&g, &["A".into()], (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_ratios() {
        let g = labeled(&[Some("A"); 3]);
        assert!(matches!(
            make_ood_split(&g, &["A".into()], (0.6, 0.3, 0.2), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        assert_eq!(largest_remainder(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
        assert_eq!(largest_remainder(7, &[0.6, 0.2, 0.2]), vec![4, 2, 1]);
        assert_eq!(largest_remainder(1, &[1.0 / 3.0; 3]), vec![1, 0, 0]);
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_ood_exclusive(
            labels in prop::collection::vec(prop::option::of(0u8..5), 1..80),
            n_id in 1usize..4,
            seed in any::<u64>(),
        ) {
            let names: Vec<Option<String>> = labels.iter().map(|l| l.map(|c| format!("c{c}"))).collect();
            let g = labeled(&names.iter().map(|l| l.as_deref()).collect::<Vec<_>>());
            let present = g.classes();
            let id: Vec<String> = present.iter().take(n_id).cloned().collect();
            match make_ood_split(&g, &id, (0.6, 0.2, 0.2), seed) {
                Ok(s) => {
                    prop_assert!(s.validate(&g).is_ok());
                    let n_ood = names.iter().flatten().filter(|l| !id.contains(l)).count();
                    prop_assert_eq!(s.test_ood.len(), n_ood);
                }
                Err(Error::EmptyId) => prop_assert!(id.is_empty()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
