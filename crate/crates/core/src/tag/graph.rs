use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// One line of a nodes file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Diagnostics from edge ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    /// Edges dropped because the unordered pair was already present.
    pub duplicates: usize,
    /// Edges dropped because both endpoints were the same node.
    pub self_loops: usize,
}

/// An undirected graph whose nodes carry raw text and optional class labels.
///
/// Nodes are addressed internally by their position (`0..len()`); the opaque
/// string ids are kept for I/O. Edges are stored once per unordered pair as
/// `(lo, hi)` with `lo < hi`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    texts: Vec<String>,
    labels: Vec<Option<String>>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    domain_hint: String,
}

impl TextAttributedGraph {
    /// Validates nodes and edges and builds the graph.
    ///
    /// Duplicate edges and self-loops are dropped and counted; unknown
    /// endpoints, duplicate node ids and empty labels are integrity errors.
    pub fn new<I>(nodes: Vec<NodeRecord>, edges: I) -> Result<(Self, EdgeStats)>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut node_ids = Vec::with_capacity(nodes.len());
        let mut texts = Vec::with_capacity(nodes.len());
        let mut labels = Vec::with_capacity(nodes.len());
        let mut index = HashMap::with_capacity(nodes.len());
        for rec in nodes {
            if rec.id.is_empty() || rec.id.contains(['\t', '\n', '\r']) {
                return Err(Error::Integrity(format!(
                    "node id {:?} is empty or contains a tab/newline",
                    rec.id
                )));
            }
            if matches!(&rec.label, Some(l) if l.is_empty()) {
                return Err(Error::Integrity(format!("node {} has an empty label", rec.id)));
            }
            if index.insert(rec.id.clone(), node_ids.len()).is_some() {
                return Err(Error::Integrity(format!("duplicate node id {}", rec.id)));
            }
            node_ids.push(rec.id);
            texts.push(rec.text);
            labels.push(rec.label);
        }

        let mut stats = EdgeStats::default();
        let mut set = BTreeSet::new();
        for (src, dst) in edges {
            let a = *index
                .get(&src)
                .ok_or_else(|| Error::Integrity(format!("edge endpoint {src} is not a node")))?;
            let b = *index
                .get(&dst)
                .ok_or_else(|| Error::Integrity(format!("edge endpoint {dst} is not a node")))?;
            if a == b {
                stats.self_loops += 1;
                continue;
            }
            if !set.insert((a.min(b), a.max(b))) {
                stats.duplicates += 1;
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_ids.len()];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok((
            Self {
                node_ids,
                index,
                texts,
                labels,
                edges,
                neighbors,
                domain_hint: String::new(),
            },
            stats,
        ))
    }

    pub fn with_domain_hint(mut self, hint: impl Into<String>) -> Self {
        self.domain_hint = hint.into();
        self
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, i: usize) -> &str {
        &self.node_ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, i: usize) -> &str {
        &self.texts[i]
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels[i].as_deref()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn domain_hint(&self) -> &str {
        &self.domain_hint
    }

    /// Distinct labels in first-seen order.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for l in self.labels.iter().flatten() {
            if seen.insert(l.as_str()) {
                out.push(l.clone());
            }
        }
        out
    }

    pub fn records(&self) -> impl Iterator<Item = NodeRecord> + '_ {
        (0..self.len()).map(|i| NodeRecord {
            id: self.node_ids[i].clone(),
            text: self.texts[i].clone(),
            label: self.labels[i].clone(),
        })
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with degrees counted including the self-loop.
    pub fn sym_norm_adjacency(&self) -> CsrMatrix {
        let inv_sqrt: Vec<f64> = (0..self.len())
            .map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt())
            .collect();
        let rows = (0..self.len())
            .map(|i| {
                std::iter::once(i)
                    .chain(self.neighbors[i].iter().copied())
                    .map(|j| (j, inv_sqrt[i] * inv_sqrt[j]))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    /// `D^{-1} (A + I)`: each row averages the node with its neighbours.
    pub fn row_norm_adjacency(&self) -> CsrMatrix {
        let rows = (0..self.len())
            .map(|i| {
                let w = 1.0 / (self.degree(i) + 1) as f64;
                std::iter::once(i)
                    .chain(self.neighbors[i].iter().copied())
                    .map(|j| (j, w))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    /// Reorders nodes so that new position `k` holds old node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} nodes",
                order.len(),
                self.len()
            )));
        }
        let nodes = order
            .iter()
            .map(|&i| NodeRecord {
                id: self.node_ids[i].clone(),
                text: self.texts[i].clone(),
                label: self.labels[i].clone(),
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (self.node_ids[a].clone(), self.node_ids[b].clone()));
        let (g, _) = Self::new(nodes, edges)?;
        Ok(g.with_domain_hint(self.domain_hint.clone()))
    }

    /// Connected components as sorted node-index lists, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut comp = vec![usize::MAX; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            comp[start] = id;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in &self.neighbors[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = id;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}
