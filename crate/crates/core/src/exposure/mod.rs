//! Consensus-driven OOD exposure: cluster the unlabeled pool, keep the nodes
//! nearest each centroid, label small batches with the LLM against a growing
//! per-cluster codebook, and expose nodes whose consensus category lies
//! outside the in-distribution label space.

mod codebook;
mod kmeans;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use codebook::{top_k_categories, update_codebook, Codebook};
pub use kmeans::{cluster_embeddings, kmeans, near_centroid, objective, sq_dist, ClusterAssignment, KMeansOptions};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::llm::{build_prompt, normalize_category, LlmGateway, QueryContext, QueryLedger};
use crate::tag::{SplitSpec, TextAttributedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureConfig {
    /// Number of clusters `M`.
    pub clusters: usize,
    /// Near-centroid ratio `ρ`.
    pub rho: f64,
    /// Query batch size `b`.
    pub batch: usize,
    /// Maximum trials `T` per cluster.
    pub trials: usize,
    /// Top-`K` consensus size.
    pub top_k: usize,
    /// After a unanimous trial, expose the whole near-centroid set rather than
    /// only the queried nodes.
    pub expand_unanimous: bool,
    pub kmeans: KMeansOptions,
    pub seed: u64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            clusters: 10,
            rho: 0.5,
            batch: 3,
            trials: 3,
            top_k: 2,
            expand_unanimous: false,
            kmeans: KMeansOptions::default(),
            seed: 0,
        }
    }
}

impl ExposureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.batch == 0 || self.trials == 0 || self.top_k == 0 {
            return Err(Error::Config("exposure: clusters, batch, trials and top_k must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("exposure: rho must lie in (0, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// Upper bound on LLM queries: `M·b·T`.
    pub fn query_budget(&self) -> usize {
        self.clusters * self.batch * self.trials
    }
}

/// Why an exposed node was selected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cluster: usize,
    pub category: String,
}

/// The exposure set `V_exp`, keyed by node id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureSet {
    pub nodes: BTreeMap<String, Provenance>,
}

impl ExposureSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Node positions in `graph`, ascending.
    pub fn indices(&self, graph: &TextAttributedGraph) -> Result<Vec<usize>> {
        let mut out = self
            .nodes
            .keys()
            .map(|id| {
                graph
                    .index_of(id)
                    .ok_or_else(|| Error::Integrity(format!("exposed node {id} is not in the graph")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_unstable();
        Ok(out)
    }

    /// Share of members whose true label is outside `id_classes`; `None` when
    /// the set is empty.
    pub fn purity(&self, graph: &TextAttributedGraph, id_classes: &[String]) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let ood = self
            .nodes
            .keys()
            .filter(|id| {
                let label = graph.index_of(id).and_then(|i| graph.label(i));
                label.is_some_and(|l| !id_classes.iter().any(|c| c == l))
            })
            .count();
        Some(ood as f64 / self.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// What happened in one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub near_size: usize,
    pub queries: usize,
    pub trials: usize,
    pub unanimous: bool,
    pub top_k: Vec<String>,
    pub exposed: usize,
    pub codebook: Codebook,
    /// Set when an LLM failure ended the cluster early.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExposureOutcome {
    pub set: ExposureSet,
    pub ledger: QueryLedger,
    pub clusters: Vec<ClusterSummary>,
}

/// Runs the exposure protocol over the nodes outside train and val.
///
/// Per cluster: the near-centroid set is shuffled once and consumed in
/// batches of `b` (no node is queried twice); each node gets one LLM query
/// against the current codebook; a batch whose answers all agree ends the
/// cluster. Queried nodes whose category is in the top-`K` are exposed,
/// provided no top-`K` category is an ID class. A cluster whose LLM query
/// fails after retries is skipped.
pub fn run_exposure(
    graph: &TextAttributedGraph,
    z: &EmbeddingMatrix,
    split: &SplitSpec,
    config: &ExposureConfig,
    llm: &LlmGateway,
) -> Result<ExposureOutcome> {
    config.validate()?;
    if z.rows() != graph.len() {
        return Err(Error::Shape(format!("{} embedding rows for {} nodes", z.rows(), graph.len())));
    }
    let pool = split.indices(graph)?.unlabeled_pool(graph.len());
    let zu = z.select(&pool);
    let assignment = kmeans(zu.as_array().view(), config.clusters, config.seed, &config.kmeans)?;

    let id_keys: BTreeSet<String> = split.id_classes.iter().map(|c| normalize_category(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7b0);
    let mut ledger = QueryLedger::new();
    let mut set = ExposureSet::default();
    let mut summaries = Vec::with_capacity(config.clusters);

    for (m, rows) in assignment.clusters.iter().enumerate() {
        let members: Vec<usize> = rows.iter().map(|&r| pool[r]).collect();
        let mut near = near_centroid(&members, z.as_array().view(), config.rho);
        let near_size = near.len();
        near.shuffle(&mut rng);

        let mut book = Codebook::from_categories(&split.id_classes);
        let mut assigned: Vec<(usize, String)> = Vec::new();
        let mut trials = 0;
        let mut unanimous = false;
        let mut skipped = None;

        'trials: for batch in near.chunks(config.batch).take(config.trials) {
            trials += 1;
            let mut answers = Vec::with_capacity(batch.len());
            for &node in batch {
                let prompt = build_prompt(graph.domain_hint(), &book.categories(), graph.text(node))?;
                let ctx = QueryContext {
                    cluster: Some(m),
                    node_id: Some(graph.node_id(node).to_string()),
                };
                match llm.query(&prompt, &ctx, &mut ledger) {
                    Ok((category, _)) => {
                        let slot = book.record(&category);
                        answers.push(slot);
                        assigned.push((node, book.entries()[slot].0.clone()));
                    }
                    Err(e) => {
                        log::warn!("cluster {m} skipped: {e}");
                        skipped = Some(e.to_string());
                        break 'trials;
                    }
                }
            }
            if answers.windows(2).all(|w| w[0] == w[1]) {
                unanimous = true;
                break;
            }
        }

        let top = top_k_categories(&book, config.top_k);
        let mut exposed = 0;
        let admissible = skipped.is_none() && !top.iter().any(|c| id_keys.contains(&normalize_category(c)));
        if admissible {
            let top_keys: BTreeSet<String> = top.iter().map(|c| normalize_category(c)).collect();
            let mut chosen: Vec<(usize, String)> = assigned
                .iter()
                .filter(|(_, c)| top_keys.contains(&normalize_category(c)))
                .cloned()
                .collect();
            if config.expand_unanimous && unanimous {
                let consensus = assigned.last().map(|(_, c)| c.clone()).expect("a unanimous trial has answers");
                chosen = near.iter().map(|&v| (v, consensus.clone())).collect();
            }
            for (node, category) in chosen {
                let id = graph.node_id(node).to_string();
                if set.nodes.insert(id, Provenance { cluster: m, category }).is_none() {
                    exposed += 1;
                }
            }
        }
        summaries.push(ClusterSummary {
            cluster: m,
            size: members.len(),
            near_size,
            queries: ledger.cluster_query_count(m),
            trials,
            unanimous,
            top_k: top,
            exposed,
            codebook: book,
            skipped,
        });
    }
    log::info!(
        "exposure: {} nodes from {} clusters using {} queries",
        set.len(),
        summaries.iter().filter(|s| s.exposed > 0).count(),
        ledger.query_count()
    );
    Ok(ExposureOutcome {
        set,
        ledger,
        clusters: summaries,
    })
}
