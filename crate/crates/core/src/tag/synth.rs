//! Planted-partition text-attributed graphs for offline experiments.
//!
//! Each class owns a keyword list; a node's text is a short sentence mixing
//! keywords of its class with generic filler. Keywords may be shared between
//! classes (the default out-of-distribution topics borrow vocabulary from an
//! in-distribution topic), but every sentence contains at least one keyword
//! unique to its class whenever the class has one.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{NodeRecord, TextAttributedGraph};
use super::split::{make_ood_split, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Generator settings. The first `n_id_classes` templates are the
/// in-distribution classes, the remaining `n_ood_classes` are OOD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_id_classes: usize,
    pub n_ood_classes: usize,
    pub nodes_per_class: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub keyword_templates: Vec<ClassTemplate>,
    /// Keyword occurrences per sentence (at least one).
    pub keywords_per_text: usize,
    /// Filler words per sentence.
    pub filler_per_text: usize,
    pub domain_hint: String,
    pub seed: u64,
}

const TOPICS: &[(&str, &[&str])] = &[
    (
        "Neural Networks",
        &["neural", "neuron", "perceptron", "backpropagation", "network", "layer", "activation", "weights"],
    ),
    (
        "Case Based",
        &["case", "precedent", "analogy", "casebase", "retrieval", "similarity", "memory", "reuse"],
    ),
    (
        "Rule Learning",
        &["rule", "induction", "clause", "covering", "decision", "logic", "predicate", "pruning"],
    ),
    (
        "Genetic Algorithms",
        &["genetic", "evolutionary", "crossover", "mutation", "chromosome", "fitness", "population", "genome"],
    ),
    (
        "Reinforcement Learning",
        &["reinforcement", "reward", "policy", "agent", "qlearning", "exploration", "bellman", "episode"],
    ),
    (
        "Probabilistic Methods",
        &["bayesian", "markov", "posterior", "likelihood", "probability", "prior", "graphical", "sampling"],
    ),
    (
        "Theory",
        &["theorem", "lemma", "proof", "learnability", "vc", "bound", "complexity", "pac"],
    ),
];

const FILLER: &[&str] = &[
    "we", "study", "approach", "propose", "results", "paper", "method", "data", "experiments",
    "show", "based", "novel", "framework", "analysis", "performance", "using", "problem", "task",
    "evaluate", "model", "improve", "general", "efficient", "several",
];

/// How many keywords an OOD topic borrows from its paired ID topic.
const BORROWED: usize = 4;

impl SynthConfig {
    /// Default templates: Cora-like topics (the first `n_id` in-distribution),
    /// each OOD topic borrowing the tail of one ID topic's vocabulary.
    /// Beyond the seven built-in topics, synthetic `topic k` classes are added.
    pub fn new(n_id_classes: usize, n_ood_classes: usize, nodes_per_class: usize, seed: u64) -> Self {
        let total = n_id_classes + n_ood_classes;
        let mut templates: Vec<ClassTemplate> = (0..total)
            .map(|k| match TOPICS.get(k) {
                Some((name, kws)) => ClassTemplate {
                    name: name.to_string(),
                    keywords: kws.iter().map(|s| s.to_string()).collect(),
                },
                None => ClassTemplate {
                    name: format!("topic {k}"),
                    keywords: (0..8).map(|j| format!("t{k}w{j}")).collect(),
                },
            })
            .collect();
        if n_id_classes > 0 {
            for j in 0..n_ood_classes {
                let src = &templates[j % n_id_classes].keywords;
                let borrowed: Vec<String> = src[src.len().saturating_sub(BORROWED)..].to_vec();
                templates[n_id_classes + j].keywords.extend(borrowed);
            }
        }
        Self {
            n_id_classes,
            n_ood_classes,
            nodes_per_class,
            intra_p: 0.1,
            inter_p: 0.004,
            keyword_templates: templates,
            keywords_per_text: 4,
            filler_per_text: 5,
            domain_hint: "academic computer science".to_string(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_id_classes == 0 || self.n_ood_classes == 0 || self.nodes_per_class == 0 {
            return bad("synthetic class and node counts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.intra_p) || !(0.0..=1.0).contains(&self.inter_p) {
            return bad("edge probabilities must lie in [0, 1]".into());
        }
        if self.intra_p <= self.inter_p {
            return bad(format!(
                "intra_p ({}) must exceed inter_p ({})",
                self.intra_p, self.inter_p
            ));
        }
        if self.keyword_templates.len() != self.n_id_classes + self.n_ood_classes {
            return bad(format!(
                "{} keyword templates for {} classes",
                self.keyword_templates.len(),
                self.n_id_classes + self.n_ood_classes
            ));
        }
        if self.keywords_per_text == 0 {
            return bad("keywords_per_text must be at least 1".into());
        }
        let mut names = std::collections::HashSet::new();
        for t in &self.keyword_templates {
            if t.name.trim().is_empty() || !names.insert(t.name.as_str()) {
                return bad(format!("class name {:?} is empty or repeated", t.name));
            }
            if t.keywords.is_empty() || t.keywords.iter().any(|k| k.trim().is_empty()) {
                return bad(format!("class {} needs at least one non-empty keyword", t.name));
            }
        }
        Ok(())
    }

    pub fn id_classes(&self) -> Vec<String> {
        self.keyword_templates[..self.n_id_classes]
            .iter()
            .map(|t| t.name.clone())
            .collect()
    }

    pub fn ood_classes(&self) -> Vec<String> {
        self.keyword_templates[self.n_id_classes..]
            .iter()
            .map(|t| t.name.clone())
            .collect()
    }

    /// Keywords used by exactly one class, per class, in template order.
    pub fn unique_keywords(&self) -> Vec<Vec<String>> {
        let mut owners: HashMap<&str, usize> = HashMap::new();
        for t in &self.keyword_templates {
            let mut seen = std::collections::HashSet::new();
            for k in &t.keywords {
                if seen.insert(k.as_str()) {
                    *owners.entry(k.as_str()).or_default() += 1;
                }
            }
        }
        self.keyword_templates
            .iter()
            .map(|t| {
                let mut out: Vec<String> = Vec::new();
                for k in &t.keywords {
                    if owners[k.as_str()] == 1 && !out.contains(k) {
                        out.push(k.clone());
                    }
                }
                out
            })
            .collect()
    }

    /// `(keyword, class)` rules for a keyword-oracle backend: every unique
    /// keyword, lowercased, in class order.
    pub fn oracle_rules(&self) -> Vec<(String, String)> {
        self.unique_keywords()
            .into_iter()
            .zip(&self.keyword_templates)
            .flat_map(|(kws, t)| kws.into_iter().map(move |k| (k.to_lowercase(), t.name.clone())))
            .collect()
    }
}

fn sentence(rng: &mut ChaCha8Rng, keywords: &[String], unique: &[String], n_kw: usize, n_fill: usize) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(n_kw + n_fill);
    let first = if unique.is_empty() { keywords } else { unique };
    words.push(first.choose(rng).expect("non-empty keyword list"));
    for _ in 1..n_kw {
        words.push(keywords.choose(rng).expect("non-empty keyword list"));
    }
    for _ in 0..n_fill {
        words.push(FILLER.choose(rng).expect("filler"));
    }
    words.shuffle(rng);
    let mut s = words.join(" ");
    if let Some(c) = s.get(..1) {
        let upper = c.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

/// Generates the graph and its 60/20/20 ID split with OOD classes in `test_ood`.
pub fn synth_tag(config: &SynthConfig) -> Result<(TextAttributedGraph, SplitSpec)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unique = config.unique_keywords();
    let n_classes = config.keyword_templates.len();
    let n = n_classes * config.nodes_per_class;

    let mut nodes = Vec::with_capacity(n);
    let mut class_of = Vec::with_capacity(n);
    for (c, t) in config.keyword_templates.iter().enumerate() {
        for _ in 0..config.nodes_per_class {
            let text = sentence(
                &mut rng,
                &t.keywords,
                &unique[c],
                config.keywords_per_text,
                config.filler_per_text,
            );
            nodes.push(NodeRecord {
                id: format!("n{:05}", nodes.len()),
                text,
                label: Some(t.name.clone()),
            });
            class_of.push(c);
        }
    }

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if class_of[i] == class_of[j] {
                config.intra_p
            } else {
                config.inter_p
            };
            if rng.random::<f64>() < p {
                edges.push((nodes[i].id.clone(), nodes[j].id.clone()));
            }
        }
    }

    let (graph, _) = TextAttributedGraph::new(nodes, edges)?;
    let graph = graph.with_domain_hint(config.domain_hint.clone());
    let split = make_ood_split(&graph, &config.id_classes(), (0.6, 0.2, 0.2), config.seed)?;
    Ok((graph, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn every_text_contains_a_class_keyword() {
        let cfg = SynthConfig::new(3, 2, 20, 1);
        let (g, split) = synth_tag(&cfg).unwrap();
        assert_eq!(g.len(), 100);
        let unique = cfg.unique_keywords();
        for i in 0..g.len() {
            let c = cfg
                .keyword_templates
                .iter()
                .position(|t| Some(t.name.as_str()) == g.label(i))
                .unwrap();
            let w = words(g.text(i));
            assert!(unique[c].iter().any(|k| w.contains(k)), "{}", g.text(i));
        }
        assert_eq!(split.test_ood.len(), 40);
        split.validate(&g).unwrap();
    }

    #[test]
    fn extreme_probabilities_give_class_components() {
        let mut cfg = SynthConfig::new(2, 1, 6, 4);
        cfg.intra_p = 1.0;
        cfg.inter_p = 0.0;
        let (g, _) = synth_tag(&cfg).unwrap();
        let comps = g.connected_components();
        assert_eq!(comps.len(), 3);
        for comp in comps {
            let l = g.label(comp[0]);
            assert_eq!(comp.len(), 6);
            assert!(comp.iter().all(|&i| g.label(i) == l));
        }
        assert_eq!(g.edges().len(), 3 * 15);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::new(3, 2, 10, 9);
        let (a, sa) = synth_tag(&cfg).unwrap();
        let (b, sb) = synth_tag(&cfg).unwrap();
        assert_eq!(a.texts(), b.texts());
        assert_eq!(a.edges(), b.edges());
        assert_eq!(sa, sb);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let mut cfg = SynthConfig::new(1, 1, 3, 0);
        cfg.inter_p = cfg.intra_p;
        assert!(matches!(synth_tag(&cfg), Err(Error::Config(_))));
        let mut cfg = SynthConfig::new(1, 1, 3, 0);
        cfg.keyword_templates[1].keywords.clear();
        assert!(matches!(synth_tag(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_rules_skip_shared_words() {
        let cfg = SynthConfig::new(3, 2, 5, 0);
        let rules = cfg.oracle_rules();
        assert!(rules.iter().any(|(k, c)| k == "genetic" && c == "Genetic Algorithms"));
        // "weights" is borrowed by Genetic Algorithms from Neural Networks
        assert!(!rules.iter().any(|(k, _)| k == "weights"));
    }
}
