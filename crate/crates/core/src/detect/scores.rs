use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_rows;
use crate::error::{Error, Result};
use crate::tag::TextAttributedGraph;

/// Classifier outputs, one row per node over the ID classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Array2<f64>);

impl Logits {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(Error::Shape("logits need at least one class".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Self(rows))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    /// Arg-max class per row; ties go to the lower index.
    pub fn predictions(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                    .0
            })
            .collect()
    }
}

/// Per-node OOD scores; larger means more OOD-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score of node {i} is {}", scores[i])));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn select(&self, nodes: &[usize]) -> Vec<f64> {
        nodes.iter().map(|&i| self.0[i]).collect()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Two-column CSV `node_id,score` in graph order.
    pub fn write_csv(&self, graph: &TextAttributedGraph, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.len() != graph.len() {
            return Err(Error::Shape(format!("{} scores for {} nodes", self.len(), graph.len())));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node_id", "score"])?;
        for (id, s) in graph.node_ids().iter().zip(&self.0) {
            w.write_record([id.as_str(), &format!("{s:?}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a file written by [`ScoreVector::write_csv`]; every node of
    /// `graph` must appear exactly once.
    pub fn read_csv(graph: &TextAttributedGraph, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut scores = vec![None; graph.len()];
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |message: String| Error::Parse {
                path: path.display().to_string(),
                line: k + 2,
                message,
            };
            let (id, raw) = match (rec.get(0), rec.get(1)) {
                (Some(id), Some(raw)) => (id, raw),
                _ => return Err(parse_err("expected node_id,score".into())),
            };
            let i = graph.index_of(id).ok_or_else(|| parse_err(format!("unknown node {id}")))?;
            let s: f64 = raw.parse().map_err(|_| parse_err(format!("bad score {raw:?}")))?;
            if scores[i].replace(s).is_some() {
                return Err(parse_err(format!("node {id} listed twice")));
            }
        }
        let scores = scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Integrity(format!("no score for node {}", graph.node_id(i)))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scores)
    }
}

/// Base scoring function applied to logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Msp,
    Energy,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(Self::Msp),
            "energy" => Ok(Self::Energy),
            other => Err(Error::Config(format!("unknown scorer {other:?}; expected msp or energy"))),
        }
    }
}

/// Negative maximum softmax probability.
pub fn msp_score(logits: &Logits) -> ScoreVector {
    let p = softmax_rows(logits.as_array());
    ScoreVector(p.rows().into_iter().map(|r| -r.fold(0.0, |a: f64, &b| a.max(b))).collect())
}

/// `−T · log Σ_c exp(x_c / T)` per row.
pub fn energy_score(logits: &Logits, temperature: f64) -> Result<ScoreVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("energy temperature must be positive, got {temperature}")));
    }
    let s = logits
        .as_array()
        .rows()
        .into_iter()
        .map(|r| {
            let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = r.iter().map(|&v| ((v - m) / temperature).exp()).sum();
            -(m + temperature * sum.ln())
        })
        .collect();
    ScoreVector::new(s)
}

/// `k_hops` rounds of `s ← α·s + (1−α)·D⁻¹(A+I)·s`.
pub fn propagate_scores(scores: &ScoreVector, graph: &TextAttributedGraph, alpha: f64, k_hops: usize) -> Result<ScoreVector> {
    if scores.len() != graph.len() {
        return Err(Error::Shape(format!("{} scores for {} nodes", scores.len(), graph.len())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("propagation alpha must lie in [0, 1], got {alpha}")));
    }
    let p = graph.row_norm_adjacency();
    let mut s = scores.0.clone();
    for _ in 0..k_hops {
        let ps = p.matvec(&s);
        for (v, q) in s.iter_mut().zip(ps) {
            *v = alpha * *v + (1.0 - alpha) * q;
        }
    }
    ScoreVector::new(s)
}

/// A post-processing step on scores; lets external methods plug in after
/// the base scorer.
pub trait ScoreTransform {
    fn apply(&self, scores: &ScoreVector, graph: &TextAttributedGraph) -> Result<ScoreVector>;
}

/// [`propagate_scores`] as a [`ScoreTransform`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagation {
    pub alpha: f64,
    pub k_hops: usize,
}

impl ScoreTransform for Propagation {
    fn apply(&self, scores: &ScoreVector, graph: &TextAttributedGraph) -> Result<ScoreVector> {
        propagate_scores(scores, graph, self.alpha, self.k_hops)
    }
}

fn check_margins(delta1: f64, delta2: f64) -> Result<()> {
    if !(delta1 <= delta2) {
        return Err(Error::Config(format!("margins need delta1 <= delta2, got {delta1} > {delta2}")));
    }
    Ok(())
}

/// `mean_id relu(s − Δ1)² + mean_exp relu(Δ2 − s)²`. With no exposed
/// nodes only the ID term remains.
pub fn regularization_loss(scores_id: &[f64], scores_exp: &[f64], delta1: f64, delta2: f64) -> Result<f64> {
    regularization_loss_grad(scores_id, scores_exp, delta1, delta2).map(|(l, _, _)| l)
}

/// The loss together with its derivative with respect to each score.
pub fn regularization_loss_grad(
    scores_id: &[f64],
    scores_exp: &[f64],
    delta1: f64,
    delta2: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_margins(delta1, delta2)?;
    if scores_id.is_empty() {
        return Err(Error::Config("regularization needs at least one ID score".into()));
    }
    if scores_exp.is_empty() {
        log::warn!("no exposed nodes; score regularization keeps only the ID term");
    }
    let n_id = scores_id.len() as f64;
    let mut loss = 0.0;
    let mut g_id = Vec::with_capacity(scores_id.len());
    for &s in scores_id {
        let r = (s - delta1).max(0.0);
        loss += r * r / n_id;
        g_id.push(2.0 * r / n_id);
    }
    let mut g_exp = Vec::with_capacity(scores_exp.len());
    if !scores_exp.is_empty() {
        let n_exp = scores_exp.len() as f64;
        for &s in scores_exp {
            let r = (delta2 - s).max(0.0);
            loss += r * r / n_exp;
            g_exp.push(-2.0 * r / n_exp);
        }
    }
    Ok((loss, g_id, g_exp))
}

/// Final call for a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Id,
    Ood,
}

/// OOD iff score exceeds `threshold`, for each node in `nodes`.
pub fn detect(scores: &ScoreVector, nodes: &[usize], threshold: f64) -> Vec<Decision> {
    nodes
        .iter()
        .map(|&i| if scores.0[i] > threshold { Decision::Ood } else { Decision::Id })
        .collect()
}
