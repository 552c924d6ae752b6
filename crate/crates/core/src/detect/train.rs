use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scores::{
    energy_score, msp_score, propagate_scores, regularization_loss_grad, Logits, ScoreVector, Scorer,
};
use crate::autodiff::{softmax_rows, SparseOperator, Tape, Var};
use crate::embedding::{Checkpoint, FeatureMatrix, Gcn, GcnConfig};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::tag::{SplitSpec, TextAttributedGraph};

/// Which node matrix the classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorInput {
    /// The raw features `X`.
    Features,
    /// The aligned graph embeddings `Z`.
    Embeddings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub scorer: Scorer,
    /// Energy temperature.
    pub temperature: f64,
    /// Propagate scores over the graph before thresholding.
    pub propagate: bool,
    /// Self-weight of each propagation round.
    pub alpha: f64,
    pub k_hops: usize,
    /// Upper margin for ID scores.
    pub delta1: f64,
    /// Lower margin for exposed scores.
    pub delta2: f64,
    /// Weight of the score regularizer; 0 trains the plain classifier.
    pub beta: f64,
    /// Regularize propagated rather than raw scores.
    pub regularize_propagated: bool,
    pub input: DetectorInput,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a better validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            scorer: Scorer::Energy,
            temperature: 1.0,
            propagate: true,
            alpha: 0.5,
            k_hops: 2,
            delta1: -5.0,
            delta2: -1.0,
            beta: 1.0,
            regularize_propagated: false,
            input: DetectorInput::Features,
            hidden_dim: 64,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 100,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("detector: {m}")));
        if !(self.delta1 <= self.delta2) {
            return bad(format!("delta1 {} exceeds delta2 {}", self.delta1, self.delta2));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.temperature > 0.0) || !(self.learning_rate > 0.0) {
            return bad("temperature and learning_rate must be positive".into());
        }
        if self.hidden_dim == 0 || self.max_epochs == 0 {
            return bad("hidden_dim and max_epochs must be positive".into());
        }
        Ok(())
    }
}

/// Trained ID classifier plus the scoring recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub gcn: Gcn,
    pub config: DetectorConfig,
    pub classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    kind: String,
    gcn: GcnConfig,
    config: DetectorConfig,
    classes: Vec<String>,
}

impl DetectorModel {
    pub fn logits(&self, graph: &TextAttributedGraph, x: &FeatureMatrix) -> Result<Logits> {
        Logits::new(self.gcn.encode(graph, x)?.into_inner())
    }

    /// Base scores before any propagation.
    pub fn raw_scores(&self, graph: &TextAttributedGraph, x: &FeatureMatrix) -> Result<ScoreVector> {
        let logits = self.logits(graph, x)?;
        match self.config.scorer {
            Scorer::Msp => Ok(msp_score(&logits)),
            Scorer::Energy => energy_score(&logits, self.config.temperature),
        }
    }

    /// Scores used for detection: base scores, propagated when configured.
    pub fn scores(&self, graph: &TextAttributedGraph, x: &FeatureMatrix) -> Result<ScoreVector> {
        let raw = self.raw_scores(graph, x)?;
        if self.config.propagate {
            propagate_scores(&raw, graph, self.config.alpha, self.config.k_hops)
        } else {
            Ok(raw)
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = DetectorMeta {
            kind: "detector".into(),
            gcn: *self.gcn.config(),
            config: self.config,
            classes: self.classes.clone(),
        };
        Checkpoint {
            meta: serde_json::to_value(meta).expect("meta serializes"),
            tensors: self.gcn.params().clone(),
            vocab: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Checkpoint::load_kind(path, "detector")?;
        let meta: DetectorMeta = serde_json::from_value(c.meta)?;
        Ok(Self {
            gcn: Gcn::from_params(meta.gcn, &c.tensors)?,
            config: meta.config,
            classes: meta.classes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub l_sup: f64,
    pub l_reg: f64,
    pub total: f64,
    pub val_sup: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct DetectorRun {
    pub model: DetectorModel,
    pub history: Vec<DetectorEpoch>,
    pub best_epoch: usize,
}

fn cross_entropy(logits: &Array2<f64>, nodes: &[usize], targets: &[usize]) -> (f64, Array2<f64>, f64) {
    let mut grad = Array2::zeros(logits.dim());
    if nodes.is_empty() {
        return (0.0, grad, 0.0);
    }
    let rows = logits.select(ndarray::Axis(0), nodes);
    let p = softmax_rows(&rows);
    let n = nodes.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (k, (&i, &t)) in nodes.iter().zip(targets).enumerate() {
        loss -= p[[k, t]].max(f64::MIN_POSITIVE).ln();
        let pred = p.row(k).iter().enumerate().fold((0, -1.0), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0;
        if pred == t {
            correct += 1;
        }
        for c in 0..p.ncols() {
            grad[[i, c]] = (p[[k, c]] - if c == t { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad, correct as f64 / n)
}

fn targets(graph: &TextAttributedGraph, split: &SplitSpec, nodes: &[usize]) -> Result<Vec<usize>> {
    nodes
        .iter()
        .map(|&i| {
            graph
                .label(i)
                .and_then(|l| split.class_index(l))
                .ok_or_else(|| Error::Integrity(format!("node {} has no ID label", graph.node_id(i))))
        })
        .collect()
}

/// Trains a 2-layer GCN over the ID classes on cross-entropy over the train
/// nodes plus `β` times the score regularizer over train nodes and `exposed`.
///
/// One full-batch Adam step per epoch. The returned model is the one with the
/// lowest validation cross-entropy. With `β = 0` the regularizer is never
/// evaluated, so training is exactly the plain classifier's.
pub fn train_detector(
    graph: &TextAttributedGraph,
    x: &FeatureMatrix,
    split: &SplitSpec,
    exposed: &[usize],
    config: &DetectorConfig,
) -> Result<DetectorRun> {
    config.validate()?;
    let idx = split.indices(graph)?;
    if idx.train.is_empty() {
        return Err(Error::EmptyId);
    }
    if config.beta > 0.0 && exposed.is_empty() {
        return Err(Error::Config("beta > 0 requires a non-empty exposure set".into()));
    }
    if x.rows() != graph.len() {
        return Err(Error::Shape(format!("{} feature rows for {} nodes", x.rows(), graph.len())));
    }
    let train_t = targets(graph, split, &idx.train)?;
    let val_t = targets(graph, split, &idx.val)?;

    let gcn_config = GcnConfig {
        in_dim: x.dim(),
        hidden_dim: config.hidden_dim,
        out_dim: split.id_classes.len(),
        negative_slope: 0.01,
        final_activation: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gcn = Gcn::new(gcn_config, &mut rng);
    let adj = SparseOperator::new(graph.sym_norm_adjacency());
    let prop = (config.beta > 0.0 && config.regularize_propagated)
        .then(|| SparseOperator::new(graph.row_norm_adjacency()));
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate, config.weight_decay), gcn.params());

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, gcn.clone());
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.as_array().clone());
        let vars: Vec<Var> = gcn.params().values().iter().map(|p| tape.leaf(p.clone())).collect();
        let logits = gcn.forward(&mut tape, &adj, xv, &vars);

        let (l_sup, g_sup, _) = cross_entropy(tape.value(logits), &idx.train, &train_t);
        let (val_sup, _, val_acc) = cross_entropy(tape.value(logits), &idx.val, &val_t);
        let mut local = vec![(logits, g_sup)];
        let mut l_reg = 0.0;
        if config.beta > 0.0 {
            let mut s = match config.scorer {
                Scorer::Energy => tape.energy(logits, config.temperature),
                Scorer::Msp => tape.msp(logits),
            };
            if let Some(p) = &prop {
                for _ in 0..config.k_hops {
                    let keep = tape.scale(s, config.alpha);
                    let mixed = tape.spmm(p, s);
                    let mixed = tape.scale(mixed, 1.0 - config.alpha);
                    s = tape.add(keep, mixed);
                }
            }
            let sv = tape.value(s);
            let sid: Vec<f64> = idx.train.iter().map(|&i| sv[[i, 0]]).collect();
            let sexp: Vec<f64> = exposed.iter().map(|&i| sv[[i, 0]]).collect();
            let (l, g_id, g_exp) = regularization_loss_grad(&sid, &sexp, config.delta1, config.delta2)?;
            l_reg = l;
            let mut g = Array2::zeros((graph.len(), 1));
            for (&i, gi) in idx.train.iter().zip(g_id) {
                g[[i, 0]] += config.beta * gi;
            }
            for (&i, gi) in exposed.iter().zip(g_exp) {
                g[[i, 0]] += config.beta * gi;
            }
            local.push((s, g));
        }
        let total = l_sup + config.beta * l_reg;
        if !total.is_finite() || !val_sup.is_finite() {
            return Err(Error::NonFinite(format!("detector loss became {total} at epoch {epoch}")));
        }
        history.push(DetectorEpoch {
            epoch,
            l_sup,
            l_reg,
            total,
            val_sup,
            val_acc,
        });

        // the logits above came from the current parameters, so the
        // validation loss belongs to this state
        if val_sup < best.0 {
            best = (val_sup, epoch, gcn.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }

        let out = tape.scalar_with_grads(total, local);
        let mut grads = tape.backward(out);
        let g: Vec<Array2<f64>> = vars
            .iter()
            .zip(gcn.params().values())
            .map(|(&v, p)| grads.take_or_zeros(v, p))
            .collect();
        adam.step(gcn.params_mut(), &g);
        if !gcn.params().all_finite() {
            return Err(Error::NonFinite(format!("detector parameters became non-finite at epoch {epoch}")));
        }
    }
    Ok(DetectorRun {
        model: DetectorModel {
            gcn: best.2,
            config: *config,
            classes: split.id_classes.clone(),
        },
        history,
        best_epoch: best.1,
    })
}
