use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{edge_loss_normalized, node_alignment_loss_grad, SimilarityMatrix};
use crate::autodiff::{SparseOperator, Tape, Var};
use crate::embedding::{check_features, EncoderParams, FeatureMatrix, GcnConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, ParamSet};
use crate::tag::TextAttributedGraph;

/// Upper bound on the similarity scale `exp(τ)`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    /// Weight of the edge loss.
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Minimum validation improvement that resets the patience counter.
    pub convergence_tol: f64,
    /// Epochs without such an improvement before stopping.
    pub patience: usize,
    /// Share of nodes held out of the batches and used for the validation loss.
    pub val_fraction: f64,
    pub graph_hidden: usize,
    /// Text encoder shape; its `out_dim` is the shared embedding width.
    pub text: TextEncoderConfig,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            batch_size: 64,
            learning_rate: 2e-5,
            weight_decay: 5e-4,
            max_epochs: 100,
            convergence_tol: 1e-4,
            patience: 10,
            val_fraction: 0.1,
            graph_hidden: 128,
            text: TextEncoderConfig::default(),
            seed: 0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("alignment: {m}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite value >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 || self.convergence_tol < 0.0 {
            return bad("weight_decay and convergence_tol must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.max_epochs == 0 || self.graph_hidden == 0 {
            return bad("max_epochs and graph_hidden must be positive");
        }
        Ok(())
    }
}

/// One line of the loss curve. Training terms are batch means over the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_node: f64,
    pub l_edge: f64,
    pub total: f64,
    pub val_loss: f64,
    pub logit_scale: f64,
}

#[derive(Debug, Clone)]
pub struct AlignmentRun {
    /// Parameters at the best validation loss.
    pub params: EncoderParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl AlignmentRun {
    /// Writes the loss curve as JSON lines.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for r in &self.history {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct BatchLoss {
    l_node: f64,
    l_edge: f64,
    total: f64,
    grads: Option<Vec<Array2<f64>>>,
}

struct Trainer<'a> {
    graph: &'a TextAttributedGraph,
    x: &'a FeatureMatrix,
    adj: Rc<SparseOperator>,
    tokens: Vec<Vec<u32>>,
    model: EncoderParams,
    n_graph: usize,
    lambda: f64,
}

impl Trainer<'_> {
    /// Loss on the nodes in `batch`, with parameter gradients when requested.
    /// `flat` holds graph tensors, then text tensors, then the 1×1 `τ`.
    fn batch(&self, flat: &ParamSet, batch: &[usize], pos: &mut [usize], want_grads: bool) -> BatchLoss {
        let mut tape = Tape::new();
        let vars: Vec<Var> = flat.values().iter().map(|p| tape.leaf(p.clone())).collect();
        let (gv, rest) = vars.split_at(self.n_graph);
        let (tv, tau) = rest.split_at(rest.len() - 1);

        let xv = tape.leaf(self.x.as_array().clone());
        let z = self.model.graph.forward(&mut tape, &self.adj, xv, gv);
        let z = tape.gather(z, Rc::new(batch.to_vec()));
        let zt = tape.row_normalize(z);
        let seqs: Vec<&[u32]> = batch.iter().map(|&i| self.tokens[i].as_slice()).collect();
        let h = self.model.text.forward(&mut tape, &seqs, tv);
        let ht = tape.row_normalize(h);
        let s = tape.matmul_t(zt, ht);
        let l1 = tape.scale_by_exp(s, tau[0]);

        let sim = SimilarityMatrix(tape.value(l1).clone());
        let (l_node, g_l1) = node_alignment_loss_grad(&sim).expect("batch similarity is square");

        for (k, &i) in batch.iter().enumerate() {
            pos[i] = k + 1;
        }
        let mut edges = Vec::new();
        for (k, &i) in batch.iter().enumerate() {
            for &j in self.graph.neighbors(i) {
                if j > i && pos[j] > 0 {
                    edges.push((k, pos[j] - 1));
                }
            }
        }
        for &i in batch {
            pos[i] = 0;
        }
        let (l_edge, gz, gh) = edge_loss_normalized(tape.value(zt), tape.value(ht), &edges);
        let total = l_node + self.lambda * l_edge;

        let grads = want_grads.then(|| {
            let mut local = vec![(l1, g_l1)];
            if self.lambda != 0.0 && !edges.is_empty() {
                local.push((zt, gz * self.lambda));
                local.push((ht, gh * self.lambda));
            }
            let out = tape.scalar_with_grads(total, local);
            let mut g = tape.backward(out);
            vars.iter().zip(flat.values()).map(|(&v, p)| g.take_or_zeros(v, p)).collect()
        });
        BatchLoss {
            l_node,
            l_edge,
            total,
            grads,
        }
    }

    fn unflatten(&self, flat: &ParamSet) -> EncoderParams {
        let mut out = self.model.clone();
        let n_text = out.text.params().len();
        for k in 0..self.n_graph {
            *out.graph.params_mut().get_mut(k) = flat.get(k).clone();
        }
        for k in 0..n_text {
            *out.text.params_mut().get_mut(k) = flat.get(self.n_graph + k).clone();
        }
        out.log_scale = flat.get(flat.len() - 1)[[0, 0]];
        out
    }
}

/// Jointly trains both encoders and `τ` on `L_node + λ·L_edge` with Adam.
///
/// Nodes are split once into a training part, sampled into batches without
/// replacement each epoch, and a held-out validation part whose full-batch
/// loss selects the returned parameters and drives early stopping. When the
/// held-out part would have fewer than two nodes the epoch's mean training
/// loss is used instead.
pub fn train_alignment(graph: &TextAttributedGraph, x: &FeatureMatrix, config: &AlignmentConfig) -> Result<AlignmentRun> {
    config.validate()?;
    let n = graph.len();
    if n < 2 {
        return Err(Error::Config(format!("alignment needs at least 2 nodes, graph has {n}")));
    }
    check_features(graph, x, x.dim())?;

    let graph_config = GcnConfig {
        in_dim: x.dim(),
        hidden_dim: config.graph_hidden,
        out_dim: config.text.out_dim,
        negative_slope: 0.01,
        final_activation: true,
    };
    let model = EncoderParams::init(graph_config, config.text, graph.texts(), config.seed)?;
    let tokens: Vec<Vec<u32>> = graph.texts().iter().map(|t| model.text.tokenize(t)).collect();

    let mut flat = ParamSet::new();
    for (name, t) in model.graph.params().iter() {
        flat.push(format!("graph.{name}"), t.clone());
    }
    for (name, t) in model.text.params().iter() {
        flat.push(format!("text.{name}"), t.clone());
    }
    let tau_slot = flat.push("tau", Array2::from_elem((1, 1), model.log_scale));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa11_9e);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut n_val = (config.val_fraction * n as f64).round() as usize;
    if n_val < 2 || n - n_val < 2 {
        n_val = 0;
    }
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();

    let trainer = Trainer {
        graph,
        x,
        adj: SparseOperator::new(graph.sym_norm_adjacency()),
        tokens,
        n_graph: model.graph.params().len(),
        model,
        lambda: config.lambda,
    };
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate, config.weight_decay), &flat);
    let max_tau = MAX_LOGIT_SCALE.ln();
    let mut pos = vec![0usize; n];

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, flat.clone());
    let mut plateau_ref = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        train.shuffle(&mut rng);
        let (mut sn, mut se, mut st, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in train.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let b = trainer.batch(&flat, chunk, &mut pos, true);
            if !b.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "alignment loss became {} at epoch {epoch} (node {}, edge {})",
                    b.total, b.l_node, b.l_edge
                )));
            }
            adam.step(&mut flat, &b.grads.expect("requested"));
            let tau = flat.get_mut(tau_slot);
            tau[[0, 0]] = tau[[0, 0]].min(max_tau);
            if !flat.all_finite() {
                return Err(Error::NonFinite(format!("parameters became non-finite at epoch {epoch}")));
            }
            sn += b.l_node;
            se += b.l_edge;
            st += b.total;
            batches += 1;
        }
        let k = batches.max(1) as f64;
        let mean_total = st / k;
        let val_loss = if val.is_empty() {
            mean_total
        } else {
            trainer.batch(&flat, &val, &mut pos, false).total
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss became {val_loss} at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            l_node: sn / k,
            l_edge: se / k,
            total: mean_total,
            val_loss,
            logit_scale: flat.get(tau_slot)[[0, 0]].exp(),
        };
        log::info!(
            "align epoch {epoch}: node {:.5} edge {:.5} total {:.5} val {:.5}",
            record.l_node,
            record.l_edge,
            record.total,
            record.val_loss
        );
        history.push(record);

        if val_loss < best.0 {
            best = (val_loss, epoch, flat.clone());
        }
        if val_loss < plateau_ref - config.convergence_tol {
            plateau_ref = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("alignment converged after {epoch} epochs");
                break;
            }
        }
    }

    Ok(AlignmentRun {
        params: trainer.unflatten(&best.2),
        history,
        best_epoch: best.1,
    })
}
