use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, FeatureMatrix};
use crate::autodiff::{SparseOperator, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tag::TextAttributedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// LeakyReLU slope for negative inputs; `1.0` disables the nonlinearity.
    pub negative_slope: f64,
    /// Apply the nonlinearity after the second layer too (encoders do,
    /// classifiers emitting logits do not).
    pub final_activation: bool,
}

impl GcnConfig {
    pub fn encoder(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden_dim: 128,
            out_dim,
            negative_slope: 0.01,
            final_activation: true,
        }
    }
}

/// Two rounds of `Â · H · W + b` with `Â` the self-looped, symmetrically
/// normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcn {
    config: GcnConfig,
    params: ParamSet,
}

const NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl Gcn {
    pub fn new(config: GcnConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        params.push_xavier("w1", config.in_dim, config.hidden_dim, rng);
        params.push("b1", Array2::zeros((1, config.hidden_dim)));
        params.push_xavier("w2", config.hidden_dim, config.out_dim, rng);
        params.push("b2", Array2::zeros((1, config.out_dim)));
        Self { config, params }
    }

    /// Rebuilds from stored tensors named `w1, b1, w2, b2`.
    pub fn from_params(config: GcnConfig, stored: &ParamSet) -> Result<Self> {
        let expected = [
            (config.in_dim, config.hidden_dim),
            (1, config.hidden_dim),
            (config.hidden_dim, config.out_dim),
            (1, config.out_dim),
        ];
        let mut params = ParamSet::new();
        for (name, shape) in NAMES.iter().zip(expected) {
            let t = stored
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing GCN tensor {name}")))?;
            if t.dim() != shape {
                return Err(Error::Shape(format!("GCN tensor {name} is {:?}, expected {shape:?}", t.dim())));
            }
            params.push(*name, t.clone());
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the forward pass. `vars` are this model's parameters as tape
    /// leaves, in [`Gcn::params`] order.
    pub fn forward(&self, tape: &mut Tape, adj: &Rc<SparseOperator>, x: Var, vars: &[Var]) -> Var {
        let slope = self.config.negative_slope;
        let h = tape.matmul(x, vars[0]);
        let h = tape.spmm(adj, h);
        let h = tape.add_row(h, vars[1]);
        let h = tape.leaky_relu(h, slope);
        let h = tape.matmul(h, vars[2]);
        let h = tape.spmm(adj, h);
        let h = tape.add_row(h, vars[3]);
        if self.config.final_activation {
            tape.leaky_relu(h, slope)
        } else {
            h
        }
    }

    /// Inference-mode forward over the full graph.
    pub fn encode(&self, graph: &TextAttributedGraph, x: &FeatureMatrix) -> Result<EmbeddingMatrix> {
        check_features(graph, x, self.config.in_dim)?;
        let adj = SparseOperator::new(graph.sym_norm_adjacency());
        let mut tape = Tape::new();
        let xv = tape.leaf(x.as_array().clone());
        let vars: Vec<Var> = self.params.values().iter().map(|p| tape.leaf(p.clone())).collect();
        let z = self.forward(&mut tape, &adj, xv, &vars);
        EmbeddingMatrix::new(tape.value(z).clone())
    }
}

pub(crate) fn check_features(graph: &TextAttributedGraph, x: &FeatureMatrix, in_dim: usize) -> Result<()> {
    if x.rows() != graph.len() || x.dim() != in_dim {
        return Err(Error::Shape(format!(
            "features are {}x{}, expected {}x{}",
            x.rows(),
            x.dim(),
            graph.len(),
            in_dim
        )));
    }
    Ok(())
}
