//! Node features and the two encoders: a 2-layer GCN over the graph and a
//! transformer over node text, both emitting `d`-dimensional rows.

mod checkpoint;
mod features;
mod gcn;
mod tokenizer;
mod transformer;

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use features::{fnv1a, hashed_bag_of_words, init_features, FeatureMethod};
pub(crate) use gcn::check_features;
pub use gcn::{Gcn, GcnConfig};
pub use tokenizer::{words, BpeTokenizer, CLS, PAD, UNK};
pub use transformer::{TextEncoder, TextEncoderConfig};

use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tag::TextAttributedGraph;

fn finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or infinity")))
    }
}

/// Node-aligned input features `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(pub(crate) Array2<f64>);

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        finite(&rows, "feature matrix")?;
        Ok(Self(rows))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Node- or batch-aligned embeddings (`Z` from the graph side, `H` from text).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(pub(crate) Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        finite(&rows, "embedding matrix")?;
        Ok(Self(rows))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self(self.0.select(ndarray::Axis(0), rows))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = ParamSet::new();
        tensors.push("embeddings", self.0.clone());
        Checkpoint {
            meta: serde_json::json!({ "kind": "embeddings" }),
            tensors,
            vocab: None,
        }
        .save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Checkpoint::load_kind(path, "embeddings")?;
        let t = c
            .tensors
            .by_name("embeddings")
            .ok_or_else(|| Error::Checkpoint("missing embeddings tensor".into()))?;
        Self::new(t.clone())
    }
}

/// `exp(τ)` at initialization.
pub const INITIAL_LOGIT_SCALE: f64 = 14.3;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EncoderMeta {
    kind: String,
    graph: GcnConfig,
    text: TextEncoderConfig,
    log_scale: f64,
    seed: u64,
}

/// Trainable state of both encoders plus the similarity temperature `τ`
/// (stored on log scale; similarities are multiplied by `exp(τ)`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub graph: Gcn,
    pub text: TextEncoder,
    pub log_scale: f64,
    pub seed: u64,
}

impl EncoderParams {
    /// Fresh encoders; the tokenizer is trained on `corpus`.
    pub fn init(graph: GcnConfig, text: TextEncoderConfig, corpus: &[String], seed: u64) -> Result<Self> {
        if graph.out_dim != text.out_dim {
            return Err(Error::Config(format!(
                "graph encoder emits {} dims but text encoder emits {}",
                graph.out_dim, text.out_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokenizer = BpeTokenizer::train(corpus, text.vocab_size, text.max_len);
        let graph = Gcn::new(graph, &mut rng);
        let text = TextEncoder::new(text, tokenizer, &mut rng)?;
        Ok(Self {
            graph,
            text,
            log_scale: INITIAL_LOGIT_SCALE.ln(),
            seed,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.graph.config().out_dim
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = ParamSet::new();
        for (n, t) in self.graph.params().iter() {
            tensors.push(format!("graph.{n}"), t.clone());
        }
        for (n, t) in self.text.params().iter() {
            tensors.push(format!("text.{n}"), t.clone());
        }
        let meta = EncoderMeta {
            kind: "encoder".into(),
            graph: *self.graph.config(),
            text: *self.text.config(),
            log_scale: self.log_scale,
            seed: self.seed,
        };
        Checkpoint {
            meta: serde_json::to_value(meta).expect("meta serializes"),
            tensors,
            vocab: Some(self.text.tokenizer().to_json()),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta: EncoderMeta = serde_json::from_value(c.meta.clone())?;
        if meta.kind != "encoder" {
            return Err(Error::Checkpoint(format!("expected an encoder checkpoint, found {}", meta.kind)));
        }
        let vocab = c
            .vocab
            .as_deref()
            .ok_or_else(|| Error::Checkpoint("encoder checkpoint lacks a vocabulary".into()))?;
        let tokenizer = BpeTokenizer::from_json(vocab)?;
        let part = |prefix: &str| {
            let mut p = ParamSet::new();
            for (n, t) in c.tensors.iter() {
                if let Some(rest) = n.strip_prefix(prefix) {
                    p.push(rest, t.clone());
                }
            }
            p
        };
        Ok(Self {
            graph: Gcn::from_params(meta.graph, &part("graph."))?,
            text: TextEncoder::from_params(meta.text, tokenizer, &part("text."))?,
            log_scale: meta.log_scale,
            seed: meta.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Graph embeddings `Z`, one row per node.
pub fn graph_encode(graph: &TextAttributedGraph, x: &FeatureMatrix, params: &EncoderParams) -> Result<EmbeddingMatrix> {
    params.graph.encode(graph, x)
}

/// Text embeddings `H`, one row per text.
pub fn text_encode(texts: &[String], params: &EncoderParams) -> EmbeddingMatrix {
    params.text.encode(texts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_checkpoint_round_trip() {
        let corpus: Vec<String> = vec!["alpha beta".into(), "beta gamma delta".into()];
        let mut text = TextEncoderConfig::small();
        text.out_dim = 8;
        text.width = 8;
        let params = EncoderParams::init(GcnConfig::encoder(16, 8), text, &corpus, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        params.save(&path).unwrap();
        let back = EncoderParams::load(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(text_encode(&corpus, &back), text_encode(&corpus, &params));
    }

    #[test]
    fn mismatched_output_dims_rejected() {
        let text = TextEncoderConfig::small();
        let err = EncoderParams::init(GcnConfig::encoder(4, 7), text, &[], 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
