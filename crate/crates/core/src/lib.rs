//! Plug-and-play out-of-distribution node detection for text-attributed graphs.
//!
//! The pipeline has four parts:
//!
//! * [`embedding`] and [`alignment`]: a graph encoder and a text encoder
//!   trained so that each node's topological and textual views agree.
//! * [`exposure`]: clustering of the aligned embeddings and consensus-filtered
//!   LLM annotation of near-centroid nodes, yielding pseudo-OOD exposure nodes.
//! * [`detect`]: baseline scorers (MSP, energy, propagated energy) plus the
//!   margin regularizer that plugs the exposure set into detector training.
//! * [`eval`]: AUROC / FPR95 and score-density reports.
//!
//! [`pipeline`] wires the stages together with persisted artifacts and a
//! manifest; [`llm`] abstracts the annotation backend.

pub mod alignment;
pub mod autodiff;
pub mod detect;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod exposure;
pub mod llm;
pub mod optim;
pub mod pipeline;
pub mod sparse;
pub mod tag;

pub use error::{Error, Result};
