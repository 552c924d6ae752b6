//! OOD scoring on top of a GCN classifier: MSP and energy scores, graph
//! propagation of scores, and the exposure-driven score regularizer.
//!
//! Scores follow one convention throughout: higher means more OOD.

mod scores;
mod train;

pub use scores::{
    detect, energy_score, msp_score, propagate_scores, regularization_loss, regularization_loss_grad, Decision, Logits,
    Propagation, ScoreTransform, ScoreVector, Scorer,
};
pub use train::{train_detector, DetectorConfig, DetectorEpoch, DetectorInput, DetectorModel, DetectorRun};
