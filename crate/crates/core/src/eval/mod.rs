//! Detection metrics and evaluation reports.
//!
//! Scores are OOD scores (higher means more OOD). A node is called ID when its
//! score is at or below the threshold. Candidate thresholds are the observed
//! scores, so every number here can be reproduced by brute force.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::ScoreVector;
use crate::error::{Error, Result};
use crate::tag::{SplitSpec, TextAttributedGraph};

fn partition(scores: &[f64], is_ood: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != is_ood.len() {
        return Err(Error::Shape(format!("{} scores for {} flags", scores.len(), is_ood.len())));
    }
    let (mut id, mut ood) = (Vec::new(), Vec::new());
    for (&s, &o) in scores.iter().zip(is_ood) {
        if o {
            ood.push(s)
        } else {
            id.push(s)
        }
    }
    if id.is_empty() || ood.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "need both ID and OOD nodes, got {} ID and {} OOD",
            id.len(),
            ood.len()
        )));
    }
    Ok((id, ood))
}

/// Probability that a random OOD node outscores a random ID node, ties
/// counted one half.
pub fn auroc(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    let (mut id, mut ood) = partition(scores, is_ood)?;
    id.sort_by(f64::total_cmp);
    ood.sort_by(f64::total_cmp);
    // for each OOD score, count ID scores strictly below and equal via a merge
    let (mut below, mut upto) = (0usize, 0usize);
    let mut wins = 0.0;
    for &s in &ood {
        while below < id.len() && id[below] < s {
            below += 1;
        }
        upto = upto.max(below);
        while upto < id.len() && id[upto] <= s {
            upto += 1;
        }
        wins += below as f64 + 0.5 * (upto - below) as f64;
    }
    Ok(wins / (id.len() as f64 * ood.len() as f64))
}

/// FPR at a fixed ID true-positive rate.
///
/// Returns `(fpr, threshold)` where `threshold` is the smallest observed score
/// that keeps at least `tpr_target` of ID nodes at or below it, and `fpr` is
/// the share of OOD nodes also at or below it.
pub fn fpr_at_tpr(scores: &[f64], is_ood: &[bool], tpr_target: f64) -> Result<(f64, f64)> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Config(format!("tpr target must lie in (0, 1], got {tpr_target}")));
    }
    let (mut id, ood) = partition(scores, is_ood)?;
    id.sort_by(f64::total_cmp);
    let need = ((tpr_target * id.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = id[need.min(id.len()) - 1];
    let fp = ood.iter().filter(|&&s| s <= threshold).count();
    Ok((fp as f64 / ood.len() as f64, threshold))
}

/// Equal-width histogram over a shared range; each series' masses sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub id: Vec<f64>,
    pub ood: Vec<f64>,
}

impl Histogram {
    /// Bins `id` and `ood` over `[min, max]` of their union.
    pub fn new(id: &[f64], ood: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let all = id.iter().chain(ood);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::UndefinedMetric("histogram of no scores".into()));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();
        let bin = |s: f64| -> usize {
            if width == 0.0 {
                0
            } else {
                (((s - lo) / width) as usize).min(bins - 1)
            }
        };
        let mass = |xs: &[f64]| {
            let mut h = vec![0.0; bins];
            for &s in xs {
                h[bin(s)] += 1.0;
            }
            let n = xs.len().max(1) as f64;
            h.iter().map(|c| c / n).collect::<Vec<_>>()
        };
        Ok(Self {
            edges,
            id: mass(id),
            ood: mass(ood),
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Writes `bin_center,id_density,ood_density` rows, where each density is
    /// the bin's share of its series.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_center", "id_density", "ood_density"])?;
        for ((c, i), o) in self.centers().iter().zip(&self.id).zip(&self.ood) {
            w.write_record([c.to_string(), i.to_string(), o.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold_at_tpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub histogram: Histogram,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Test-node scores split into ID and OOD series.
pub fn test_scores(scores: &ScoreVector, graph: &TextAttributedGraph, split: &SplitSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != graph.len() {
        return Err(Error::Shape(format!("{} scores for {} nodes", scores.len(), graph.len())));
    }
    let idx = split.indices(graph)?;
    let s = scores.as_slice();
    Ok((idx.test_id.iter().map(|&i| s[i]).collect(), idx.test_ood.iter().map(|&i| s[i]).collect()))
}

/// AUROC, FPR95 and score histograms over the test partition.
pub fn evaluate(scores: &ScoreVector, graph: &TextAttributedGraph, split: &SplitSpec, bins: usize) -> Result<EvalReport> {
    let (id, ood) = test_scores(scores, graph, split)?;
    if id.is_empty() && ood.is_empty() {
        return Err(Error::UndefinedMetric("the test partition is empty".into()));
    }
    let flat: Vec<f64> = id.iter().chain(&ood).copied().collect();
    let flags: Vec<bool> = (0..flat.len()).map(|k| k >= id.len()).collect();
    let auroc = auroc(&flat, &flags)?;
    let (fpr95, threshold_at_tpr95) = fpr_at_tpr(&flat, &flags, 0.95)?;
    Ok(EvalReport {
        auroc,
        fpr95,
        threshold_at_tpr95,
        n_id: id.len(),
        n_ood: ood.len(),
        histogram: Histogram::new(&id, &ood, bins)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(id: usize, ood: usize) -> Vec<bool> {
        (0..id + ood).map(|k| k >= id).collect()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[1.0, 2.0, 5.0, 6.0], &flags(2, 2)).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0; 5], &flags(2, 3)).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 3.0, 2.0, 4.0], &flags(2, 2)).unwrap(), 0.75);
        assert!(matches!(auroc(&[1.0, 2.0], &[false, false]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn fpr_examples() {
        let mut s: Vec<f64> = (1..=20).map(f64::from).collect();
        s.extend([10.0, 18.0, 25.0, 30.0]);
        assert_eq!(fpr_at_tpr(&s, &flags(20, 4), 0.95).unwrap(), (0.5, 19.0));
        assert_eq!(fpr_at_tpr(&[1.0, 2.0, 3.0, 4.0], &flags(2, 2), 0.95).unwrap().0, 0.0);
        assert_eq!(fpr_at_tpr(&[3.0, 4.0, 1.0, 2.0], &flags(2, 2), 0.95).unwrap().0, 1.0);
        assert!(fpr_at_tpr(&[1.0, 2.0], &flags(1, 1), 0.0).is_err());
    }

    #[test]
    fn single_bin_holds_everything() {
        let h = Histogram::new(&[1.0, 2.0], &[3.0], 1).unwrap();
        assert_eq!((h.id.clone(), h.ood.clone()), (vec![1.0], vec![1.0]));
        let h = Histogram::new(&[0.0, 1.0, 2.0, 3.0], &[3.0, 3.0], 3).unwrap();
        assert_eq!(h.id, vec![0.25, 0.25, 0.5]);
        assert_eq!(h.ood, vec![0.0, 0.0, 1.0]);
    }
}
