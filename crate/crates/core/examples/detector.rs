//! Trains the energy detector with and without the exposure regularizer on
//! known OOD nodes, then thresholds the scores.
//!
//! ```text
//! cargo run --release -p lgplug --example detector
//! ```

use lgplug::detect::{detect, train_detector, Decision, DetectorConfig, Scorer};
use lgplug::embedding::hashed_bag_of_words;
use lgplug::eval::evaluate;
use lgplug::pipeline::SynthSpec;
use lgplug::tag::synth_tag;

fn main() -> lgplug::Result<()> {
    let synth = SynthSpec::benchmark(1).to_config();
    let (graph, split) = synth_tag(&synth)?;
    let x = hashed_bag_of_words(graph.texts(), 128);
    let idx = split.indices(&graph)?;
    // an idealized exposure set: every OOD node outside train and val
    let exposed: Vec<usize> = idx.test_ood.clone();

    // MSP scores live in [-1, -1/C], so its margins differ from energy's
    for (name, beta, scorer, delta1, delta2) in [
        ("energy", 0.0, Scorer::Energy, -5.0, -1.0),
        ("energy + exposure", 1.0, Scorer::Energy, -5.0, -1.0),
        ("msp", 0.0, Scorer::Msp, -0.9, -0.5),
        ("msp + exposure", 1.0, Scorer::Msp, -0.9, -0.5),
    ] {
        let config = DetectorConfig {
            beta,
            scorer,
            delta1,
            delta2,
            ..DetectorConfig::default()
        };
        let run = train_detector(&graph, &x, &split, &exposed, &config)?;
        let scores = run.model.scores(&graph, &x)?;
        let report = evaluate(&scores, &graph, &split, 20)?;
        println!(
            "{name:<18} best epoch {:>3}  AUROC {:.3}  FPR95 {:.3}",
            run.best_epoch, report.auroc, report.fpr95
        );
        let flagged = detect(&scores, &idx.test_ood, report.threshold_at_tpr95)
            .iter()
            .filter(|d| **d == Decision::Ood)
            .count();
        println!("{:<18} flags {flagged}/{} OOD test nodes at the TPR95 threshold", "", idx.test_ood.len());
    }
    Ok(())
}
