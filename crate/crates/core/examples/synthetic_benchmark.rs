//! Runs the synthetic benchmark: align, expose with a keyword oracle, then
//! train the energy detector with and without the exposure regularizer.
//!
//! ```text
//! cargo run --release -p lgplug --example synthetic_benchmark -- [seeds]
//! ```

use std::time::Instant;

use lgplug::alignment::{train_alignment, AlignmentConfig};
use lgplug::detect::{train_detector, DetectorConfig};
use lgplug::embedding::{graph_encode, hashed_bag_of_words, TextEncoderConfig};
use lgplug::eval::evaluate;
use lgplug::exposure::{run_exposure, ExposureConfig};
use lgplug::llm::{make_keyword_oracle, LlmGateway, RetryPolicy};
use lgplug::pipeline::SynthSpec;
use lgplug::tag::synth_tag;

fn main() -> lgplug::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    for seed in 0..seeds {
        let t = Instant::now();
        let synth = SynthSpec::benchmark(seed).to_config();
        let (graph, split) = synth_tag(&synth)?;
        let x = hashed_bag_of_words(graph.texts(), 128);
        let align = AlignmentConfig {
            learning_rate: 1e-3,
            max_epochs: 20,
            graph_hidden: 64,
            text: TextEncoderConfig::small(),
            seed,
            ..AlignmentConfig::default()
        };
        let run = train_alignment(&graph, &x, &align)?;
        let z = graph_encode(&graph, &x, &run.params)?;
        let oracle = make_keyword_oracle(synth.oracle_rules(), "Other")?;
        let gateway = LlmGateway::new(Box::new(oracle), RetryPolicy::immediate());
        let exposure = ExposureConfig { seed, ..ExposureConfig::default() };
        let out = run_exposure(&graph, &z, &split, &exposure, &gateway)?;
        let exposed = out.set.indices(&graph)?;

        let report = |beta: f64| {
            let config = DetectorConfig { beta, seed, ..DetectorConfig::default() };
            let run = train_detector(&graph, &x, &split, &exposed, &config)?;
            evaluate(&run.model.scores(&graph, &x)?, &graph, &split, 20)
        };
        let base = report(0.0)?;
        let plug = report(1.0)?;
        println!(
            "seed {seed}: exposed {} purity {:.3} queries {} | base FPR95 {:.3} AUROC {:.3} | plug FPR95 {:.3} AUROC {:.3} | {:.1}s",
            out.set.len(),
            out.set.purity(&graph, &split.id_classes).unwrap_or(f64::NAN),
            out.ledger.query_count(),
            base.fpr95,
            base.auroc,
            plug.fpr95,
            plug.auroc,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
