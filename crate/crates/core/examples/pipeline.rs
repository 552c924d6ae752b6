//! Runs every stage into a run directory, re-runs to show that unchanged
//! stages are skipped, prints the report, then sweeps the exposure size.
//!
//! ```text
//! cargo run --release -p lgplug --example pipeline -- [run-dir]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use lgplug::alignment::AlignmentConfig;
use lgplug::embedding::TextEncoderConfig;
use lgplug::pipeline::{report, run_pipeline, sweep, DataSource, PipelineConfig, Stage, SynthSpec};

fn main() -> lgplug::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lgplug-example"));

    let config = PipelineConfig {
        data: DataSource::Synth(SynthSpec::benchmark(0)),
        alignment: AlignmentConfig {
            learning_rate: 1e-3,
            max_epochs: 20,
            graph_hidden: 64,
            text: TextEncoderConfig::small(),
            ..AlignmentConfig::default()
        },
        ..PipelineConfig::default()
    };
    for (stage, status) in run_pipeline(&config, &dir, &Stage::ALL, false)? {
        println!("{stage}: {status:?}");
    }
    let again = run_pipeline(&config, &dir, &Stage::ALL, false)?;
    println!("second run: {again:?}");
    print!("{}", report(&dir)?);

    let mut grid = BTreeMap::new();
    grid.insert("exposure.clusters".to_string(), vec![5.into(), 10.into(), 20.into()]);
    grid.insert("detector.beta".to_string(), vec![0.0.into(), 1.0.into()]);
    for row in sweep(&config, &grid, &dir.join("sweep"))? {
        let params: Vec<String> = row.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match (row.auroc, row.fpr95, row.queries, row.error) {
            (Some(a), Some(f), Some(q), None) => println!("{}: AUROC {a:.4} FPR95 {f:.4} queries {q}", params.join(" ")),
            (.., e) => println!("{}: failed: {}", params.join(" "), e.unwrap_or_default()),
        }
    }
    Ok(())
}
