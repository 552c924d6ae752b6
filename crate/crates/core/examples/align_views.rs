//! Trains the graph and text encoders so that each node's two views agree,
//! then shows how often a node's nearest text embedding is its own.
//!
//! ```text
//! cargo run --release -p lgplug --example align_views
//! ```

use lgplug::alignment::{node_similarity, train_alignment, AlignmentConfig};
use lgplug::embedding::{graph_encode, hashed_bag_of_words, text_encode, EmbeddingMatrix, EncoderParams, TextEncoderConfig};
use lgplug::tag::{synth_tag, SynthConfig, TextAttributedGraph};
use lgplug::embedding::FeatureMatrix;

fn self_match(graph: &TextAttributedGraph, x: &FeatureMatrix, params: &EncoderParams) -> lgplug::Result<f64> {
    let z: EmbeddingMatrix = graph_encode(graph, x, params)?;
    let h = text_encode(graph.texts(), params);
    let sim = node_similarity(&z, &h, 1.0)?;
    let hits = sim
        .as_array()
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, row)| row.iter().enumerate().all(|(j, v)| j == *i || *v < row[*i]))
        .count();
    Ok(hits as f64 / graph.len() as f64)
}

fn main() -> lgplug::Result<()> {
    let (graph, _) = synth_tag(&SynthConfig::new(3, 2, 30, 0))?;
    let x = hashed_bag_of_words(graph.texts(), 128);
    let config = AlignmentConfig {
        learning_rate: 1e-3,
        max_epochs: 15,
        graph_hidden: 64,
        text: TextEncoderConfig::small(),
        ..AlignmentConfig::default()
    };
    let run = train_alignment(&graph, &x, &config)?;
    for r in &run.history {
        println!(
            "epoch {:>2}  node {:.4}  edge {:.4}  val {:.4}  scale {:.3}",
            r.epoch, r.l_node, r.l_edge, r.val_loss, r.logit_scale
        );
    }
    println!("best epoch {}", run.best_epoch);
    println!("self-match rate after training: {:.3}", self_match(&graph, &x, &run.params)?);
    Ok(())
}
