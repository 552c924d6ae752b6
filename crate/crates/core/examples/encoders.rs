//! Initial node features and the two encoders: a GCN over the graph and a
//! BPE-tokenized transformer over the raw text.
//!
//! ```text
//! cargo run --release -p lgplug --example encoders
//! ```

use lgplug::embedding::{
    graph_encode, init_features, text_encode, BpeTokenizer, EncoderParams, FeatureMethod, GcnConfig, TextEncoderConfig,
};
use lgplug::tag::{synth_tag, SynthConfig};

fn main() -> lgplug::Result<()> {
    let (graph, _) = synth_tag(&SynthConfig::new(2, 1, 20, 1))?;

    let x = init_features(graph.texts(), 64, FeatureMethod::HashedBagOfWords, 0)?;
    println!("features: {} x {}", x.rows(), x.dim());

    let tokenizer = BpeTokenizer::train(graph.texts(), 300, 32);
    let ids = tokenizer.encode(graph.text(0));
    let pieces: Vec<&str> = ids.iter().map(|&t| tokenizer.token(t)).collect();
    println!("vocab {} | {:?}", tokenizer.vocab_len(), &pieces[..pieces.len().min(12)]);

    let params = EncoderParams::init(GcnConfig::encoder(x.dim(), 32), TextEncoderConfig::small(), graph.texts(), 0)?;
    let z = graph_encode(&graph, &x, &params)?;
    let h = text_encode(graph.texts(), &params);
    println!("graph view {} x {}, text view {} x {}", z.rows(), z.dim(), h.rows(), h.dim());
    println!("first graph row norm {:.4}", z.row(0).dot(&z.row(0)).sqrt());
    Ok(())
}
