//! Clusters node embeddings, asks a keyword oracle to label near-centroid
//! nodes, and collects the consensus-filtered exposure set.
//!
//! ```text
//! cargo run --release -p lgplug --example exposure
//! ```

use lgplug::embedding::{hashed_bag_of_words, EmbeddingMatrix};
use lgplug::exposure::{cluster_embeddings, near_centroid, run_exposure, top_k_categories, Codebook, ExposureConfig};
use lgplug::llm::{make_keyword_oracle, LlmGateway, RetryPolicy};
use lgplug::tag::{synth_tag, SynthConfig};

fn main() -> lgplug::Result<()> {
    let synth = SynthConfig::new(3, 2, 40, 3);
    let (graph, split) = synth_tag(&synth)?;
    // raw bag-of-words stands in for aligned embeddings here
    let z = EmbeddingMatrix::new(hashed_bag_of_words(graph.texts(), 128).into_inner())?;

    let assignment = cluster_embeddings(z.as_array().view(), 5, 0)?;
    for (c, members) in assignment.clusters.iter().enumerate() {
        let near = near_centroid(members, z.as_array().view(), 0.5);
        println!("cluster {c}: {} members, {} near the centroid", members.len(), near.len());
    }

    let mut book = Codebook::from_categories(&split.id_classes);
    for answer in ["Other", "Other", "Genomics"] {
        book.record(answer);
    }
    println!("codebook {:?}, top-2 {:?}", book.entries(), top_k_categories(&book, 2));

    let gateway = LlmGateway::new(Box::new(make_keyword_oracle(synth.oracle_rules(), "Other")?), RetryPolicy::immediate());
    let config = ExposureConfig {
        clusters: 8,
        ..ExposureConfig::default()
    };
    let out = run_exposure(&graph, &z, &split, &config, &gateway)?;
    for c in &out.clusters {
        println!(
            "cluster {}: {} queries over {} trial(s), unanimous {}, top-k {:?}, exposed {}",
            c.cluster, c.queries, c.trials, c.unanimous, c.top_k, c.exposed
        );
    }
    println!(
        "exposure set: {} nodes, purity {:.3}, {} queries (budget {})",
        out.set.len(),
        out.set.purity(&graph, &split.id_classes).unwrap_or(f64::NAN),
        out.ledger.query_count(),
        config.query_budget()
    );
    Ok(())
}
