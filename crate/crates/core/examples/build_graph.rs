//! Builds a small text-attributed graph by hand, writes it in the on-disk
//! formats, reads it back, and draws an OOD split.
//!
//! ```text
//! cargo run -p lgplug --example build_graph
//! ```

use lgplug::tag::{load_graph, make_ood_split, save_graph, synth_tag, NodeRecord, SynthConfig, TextAttributedGraph};

fn node(id: &str, text: &str, label: &str) -> NodeRecord {
    NodeRecord {
        id: id.into(),
        text: text.into(),
        label: Some(label.into()),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let nodes = vec![
        node("p1", "convex optimization with gradient descent", "Theory"),
        node("p2", "lower bounds for online learning", "Theory"),
        node("p3", "policy gradients for robot control", "RL"),
        node("p4", "exploration bonuses in deep q learning", "RL"),
        node("p5", "protein folding with attention models", "Biology"),
        node("p6", "gene expression clustering", "Biology"),
    ];
    let edges = [("p1", "p2"), ("p2", "p3"), ("p3", "p4"), ("p4", "p4"), ("p5", "p6"), ("p2", "p1")];
    let (graph, stats) = TextAttributedGraph::new(nodes, edges.iter().map(|(a, b)| (a.to_string(), b.to_string())))?;
    println!(
        "{} nodes, {} edges ({} duplicate, {} self-loop dropped)",
        graph.len(),
        graph.edges().len(),
        stats.duplicates,
        stats.self_loops
    );
    println!("components: {:?}", graph.connected_components());

    let dir = tempfile::tempdir()?;
    let (nodes_path, edges_path) = (dir.path().join("nodes.jsonl"), dir.path().join("edges.tsv"));
    save_graph(&graph, &nodes_path, &edges_path)?;
    let loaded = load_graph(&nodes_path, &edges_path)?;
    assert_eq!(loaded.graph.node_ids(), graph.node_ids());

    let split = make_ood_split(&graph, &["Theory".into(), "RL".into()], (0.5, 0.0, 0.5), 7)?;
    println!("train {:?} test-id {:?} test-ood {:?}", split.train, split.test_id, split.test_ood);

    let (synth, synth_split) = synth_tag(&SynthConfig::new(3, 2, 40, 0))?;
    println!(
        "synthetic: {} nodes, {} edges, classes {:?}, {} OOD test nodes",
        synth.len(),
        synth.edges().len(),
        synth.classes(),
        synth_split.test_ood.len()
    );
    println!("sample text: {}", synth.text(0));
    Ok(())
}
