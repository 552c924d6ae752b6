//! Text-attributed graphs: data model, file ingestion, ID/OOD splits and a
//! synthetic generator.

mod graph;
mod io;
mod split;
mod synth;

pub use graph::{EdgeStats, NodeRecord, TextAttributedGraph};
pub use io::{load_graph, read_edges, read_nodes, save_graph, LoadedGraph};
pub use split::{largest_remainder, make_ood_split, SplitIndices, SplitSpec};
pub use synth::{synth_tag, ClassTemplate, SynthConfig};
