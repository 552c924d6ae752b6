//! Line-delimited node and edge files.
//!
//! Nodes: one JSON object per line, `{"id": .., "text": .., "label": ..}` with
//! `label` optional. Edges: one `src<TAB>dst` pair per line. Blank lines are
//! ignored in both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use super::graph::{EdgeStats, NodeRecord, TextAttributedGraph};
use crate::error::{Error, Result};

/// A graph together with ingestion diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: TextAttributedGraph,
    pub stats: EdgeStats,
}

pub fn load_graph(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<LoadedGraph> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();
    let nodes = read_nodes(nodes_path)?;
    let edges = read_edges(edges_path)?;
    let (graph, stats) = TextAttributedGraph::new(nodes, edges)?;
    if stats.duplicates > 0 {
        warn!(
            "{}: dropped {} duplicate edge(s)",
            edges_path.display(),
            stats.duplicates
        );
    }
    if stats.self_loops > 0 {
        warn!("{}: dropped {} self-loop(s)", edges_path.display(), stats.self_loops);
    }
    Ok(LoadedGraph { graph, stats })
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: no + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                out.push((a.to_string(), b.to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: no + 1,
                    message: format!("expected `src<TAB>dst`, got {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

pub fn save_graph(
    graph: &TextAttributedGraph,
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();
    let mut w = BufWriter::new(File::create(nodes_path).map_err(|e| Error::io(nodes_path, e))?);
    for rec in graph.records() {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(nodes_path, e))?;
    }
    w.flush().map_err(|e| Error::io(nodes_path, e))?;

    let mut w = BufWriter::new(File::create(edges_path).map_err(|e| Error::io(edges_path, e))?);
    for &(a, b) in graph.edges() {
        writeln!(w, "{}\t{}", graph.node_id(a), graph.node_id(b)).map_err(|e| Error::io(edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(edges_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const NODES: &str = r#"{"id":"a","text":"neural nets","label":"NN"}
{"id":"b","text":"genetic search"}
{"id":"c","text":"","label":"GA"}
"#;

    #[test]
    fn three_nodes_two_edges() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", NODES);
        let e = write(dir.path(), "e.tsv", "a\tb\nb\tc\n");
        let loaded = load_graph(&n, &e).unwrap();
        assert_eq!(loaded.graph.len(), 3);
        assert_eq!(loaded.graph.edges().len(), 2);
        assert_eq!(loaded.graph.label(1), None);
    }

    #[test]
    fn empty_edges_file() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", NODES);
        let e = write(dir.path(), "e.tsv", "");
        assert_eq!(load_graph(&n, &e).unwrap().graph.edges().len(), 0);
    }

    #[test]
    fn repeated_pair_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", NODES);
        let e = write(dir.path(), "e.tsv", "a\tb\na\tb\n");
        let loaded = load_graph(&n, &e).unwrap();
        assert_eq!(loaded.graph.edges().len(), 1);
        assert_eq!(loaded.stats.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n");
        let e = write(dir.path(), "e.tsv", "");
        match load_graph(&n, &e).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let n = write(dir.path(), "n2.jsonl", NODES);
        let e = write(dir.path(), "e2.tsv", "a\tb\na b\n");
        match load_graph(&n, &e).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", NODES);
        let e = write(dir.path(), "e.tsv", "a\tzzz\n");
        assert!(matches!(load_graph(&n, &e).unwrap_err(), Error::Integrity(_)));
    }
}
