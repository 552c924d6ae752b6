use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    CacheHit,
    Error,
}

/// One attempt at answering one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Sequence number of the logical query; retries share it.
    pub query: usize,
    pub attempt: u32,
    pub cluster: Option<usize>,
    pub node_id: Option<String>,
    pub prompt_hash: String,
    pub outcome: Outcome,
    pub raw_response: Option<String>,
    pub category: Option<String>,
    pub is_new: Option<bool>,
    pub error: Option<String>,
    pub latency_ms: f64,
    pub token_estimate: usize,
}

/// Append-only record of every attempt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryLedger {
    records: Vec<QueryRecord>,
    next_query: usize,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn begin_query(&mut self) -> usize {
        self.next_query += 1;
        self.next_query - 1
    }

    pub fn push(&mut self, record: QueryRecord) {
        self.next_query = self.next_query.max(record.query + 1);
        self.records.push(record);
    }

    /// Number of logical queries issued (retries counted once).
    pub fn query_count(&self) -> usize {
        self.records.iter().map(|r| r.query).collect::<BTreeSet<_>>().len()
    }

    /// Logical queries attributed to one cluster.
    pub fn cluster_query_count(&self, cluster: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.cluster == Some(cluster))
            .map(|r| r.query)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn cache_hits(&self) -> usize {
        self.records.iter().filter(|r| r.outcome == Outcome::CacheHit).count()
    }

    pub fn token_total(&self) -> usize {
        self.records.iter().map(|r| r.token_estimate).sum()
    }

    pub fn extend(&mut self, other: QueryLedger) {
        let offset = self.next_query;
        for mut r in other.records {
            r.query += offset;
            self.push(r);
        }
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut ledger = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            ledger.push(rec);
        }
        Ok(ledger)
    }
}
