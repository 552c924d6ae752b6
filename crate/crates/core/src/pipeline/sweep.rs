use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{point_dir, run_pipeline, PipelineConfig, Stage, EXPOSURE, LEDGER, MANIFEST_FILE, REPORT};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::exposure::ExposureSet;
use crate::llm::QueryLedger;

pub const SWEEP_FILE: &str = "sweep.csv";

/// One grid point's outcome; failures keep the row with `error` set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub params: BTreeMap<String, toml::Value>,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub queries: Option<usize>,
    pub exposed: Option<usize>,
    pub error: Option<String>,
}

/// Cartesian product of the grid, keys in sorted order. Empty when the grid
/// has no keys or any key has no values.
pub fn expand_grid(grid: &BTreeMap<String, Vec<toml::Value>>) -> Vec<BTreeMap<String, toml::Value>> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Vec::new();
    }
    let mut points = vec![BTreeMap::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn run_point(base: &PipelineConfig, root: &Path, index: usize, params: &BTreeMap<String, toml::Value>) -> Result<SweepRow> {
    let mut config = base.clone();
    for (k, v) in params {
        config = config.with_override(k, v.clone())?;
    }
    let dir = point_dir(root, index);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    // reuse the shared ingest and alignment artifacts; stages whose config
    // the point changes are recomputed by the hash check
    for stage in [Stage::Ingest, Stage::Align] {
        for name in stage.artifacts() {
            let (from, to) = (root.join(name), dir.join(name));
            if from.exists() && !to.exists() {
                std::fs::copy(&from, &to).map_err(|e| Error::io(&to, e))?;
            }
        }
    }
    if !dir.join(MANIFEST_FILE).exists() {
        let mut m = super::Manifest::load_or_default(root)?;
        m.stages.retain(|k, _| k == "ingest" || k == "align");
        m.save(&dir)?;
    }
    run_pipeline(&config, &dir, &Stage::ALL, false)?;
    let report = EvalReport::load(dir.join(REPORT))?;
    Ok(SweepRow {
        point: index,
        params: params.clone(),
        auroc: Some(report.auroc),
        fpr95: Some(report.fpr95),
        queries: Some(QueryLedger::read_jsonl(dir.join(LEDGER))?.query_count()),
        exposed: Some(ExposureSet::load(dir.join(EXPOSURE))?.len()),
        error: None,
    })
}

/// Runs expose, train and eval for every grid point under `root/points/NNN`,
/// sharing `root`'s ingest and alignment artifacts, and writes `sweep.csv`.
///
/// A failing point is recorded with its error and the sweep continues.
pub fn sweep(config: &PipelineConfig, grid: &BTreeMap<String, Vec<toml::Value>>, root: &Path) -> Result<Vec<SweepRow>> {
    let points = expand_grid(grid);
    if points.len() > config.sweep.max_points {
        return Err(Error::Config(format!(
            "grid has {} points, above sweep.max_points = {}",
            points.len(),
            config.sweep.max_points
        )));
    }
    for key in grid.keys() {
        if let Some(v) = grid[key].first() {
            config.with_override(key, v.clone())?;
        }
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    if !points.is_empty() {
        run_pipeline(config, root, &[Stage::Ingest, Stage::Align], false)?;
    }
    let rows: Vec<SweepRow> = points
        .iter()
        .enumerate()
        .map(|(i, params)| {
            run_point(config, root, i, params).unwrap_or_else(|e| {
                log::warn!("sweep point {i} failed: {e}");
                SweepRow {
                    point: i,
                    params: params.clone(),
                    auroc: None,
                    fpr95: None,
                    queries: None,
                    exposed: None,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    write_csv(&rows, grid.keys(), &root.join(SWEEP_FILE))?;
    Ok(rows)
}

fn write_csv<'a>(rows: &[SweepRow], keys: impl Iterator<Item = &'a String>, path: &Path) -> Result<()> {
    let keys: Vec<&String> = keys.collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["point".to_string()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(["auroc", "fpr95", "queries", "exposed", "error"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        let mut rec = vec![r.point.to_string()];
        rec.extend(keys.iter().map(|k| r.params.get(*k).map(show).unwrap_or_default()));
        rec.push(opt(r.auroc.map(|v| v.to_string())));
        rec.push(opt(r.fpr95.map(|v| v.to_string())));
        rec.push(opt(r.queries.map(|v| v.to_string())));
        rec.push(opt(r.exposed.map(|v| v.to_string())));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cardinality() {
        let mut g = BTreeMap::new();
        assert!(expand_grid(&g).is_empty());
        g.insert("exposure.clusters".to_string(), vec![5.into(), 10.into(), 20.into()]);
        assert_eq!(expand_grid(&g).len(), 3);
        g.insert("detector.beta".to_string(), vec![0.0.into(), 1.0.into()]);
        let points = expand_grid(&g);
        assert_eq!(points.len(), 6);
        assert_eq!(points[1]["exposure.clusters"], toml::Value::from(10));
        g.insert("exposure.rho".to_string(), vec![]);
        assert!(expand_grid(&g).is_empty());
    }
}
