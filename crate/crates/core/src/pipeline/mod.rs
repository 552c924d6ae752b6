//! End-to-end orchestration: `ingest → align → expose → train → eval`.
//!
//! Each stage reads its inputs from the run directory, writes its artifacts
//! there and records them in `manifest.json` with a hash over its config
//! section and its inputs. Re-running a stage whose hash is unchanged and
//! whose artifacts still verify is a no-op unless forced.

mod config;
mod manifest;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{parse_value, DataSource, EvalConfig, FeatureConfig, PipelineConfig, SweepConfig, SynthSpec};
pub use manifest::{file_sha256, sha256_hex, Manifest, StageRecord, MANIFEST_FILE};
pub use sweep::{expand_grid, sweep, SweepRow, SWEEP_FILE};

use crate::alignment::train_alignment;
use crate::detect::{train_detector, DetectorInput, DetectorModel, ScoreVector, Scorer};
use crate::embedding::{graph_encode, init_features, Checkpoint, EmbeddingMatrix, FeatureMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate, test_scores, EvalReport, Histogram};
use crate::exposure::{run_exposure, ClusterSummary, ExposureSet};
use crate::llm::{BackendSpec, LlmConfig, QueryLedger};
use crate::optim::ParamSet;
use crate::tag::{load_graph, make_ood_split, save_graph, synth_tag, SplitSpec, TextAttributedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Align,
    Expose,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ingest, Stage::Align, Stage::Expose, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Align => "align",
            Stage::Expose => "expose",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    /// Files the stage writes, relative to the run directory.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[NODES, EDGES, SPLIT, GRAPH_META, FEATURES],
            Stage::Align => &[ENCODER, EMBEDDINGS, ALIGN_LOG],
            Stage::Expose => &[EXPOSURE, LEDGER, CLUSTERS],
            Stage::Train => &[DETECTOR, SCORES, DETECTOR_LOG],
            Stage::Eval => &[REPORT, DENSITY],
        }
    }

    fn upstream(self) -> &'static [Stage] {
        let k = Stage::ALL.iter().position(|&s| s == self).expect("listed");
        &Stage::ALL[..k]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

pub const NODES: &str = "nodes.jsonl";
pub const EDGES: &str = "edges.tsv";
pub const SPLIT: &str = "split.json";
pub const GRAPH_META: &str = "graph.json";
pub const FEATURES: &str = "features.ckpt";
pub const ENCODER: &str = "encoder.ckpt";
pub const EMBEDDINGS: &str = "embeddings.ckpt";
pub const ALIGN_LOG: &str = "alignment_log.jsonl";
pub const EXPOSURE: &str = "exposure.json";
pub const LEDGER: &str = "ledger.jsonl";
pub const CLUSTERS: &str = "clusters.json";
pub const DETECTOR: &str = "detector.ckpt";
pub const SCORES: &str = "scores.csv";
pub const DETECTOR_LOG: &str = "detector_log.jsonl";
pub const REPORT: &str = "report.json";
pub const DENSITY: &str = "density.csv";

/// Graph facts that the node and edge files do not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub domain_hint: String,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    /// Config hash unchanged and artifacts intact.
    Skipped,
}

/// Per-stage outcome of [`run_pipeline`].
pub type RunSummary = Vec<(Stage, StageStatus)>;

fn json_hash<T: Serialize>(stage: Stage, section: &T, upstream: Option<&StageRecord>) -> String {
    let mut doc = serde_json::json!({ "stage": stage.name(), "config": section });
    if let Some(up) = upstream {
        doc["upstream"] = serde_json::json!({ "config_hash": up.config_hash, "artifacts": up.artifacts });
    }
    sha256_hex(doc.to_string().as_bytes())
}

fn stage_hash(config: &PipelineConfig, stage: Stage, upstream: Option<&StageRecord>) -> String {
    match stage {
        Stage::Ingest => json_hash(stage, &(&config.data, &config.features), upstream),
        Stage::Align => json_hash(stage, &config.alignment, upstream),
        Stage::Expose => json_hash(stage, &(config.plug, &config.exposure, &config.llm), upstream),
        Stage::Train => json_hash(stage, &(config.plug, &config.detector), upstream),
        Stage::Eval => json_hash(stage, &config.eval, upstream),
    }
}

fn stage_seeds(config: &PipelineConfig, stage: Stage) -> BTreeMap<String, u64> {
    let pairs: Vec<(&str, u64)> = match stage {
        Stage::Ingest => {
            let data_seed = match &config.data {
                DataSource::Synth(s) => s.seed,
                DataSource::Files { seed, .. } => *seed,
            };
            vec![("data", data_seed), ("features", config.features.seed)]
        }
        Stage::Align => vec![("alignment", config.alignment.seed)],
        Stage::Expose => vec![("exposure", config.exposure.seed)],
        Stage::Train => vec![("detector", config.detector.seed)],
        Stage::Eval => vec![],
    };
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Runs `stages` (in pipeline order) into `dir`.
pub fn run_pipeline(config: &PipelineConfig, dir: &Path, stages: &[Stage], force: bool) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::load_or_default(dir)?;
    let mut summary = Vec::new();
    for stage in Stage::ALL.into_iter().filter(|s| stages.contains(s)) {
        let status = run_stage(config, dir, stage, force, &mut manifest).map_err(|e| e.in_stage(stage.name()))?;
        summary.push((stage, status));
    }
    Ok(summary)
}

fn check_upstream<'m>(config: &PipelineConfig, dir: &Path, stage: Stage, manifest: &'m Manifest) -> Result<Option<&'m StageRecord>> {
    let mut prev: Option<&StageRecord> = None;
    for &up in stage.upstream() {
        let missing = || Error::Dependency {
            stage: stage.name().to_string(),
            required: up.name().to_string(),
            path: dir.join(up.artifacts()[0]),
        };
        let rec = manifest.stages.get(up.name()).ok_or_else(missing)?;
        if rec.config_hash != stage_hash(config, up, prev) {
            log::warn!("{up} artifacts were produced under a different configuration");
            return Err(missing());
        }
        manifest.verify(dir, up.name())?;
        prev = Some(rec);
    }
    Ok(prev)
}

fn run_stage(config: &PipelineConfig, dir: &Path, stage: Stage, force: bool, manifest: &mut Manifest) -> Result<StageStatus> {
    let upstream = check_upstream(config, dir, stage, manifest)?;
    let hash = stage_hash(config, stage, upstream);
    if !force && manifest.stages.get(stage.name()).is_some_and(|r| r.config_hash == hash) {
        manifest.verify(dir, stage.name())?;
        log::info!("{stage}: up to date");
        return Ok(StageStatus::Skipped);
    }
    match stage {
        Stage::Ingest => ingest(config, dir)?,
        Stage::Align => align(config, dir)?,
        Stage::Expose => expose(config, dir)?,
        Stage::Train => train(config, dir)?,
        Stage::Eval => eval(config, dir)?,
    }
    let artifacts = stage
        .artifacts()
        .iter()
        .map(|name| Ok((name.to_string(), file_sha256(&dir.join(name))?)))
        .collect::<Result<_>>()?;
    manifest.stages.insert(
        stage.name().to_string(),
        StageRecord {
            config_hash: hash,
            seeds: stage_seeds(config, stage),
            artifacts,
        },
    );
    manifest.config_sha256 = sha256_hex(config.to_toml_string()?.as_bytes());
    manifest.save(dir)?;
    log::info!("{stage}: done");
    Ok(StageStatus::Ran)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn save_features(x: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut tensors = ParamSet::new();
    tensors.push("features", x.as_array().clone());
    Checkpoint {
        meta: serde_json::json!({ "kind": "features" }),
        tensors,
        vocab: None,
    }
    .save(path)
}

fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let c = Checkpoint::load_kind(path, "features")?;
    let x = c
        .tensors
        .by_name("features")
        .ok_or_else(|| Error::Checkpoint("missing tensor `features`".into()))?;
    FeatureMatrix::new(x.clone())
}

/// The ingested graph, split and features of a run directory.
pub struct Ingested {
    pub graph: TextAttributedGraph,
    pub split: SplitSpec,
    pub features: FeatureMatrix,
}

pub fn load_ingested(dir: &Path) -> Result<Ingested> {
    let meta: GraphMeta = read_json(&dir.join(GRAPH_META))?;
    let graph = load_graph(dir.join(NODES), dir.join(EDGES))?.graph.with_domain_hint(meta.domain_hint);
    Ok(Ingested {
        graph,
        split: SplitSpec::load(dir.join(SPLIT))?,
        features: load_features(&dir.join(FEATURES))?,
    })
}

/// Builds the graph and split described by `data`.
pub fn build_dataset(data: &DataSource) -> Result<(TextAttributedGraph, SplitSpec)> {
    match data {
        DataSource::Synth(spec) => synth_tag(&spec.to_config()),
        DataSource::Files {
            nodes,
            edges,
            split,
            id_classes,
            ratios,
            seed,
            domain_hint,
        } => {
            let mut graph = load_graph(nodes, edges)?.graph;
            if let Some(h) = domain_hint {
                graph = graph.with_domain_hint(h.clone());
            }
            let split = match split {
                Some(p) => SplitSpec::load(p)?,
                None if id_classes.is_empty() => {
                    return Err(Error::Config("data.id_classes is required when no split file is given".into()))
                }
                None => make_ood_split(&graph, id_classes, *ratios, *seed)?,
            };
            split.validate(&graph)?;
            Ok((graph, split))
        }
    }
}

fn ingest(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let (graph, split) = build_dataset(&config.data)?;
    let x = init_features(graph.texts(), config.features.dim, config.features.method, config.features.seed)?;
    save_graph(&graph, dir.join(NODES), dir.join(EDGES))?;
    split.save(dir.join(SPLIT))?;
    write_json(
        &dir.join(GRAPH_META),
        &GraphMeta {
            domain_hint: graph.domain_hint().to_string(),
            nodes: graph.len(),
            edges: graph.edges().len(),
        },
    )?;
    save_features(&x, &dir.join(FEATURES))
}

fn align(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let data = load_ingested(dir)?;
    let run = train_alignment(&data.graph, &data.features, &config.alignment)?;
    let z = graph_encode(&data.graph, &data.features, &run.params)?;
    run.params.save(dir.join(ENCODER))?;
    z.save(dir.join(EMBEDDINGS))?;
    run.write_log(dir.join(ALIGN_LOG))
}

/// The LLM configuration with synthetic keyword rules filled in.
pub fn resolve_llm(config: &PipelineConfig) -> Result<LlmConfig> {
    let mut llm = config.llm.clone();
    if let BackendSpec::KeywordOracle { rules, .. } = &mut llm.backend {
        if rules.is_empty() {
            match &config.data {
                DataSource::Synth(spec) => *rules = spec.to_config().oracle_rules(),
                DataSource::Files { .. } => {
                    return Err(Error::Config("the keyword oracle needs llm.backend.rules for file data".into()))
                }
            }
        }
    }
    Ok(llm)
}

fn expose(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let data = load_ingested(dir)?;
    let (set, ledger, clusters) = if config.plug {
        let z = EmbeddingMatrix::load(dir.join(EMBEDDINGS))?;
        let gateway = resolve_llm(config)?.build()?;
        let out = run_exposure(&data.graph, &z, &data.split, &config.exposure, &gateway)?;
        (out.set, out.ledger, out.clusters)
    } else {
        log::info!("plug disabled: no exposure queries");
        (ExposureSet::default(), QueryLedger::new(), Vec::new())
    };
    set.save(dir.join(EXPOSURE))?;
    ledger.write_jsonl(dir.join(LEDGER))?;
    write_json(&dir.join(CLUSTERS), &clusters)
}

/// The detector settings actually trained: `β = 0` when the plug is off.
pub fn effective_detector(config: &PipelineConfig) -> crate::detect::DetectorConfig {
    let mut d = config.detector;
    if !config.plug {
        d.beta = 0.0;
    }
    d
}

fn detector_input(config: &PipelineConfig, dir: &Path, data: &Ingested) -> Result<FeatureMatrix> {
    match config.detector.input {
        DetectorInput::Features => Ok(data.features.clone()),
        DetectorInput::Embeddings => FeatureMatrix::new(EmbeddingMatrix::load(dir.join(EMBEDDINGS))?.into_inner()),
    }
}

fn train(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let data = load_ingested(dir)?;
    let detector = effective_detector(config);
    let exposed = if detector.beta > 0.0 {
        ExposureSet::load(dir.join(EXPOSURE))?.indices(&data.graph)?
    } else {
        Vec::new()
    };
    let x = detector_input(config, dir, &data)?;
    let run = train_detector(&data.graph, &x, &data.split, &exposed, &detector)?;
    run.model.save(dir.join(DETECTOR))?;
    run.model.scores(&data.graph, &x)?.write_csv(&data.graph, dir.join(SCORES))?;
    write_jsonl(&dir.join(DETECTOR_LOG), &run.history)
}

fn eval(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let data = load_ingested(dir)?;
    let scores = ScoreVector::read_csv(&data.graph, dir.join(SCORES))?;
    let report = evaluate(&scores, &data.graph, &data.split, config.eval.bins)?;
    report.save(dir.join(REPORT))?;
    // energy densities are plotted as negative energy, so flip the sign
    let model = DetectorModel::load(dir.join(DETECTOR))?;
    let (mut id, mut ood) = test_scores(&scores, &data.graph, &data.split)?;
    if model.config.scorer == Scorer::Energy {
        id.iter_mut().chain(ood.iter_mut()).for_each(|s| *s = -*s);
    }
    Histogram::new(&id, &ood, config.eval.bins)?.write_csv(dir.join(DENSITY))
}

/// A readable summary of a run directory.
pub fn report(dir: &Path) -> Result<String> {
    use std::fmt::Write as _;
    let manifest = Manifest::load_or_default(dir)?;
    if manifest.stages.is_empty() {
        return Err(Error::Dependency {
            stage: "report".into(),
            required: "ingest".into(),
            path: dir.join(MANIFEST_FILE),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "run directory: {}", dir.display());
    for stage in Stage::ALL {
        let state = match manifest.stages.get(stage.name()) {
            None => "not run".to_string(),
            Some(_) => match manifest.verify(dir, stage.name()) {
                Ok(()) => "ok".to_string(),
                Err(e) => format!("INVALID ({e})"),
            },
        };
        let _ = writeln!(out, "  {:<7} {state}", stage.name());
    }
    if manifest.stages.contains_key("ingest") {
        let meta: GraphMeta = read_json(&dir.join(GRAPH_META))?;
        let _ = writeln!(out, "graph: {} nodes, {} edges ({})", meta.nodes, meta.edges, meta.domain_hint);
    }
    if manifest.stages.contains_key("expose") {
        let set = ExposureSet::load(dir.join(EXPOSURE))?;
        let ledger = QueryLedger::read_jsonl(dir.join(LEDGER))?;
        let clusters: Vec<ClusterSummary> = read_json(&dir.join(CLUSTERS))?;
        let data = load_ingested(dir)?;
        let purity = set
            .purity(&data.graph, &data.split.id_classes)
            .map_or("n/a".to_string(), |p| format!("{p:.3}"));
        let _ = writeln!(
            out,
            "exposure: {} nodes from {}/{} clusters, purity {purity}",
            set.len(),
            clusters.iter().filter(|c| c.exposed > 0).count(),
            clusters.len()
        );
        let _ = writeln!(
            out,
            "llm: {} queries, {} attempts, {} cache hits, ~{} tokens",
            ledger.query_count(),
            ledger.len(),
            ledger.cache_hits(),
            ledger.token_total()
        );
    }
    if manifest.stages.contains_key("eval") {
        let r = EvalReport::load(dir.join(REPORT))?;
        let _ = writeln!(
            out,
            "detection: AUROC {:.4}, FPR95 {:.4} (threshold {:.4}) on {} ID / {} OOD test nodes",
            r.auroc, r.fpr95, r.threshold_at_tpr95, r.n_id, r.n_ood
        );
    }
    Ok(out)
}

/// Resolves a run directory path relative to a sweep root.
pub(crate) fn point_dir(root: &Path, index: usize) -> PathBuf {
    root.join("points").join(format!("{index:03}"))
}
