use std::collections::BTreeMap;
use std::path::Path;

use lgplug::alignment::AlignmentConfig;
use lgplug::embedding::TextEncoderConfig;
use lgplug::eval::EvalReport;
use lgplug::pipeline::{
    report, run_pipeline, sweep, DataSource, Manifest, PipelineConfig, Stage, StageStatus, SynthSpec, REPORT, SCORES,
};
use lgplug::Error;

fn quick() -> PipelineConfig {
    let mut c = PipelineConfig {
        data: DataSource::Synth(SynthSpec {
            nodes_per_class: 20,
            ..SynthSpec::default()
        }),
        alignment: AlignmentConfig {
            learning_rate: 1e-3,
            max_epochs: 3,
            graph_hidden: 16,
            text: TextEncoderConfig::small(),
            ..AlignmentConfig::default()
        },
        ..PipelineConfig::default()
    };
    c.features.dim = 32;
    c.exposure.clusters = 4;
    c.detector.max_epochs = 60;
    c.detector.hidden_dim = 16;
    c
}

fn eval_report(dir: &Path) -> EvalReport {
    EvalReport::load(dir.join(REPORT)).unwrap()
}

#[test]
fn full_run_writes_every_artifact_and_reruns_are_no_ops() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick();
    let summary = run_pipeline(&config, dir.path(), &Stage::ALL, false).unwrap();
    assert!(summary.iter().all(|(_, s)| *s == StageStatus::Ran));
    for stage in Stage::ALL {
        for name in stage.artifacts() {
            assert!(dir.path().join(name).exists(), "{name}");
        }
    }
    let manifest = Manifest::load_or_default(dir.path()).unwrap();
    assert_eq!(manifest.stages.len(), 5);
    assert_eq!(manifest.stages["align"].seeds["alignment"], 0);

    let again = run_pipeline(&config, dir.path(), &Stage::ALL, false).unwrap();
    assert!(again.iter().all(|(_, s)| *s == StageStatus::Skipped));
    let forced = run_pipeline(&config, dir.path(), &[Stage::Eval], true).unwrap();
    assert_eq!(forced, vec![(Stage::Eval, StageStatus::Ran)]);

    let text = report(dir.path()).unwrap();
    assert!(text.contains("AUROC"), "{text}");
}

#[test]
fn changed_config_reruns_the_stage_and_invalidates_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick();
    run_pipeline(&config, dir.path(), &Stage::ALL, false).unwrap();
    let mut changed = config.clone();
    changed.detector.beta = 0.5;
    let err = run_pipeline(&changed, dir.path(), &[Stage::Eval], false).unwrap_err();
    assert!(matches!(err.root(), Error::Dependency { required, .. } if required == "train"), "{err}");
    let out = run_pipeline(&changed, dir.path(), &[Stage::Train, Stage::Eval], false).unwrap();
    assert!(out.iter().all(|(_, s)| *s == StageStatus::Ran));
}

#[test]
fn eval_without_upstream_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(&quick(), dir.path(), &[Stage::Eval], false).unwrap_err();
    assert!(matches!(err.root(), Error::Dependency { .. }), "{err}");
    assert_eq!(err.exit_code(), err.root().exit_code());
}

#[test]
fn tampered_artifact_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick();
    run_pipeline(&config, dir.path(), &Stage::ALL, false).unwrap();
    let scores = dir.path().join(SCORES);
    let mut text = std::fs::read_to_string(&scores).unwrap();
    text.push_str("\n");
    std::fs::write(&scores, text).unwrap();
    let err = run_pipeline(&config, dir.path(), &[Stage::Eval], false).unwrap_err();
    assert!(matches!(err.root(), Error::Tampered { .. }), "{err}");
}

#[test]
fn identical_configs_give_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&quick(), a.path(), &Stage::ALL, false).unwrap();
    run_pipeline(&quick(), b.path(), &Stage::ALL, false).unwrap();
    assert_eq!(
        std::fs::read(a.path().join(REPORT)).unwrap(),
        std::fs::read(b.path().join(REPORT)).unwrap()
    );
}

#[test]
fn zero_beta_matches_unplugged_baseline() {
    let (plugged, baseline) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut with_plug = quick();
    with_plug.detector.beta = 0.0;
    let mut without = quick();
    without.plug = false;
    run_pipeline(&with_plug, plugged.path(), &Stage::ALL, false).unwrap();
    run_pipeline(&without, baseline.path(), &Stage::ALL, false).unwrap();
    assert_eq!(
        std::fs::read(plugged.path().join(REPORT)).unwrap(),
        std::fs::read(baseline.path().join(REPORT)).unwrap()
    );
}

#[test]
fn sweep_rows_and_baseline_cross_check() {
    let root = tempfile::tempdir().unwrap();
    let config = quick();
    let mut grid = BTreeMap::new();
    grid.insert("detector.beta".to_string(), vec![0.0.into(), 1.0.into()]);
    let rows = sweep(&config, &grid, root.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.error.is_none()));
    assert!(root.path().join("sweep.csv").exists());

    let base = tempfile::tempdir().unwrap();
    let mut unplugged = config.clone();
    unplugged.plug = false;
    run_pipeline(&unplugged, base.path(), &Stage::ALL, false).unwrap();
    let r = eval_report(base.path());
    assert_eq!(rows[0].auroc, Some(r.auroc));
    assert_eq!(rows[0].fpr95, Some(r.fpr95));
}

#[test]
fn sweep_edge_cases() {
    let root = tempfile::tempdir().unwrap();
    let config = quick();
    assert!(sweep(&config, &BTreeMap::new(), root.path()).unwrap().is_empty());

    let mut grid = BTreeMap::new();
    grid.insert("exposure.clusters".to_string(), vec![3.into(), 1000.into()]);
    let rows = sweep(&config, &grid, root.path()).unwrap();
    assert!(rows[0].error.is_none());
    assert!(rows[1].error.is_some());

    let mut bad = BTreeMap::new();
    bad.insert("exposure.nope".to_string(), vec![1.into()]);
    assert!(matches!(sweep(&config, &bad, root.path()), Err(Error::Config(_))));
}

#[test]
fn example_configs_load_and_files_config_runs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let bench = PipelineConfig::load(dir.join("benchmark.toml")).unwrap();
    bench.validate().unwrap();
    let files = PipelineConfig::load(dir.join("files.toml")).unwrap();
    let out = tempfile::tempdir().unwrap();
    run_pipeline(&files, out.path(), &Stage::ALL, false).unwrap();
    let r = eval_report(out.path());
    assert_eq!((r.n_id, r.n_ood), (6, 30));
    assert_eq!(bench.data, DataSource::Synth(SynthSpec::benchmark(0)));
    assert_eq!(bench.alignment.text, TextEncoderConfig::small());
    assert_eq!(bench.sweep.grid.len(), 2);
}
