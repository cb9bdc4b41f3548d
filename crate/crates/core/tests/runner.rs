use phonon_kinetics::runner::{
    execute, run_experiment, run_experiment_with_outputs, verify_outputs, Experiment, ExperimentConfig, MANIFEST_FILE,
};
use std::collections::BTreeSet;
use std::path::Path;

/// Tiny budgets: these tests exercise plumbing, not statistics.
fn tiny(dir: &Path, experiment: Experiment) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().quick();
    cfg.experiment = experiment;
    cfg.output_dir = dir.to_string_lossy().into_owned();
    cfg.qv_scale = 256;
    cfg.qv_replicas = 8;
    cfg.poincare_fields = 2;
    cfg
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel);
            }
        }
    }
    out
}

#[test]
fn manifest_lists_every_written_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Experiment::Tail);
    let manifest = run_experiment(&cfg, 2).unwrap();

    let listed: BTreeSet<String> = manifest.outputs.iter().map(|f| f.path.clone()).collect();
    let mut on_disk = files_under(dir.path());
    assert!(on_disk.remove(MANIFEST_FILE));
    assert_eq!(listed, on_disk);
    for f in &manifest.outputs {
        assert_eq!(f.sha256.len(), 64);
        assert_eq!(std::fs::metadata(dir.path().join(&f.path)).unwrap().len(), f.bytes);
    }
    assert!(verify_outputs(dir.path(), &manifest).unwrap().is_empty());

    std::fs::write(dir.path().join("tail/survival.csv"), b"tampered\n").unwrap();
    assert_eq!(
        verify_outputs(dir.path(), &manifest).unwrap(),
        vec!["tail/survival.csv"]
    );
}

#[test]
fn manifest_records_run_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), Experiment::Qv);
    cfg.seed = 42;
    let manifest = run_experiment(&cfg, 3).unwrap();
    assert_eq!(manifest.seed, 42);
    assert_eq!(manifest.workers, 3);
    assert_eq!(manifest.experiment, Experiment::Qv);
    assert_eq!(manifest.config_sha256.len(), 64);
    assert!(manifest.wall_clock_seconds >= 0.0);
    assert!(!manifest.streams.is_empty());
    for block in &manifest.streams {
        assert_eq!(block.experiment, "qv");
        assert_eq!(block.count, cfg.qv_replicas as u64);
    }

    let saved = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let back: phonon_kinetics::runner::RunManifest = serde_json::from_str(&saved).unwrap();
    assert_eq!(back, manifest);
}

#[test]
fn saved_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(a.path(), Experiment::Poincare);
    let first = run_experiment(&cfg, 1).unwrap();
    let text = std::fs::read_to_string(a.path().join("config.toml")).unwrap();
    let mut again = ExperimentConfig::from_toml_str(&text).unwrap();
    again.output_dir = b.path().to_string_lossy().into_owned();
    let second = run_experiment(&again, 2).unwrap();
    assert_eq!(first.outputs, second.outputs);
    assert_eq!(first.config_sha256, second.config_sha256);
}

#[test]
fn stored_verdicts_are_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Experiment::Qv);
    let (manifest, outputs) = run_experiment_with_outputs(&cfg, 2).unwrap();
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("qv/reports.json")).unwrap()).unwrap();
    let stored: Vec<phonon_kinetics::estimators::EstimatorReport> =
        serde_json::from_value(doc["reports"].clone()).unwrap();
    assert_eq!(stored.len(), outputs[0].reports.len());
    for r in &stored {
        assert_eq!(r.recompute(), r.passed, "{}", r.name);
        if r.replicas > 1 {
            if let Some(se) = r.std_error {
                assert!(se > 0.0, "{}", r.name);
            }
        }
    }
    assert_eq!(manifest.passed, outputs.iter().all(|o| o.passed()));
    assert_eq!(doc["passed"], serde_json::Value::Bool(outputs[0].passed()));
}

#[test]
fn in_memory_results_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Experiment::Qv);
    let one = execute(&cfg, Experiment::Qv, 1).unwrap();
    let four = execute(&cfg, Experiment::Qv, 4).unwrap();
    assert_eq!(one.reports, four.reports);
    assert_eq!(one.tables, four.tables);
    assert!(execute(&cfg, Experiment::All, 1).is_err());
    assert!(execute(&cfg, Experiment::Qv, 0).is_err());
}

#[test]
fn experiments_own_disjoint_streams() {
    let bases: BTreeSet<u64> = Experiment::SUITE.iter().map(|e| e.stream_base()).collect();
    assert_eq!(bases.len(), Experiment::SUITE.len());
    for e in Experiment::SUITE {
        assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        assert_eq!(e.stream_base() & ((1 << 40) - 1), 0);
    }
    assert_eq!(Experiment::All.expand(), Experiment::SUITE.to_vec());
}
