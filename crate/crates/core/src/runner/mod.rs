//! Experiment orchestration: replica scheduling, deterministic merging,
//! persistence of reports and the run manifest.
//!
//! All randomness derives from `(seed, stream id)`. Stream ids are laid out
//! as `experiment base + (family << 32) + replica`, so the data written by a
//! run never depends on the number of workers.

pub mod config;
mod experiments;
mod walk;

pub use config::{Experiment, ExperimentConfig, PresetName};

use crate::error::{Error, Result};
use crate::estimators::{write_reports_csv, EstimatorReport};
use crate::sampler::RandomStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

pub const ARTIFACT: &str = env!("CARGO_PKG_NAME");
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

/// A contiguous block of stream ids handed to one replica family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamBlock {
    pub experiment: String,
    pub family: String,
    pub first: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub experiment: Experiment,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub streams: Vec<StreamBlock>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub passed: bool,
    /// Names of the reports that failed their declared rule.
    pub failures: Vec<String>,
}

/// Reports, free-form details and CSV tables of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub experiment: Experiment,
    pub reports: Vec<EstimatorReport>,
    pub details: serde_json::Value,
    pub tables: Vec<(String, Vec<u8>)>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn report(&self, name: &str) -> Option<&EstimatorReport> {
        self.reports.iter().find(|r| r.name == name)
    }
}

/// Worker pool plus the stream bookkeeping of one experiment.
pub(crate) struct Scheduler {
    pool: rayon::ThreadPool,
    seed: u64,
    experiment: Experiment,
    streams: Mutex<Vec<StreamBlock>>,
}

impl Scheduler {
    fn new(pool: rayon::ThreadPool, seed: u64, experiment: Experiment) -> Self {
        Scheduler {
            pool,
            seed,
            experiment,
            streams: Mutex::new(Vec::new()),
        }
    }

    /// Runs `count` replicas of family `family` in parallel. Results are
    /// returned in replica order; the first failing replica is reported.
    pub fn replicas<T, F>(&self, family: u32, label: &str, count: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64, RandomStream) -> Result<T> + Sync + Send,
    {
        let first = self.experiment.stream_base() + ((family as u64) << 32);
        self.streams.lock().expect("stream log").push(StreamBlock {
            experiment: self.experiment.name().into(),
            family: label.into(),
            first,
            count: count as u64,
        });
        let seed = self.seed;
        let results: Vec<Result<T>> = self.pool.install(|| {
            (0..count as u64)
                .into_par_iter()
                .map(|r| f(r, RandomStream::new(seed, first + r)))
                .collect()
        });
        results
            .into_iter()
            .enumerate()
            .map(|(r, res)| {
                res.map_err(|e| Error::Replica {
                    experiment: self.experiment.name().into(),
                    replica: r as u64,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Deterministic parallel map for work without randomness.
    pub fn map<I, T, F>(&self, items: &[I], f: F) -> Result<Vec<T>>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> Result<T> + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn into_streams(self) -> Vec<StreamBlock> {
        self.streams.into_inner().expect("stream log")
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config {
            line: None,
            message: "`workers` must be positive".into(),
        });
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Runs one experiment in memory, without touching the filesystem.
pub fn execute(config: &ExperimentConfig, experiment: Experiment, workers: usize) -> Result<ExperimentOutput> {
    Ok(execute_logged(config, experiment, workers)?.0)
}

fn execute_logged(
    config: &ExperimentConfig,
    experiment: Experiment,
    workers: usize,
) -> Result<(ExperimentOutput, Vec<StreamBlock>)> {
    if experiment == Experiment::All {
        return Err(Error::invalid("`all` is a suite; execute its members one by one"));
    }
    config.validate()?;
    let sched = Scheduler::new(build_pool(workers)?, config.seed, experiment);
    let out = experiments::run(&sched, config, experiment)?;
    Ok((out, sched.into_streams()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct OutputWriter {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputWriter {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(OutputFile {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }
}

fn persist(w: &mut OutputWriter, out: &ExperimentOutput) -> Result<()> {
    let dir = out.experiment.name();
    let doc = serde_json::json!({
        "experiment": dir,
        "passed": out.passed(),
        "reports": out.reports,
        "details": out.details,
    });
    let mut json = serde_json::to_vec_pretty(&doc)?;
    json.push(b'\n');
    w.write(&format!("{dir}/reports.json"), &json)?;
    let mut csv = Vec::new();
    write_reports_csv(&out.reports, &mut csv)?;
    w.write(&format!("{dir}/summary.csv"), &csv)?;
    for (name, bytes) in &out.tables {
        w.write(&format!("{dir}/{name}"), bytes)?;
    }
    Ok(())
}

/// Runs the configured experiment (or the whole suite), writes its reports,
/// tables and manifest under `config.output_dir`, and returns the manifest
/// together with the in-memory outputs.
pub fn run_experiment_with_outputs(
    config: &ExperimentConfig,
    workers: usize,
) -> Result<(RunManifest, Vec<ExperimentOutput>)> {
    config.validate()?;
    let start = Instant::now();
    let root = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&root)?;
    let mut writer = OutputWriter {
        root: root.clone(),
        files: Vec::new(),
    };
    let config_text = config.to_portable_toml_string();
    writer.write("config.toml", config_text.as_bytes())?;

    let mut streams = Vec::new();
    let mut outputs = Vec::new();
    for exp in config.experiment.expand() {
        let (out, blocks) = execute_logged(config, exp, workers)?;
        persist(&mut writer, &out)?;
        streams.extend(blocks);
        outputs.push(out);
    }
    let failures: Vec<String> = outputs
        .iter()
        .flat_map(|o| o.failures().into_iter().map(move |f| format!("{}: {f}", o.experiment)))
        .collect();
    let manifest = RunManifest {
        artifact: ARTIFACT.into(),
        version: ARTIFACT_VERSION.into(),
        experiment: config.experiment,
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: config.seed,
        workers,
        streams,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: writer.files,
        passed: failures.is_empty(),
        failures,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(root.join(MANIFEST_FILE), bytes)?;
    Ok((manifest, outputs))
}

pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<RunManifest> {
    Ok(run_experiment_with_outputs(config, workers)?.0)
}

/// Recomputes the digests of every file listed in `manifest` under `root`,
/// returning the paths whose content no longer matches.
pub fn verify_outputs(root: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut stale = Vec::new();
    for f in &manifest.outputs {
        let bytes = std::fs::read(root.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            stale.push(f.path.clone());
        }
    }
    Ok(stale)
}
