//! Training driver: data loading, the step loop, metrics log, periodic
//! checkpoints, resumption and the non-finite abort snapshot.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use attr2face_core::config::TrainConfig;
use attr2face_core::data::CuratedSample;
use attr2face_core::train::{LossReport, StageSelection, TrainSet, Trainer};

use crate::cache::read_cache;
use crate::checkpoint::{load_sketch_stage, load_trainer, save_trainer};
use crate::config::config_hash;
use crate::dataset::{prepare, Split};
use crate::error::{io_err, Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Training samples from a sample cache file or a dataset directory.
pub fn load_training_samples(data: &Path, scales: &[usize]) -> Result<Vec<CuratedSample>> {
    if !data.exists() {
        return Err(Error::Io {
            path: data.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "training data not found"),
        });
    }
    let samples = if data.is_file() {
        let (cached, samples) = read_cache(data)?;
        if cached != scales {
            return Err(Error::Config(format!("cache holds scales {cached:?}, configuration needs {scales:?}")));
        }
        samples
    } else {
        prepare(data, Split::Train, scales)?
    };
    if samples.is_empty() {
        return Err(Error::Core(attr2face_core::Error::EmptyDataset));
    }
    Ok(samples)
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub plan: StageSelection,
    /// Stop after this many total steps (counting resumed ones).
    pub max_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub resume: Option<PathBuf>,
    /// Sketch-stage checkpoint whose generator initializes a face-only run.
    pub sketch_stage: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, plan: StageSelection) -> Self {
        Self { out_dir: out_dir.into(), plan, max_steps: None, checkpoint_every: None, resume: None, sketch_stage: None }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub trainer: Trainer,
    pub reports: Vec<LossReport>,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub fn step_checkpoint_name(step: u64) -> String {
    format!("step-{step:06}.ckpt")
}

/// Runs (or resumes) training of `plan` on `samples`.
pub fn run_training(config: &TrainConfig, samples: &[CuratedSample], opts: &RunOptions) -> Result<RunSummary> {
    std::fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let t = load_trainer(path)?;
            let (expected, found) = (config_hash(&t.config), config_hash(config));
            if expected != found {
                return Err(Error::ConfigMismatch { expected, found });
            }
            t
        }
        None => Trainer::new(config.clone())?,
    };
    if let (Some(path), None) = (&opts.sketch_stage, &opts.resume) {
        load_sketch_stage(&mut trainer, path)?;
    }
    let set = TrainSet::new(samples, &config.scales)?;
    let total = trainer.total_steps(set.len(), opts.plan);
    let end = opts.max_steps.map_or(total, |m| m.min(total));
    let metrics_path = opts.out_dir.join(METRICS_FILE);
    let mut metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(io_err(&metrics_path))?;
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    while trainer.step < end {
        let before = trainer.clone();
        let t0 = Instant::now();
        let mut report = match trainer.next_step(&set, opts.plan) {
            Ok(r) => r,
            Err(e @ attr2face_core::Error::NonFinite(_)) => {
                let snapshot = opts.out_dir.join(format!("abort-step{:06}.ckpt", before.step));
                save_trainer(&before, &snapshot)?;
                return Err(Error::Aborted { step: before.step, reason: e.to_string(), snapshot });
            }
            Err(e) => return Err(e.into()),
        };
        report.wall_clock = t0.elapsed().as_secs_f64();
        let line = serde_json::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(metrics, "{line}").map_err(io_err(&metrics_path))?;
        reports.push(report);
        if opts.checkpoint_every.is_some_and(|k| k > 0 && trainer.step % k == 0) {
            let path = opts.out_dir.join(step_checkpoint_name(trainer.step));
            save_trainer(&trainer, &path)?;
            checkpoints.push(path);
        }
    }
    let final_checkpoint = opts.out_dir.join(FINAL_CHECKPOINT);
    save_trainer(&trainer, &final_checkpoint)?;
    Ok(RunSummary { trainer, reports, final_checkpoint, checkpoints })
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() }))
        .collect()
}
