use attr2face::checkpoint::{load_trainer, params_hash, save_trainer, BundleKind, Bundle};
use attr2face::dataset::{prepare, Split};
use attr2face::synthetic::write_dataset;
use attr2face::trainer::{read_metrics, run_training, RunOptions, METRICS_FILE};
use attr2face::Error;
use attr2face_core::config::TrainConfig;
use attr2face_core::data::CuratedSample;
use attr2face_core::train::{StageSelection, Trainer};

fn samples(n: usize) -> Vec<CuratedSample> {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), n, 4, true).unwrap();
    prepare(dir.path(), Split::Train, &TrainConfig::smoke().scales).unwrap()
}

fn small() -> TrainConfig {
    TrainConfig { batch_size: 2, epochs: 2, freeze_epochs: 2, ..TrainConfig::smoke() }
}

#[test]
fn resume_refuses_a_different_configuration() {
    let data = samples(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let opts = RunOptions { max_steps: Some(1), ..RunOptions::new(dir.path().join("a"), StageSelection::Both) };
    let first = run_training(&cfg, &data, &opts).unwrap();
    let changed = TrainConfig { lambda_s: 0.5, ..cfg };
    let resume = RunOptions { resume: Some(first.final_checkpoint), ..RunOptions::new(dir.path().join("b"), StageSelection::Both) };
    assert!(matches!(run_training(&changed, &data, &resume), Err(Error::ConfigMismatch { .. })));
}

#[test]
fn metrics_log_matches_reports_and_checkpoint_records_step() {
    let data = samples(4);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { max_steps: Some(3), ..RunOptions::new(dir.path(), StageSelection::Both) };
    let summary = run_training(&small(), &data, &opts).unwrap();
    let logged = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(logged, summary.reports);
    assert_eq!(logged.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
    let b = Bundle::load(&summary.final_checkpoint).unwrap();
    assert_eq!(b.meta.kind, BundleKind::Pipeline);
    assert_eq!(b.meta.step, 3);
    assert_eq!(load_trainer(&summary.final_checkpoint).unwrap().step, 3);
}

#[test]
fn divergence_leaves_a_snapshot_of_the_last_finite_state() {
    let data = samples(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { lr_stage1: 1e300, lr_stage2: 1e300, ..small() };
    let opts = RunOptions::new(dir.path(), StageSelection::Both);
    match run_training(&cfg, &data, &opts) {
        Err(Error::Aborted { step, snapshot, .. }) => {
            let t = load_trainer(&snapshot).unwrap();
            assert_eq!(t.step, step);
            assert!(t.pipeline.store.iter().all(|(_, v)| v.all_finite()));
        }
        other => panic!("expected an abort, got {:?}", other.map(|s| s.trainer.step)),
    }
}

#[test]
fn staged_plan_trains_sketch_epochs_before_face_epochs() {
    let data = samples(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { staged: true, epochs: 1, freeze_epochs: 1, ..small() };
    let summary = run_training(&cfg, &data, &RunOptions::new(dir.path(), StageSelection::Both)).unwrap();
    let stages: Vec<(bool, bool)> = summary.reports.iter().map(|r| (r.sketch.is_some(), r.face.is_some())).collect();
    assert_eq!(stages, vec![(true, false), (true, false), (false, true), (false, true)]);
}

#[test]
fn face_run_starts_from_a_sketch_stage_checkpoint() {
    let data = samples(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let sketch = run_training(
        &cfg,
        &data,
        &RunOptions { max_steps: Some(1), ..RunOptions::new(dir.path().join("sketch"), StageSelection::Sketch) },
    )
    .unwrap();
    let trained = params_hash(&sketch.trainer.pipeline.store, "gs.");
    assert_ne!(trained, params_hash(&Trainer::new(cfg.clone()).unwrap().pipeline.store, "gs."));
    let opts = RunOptions {
        max_steps: Some(1),
        sketch_stage: Some(sketch.final_checkpoint.clone()),
        ..RunOptions::new(dir.path().join("face"), StageSelection::Face)
    };
    let face = run_training(&cfg, &data, &opts).unwrap();
    assert!(face.reports.iter().all(|r| r.sketch.is_none() && r.face.is_some()));
    // the sketch generator is frozen during a face-only run
    assert_eq!(params_hash(&face.trainer.pipeline.store, "gs."), trained);
    let stray = dir.path().join("stray.ckpt");
    save_trainer(&Trainer::new(TrainConfig { width_div: 4, ..cfg.clone() }).unwrap(), &stray).unwrap();
    let bad = RunOptions { sketch_stage: Some(stray), ..RunOptions::new(dir.path().join("bad"), StageSelection::Face) };
    assert!(run_training(&cfg, &data, &bad).is_err());
}
