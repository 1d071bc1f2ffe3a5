use std::path::Path;

use attr2face::cache::{read_cache, write_cache};
use attr2face::checkpoint::{load_predictor, load_trainer, save_predictor, save_trainer, Bundle};
use attr2face::dataset::{load_manifest, prepare, read_attribute_table, Split, ATTRIBUTES_FILE, SPLITS_FILE};
use attr2face::synthetic::write_dataset;
use attr2face::Error;
use attr2face_core::attributes::ALL_ATTRIBUTES;
use attr2face_core::config::TrainConfig;
use attr2face_core::predictor::AttributePredictor;
use attr2face_core::train::Trainer;
use attr2face_core::Tensor;

fn dataset(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), n, 3, false).unwrap();
    dir
}

fn rewrite_attributes(root: &Path, f: impl Fn(&str) -> String) {
    let path = root.join(ATTRIBUTES_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, f(&text)).unwrap();
}

#[test]
fn manifest_is_sorted_and_split_filtered() {
    let dir = dataset(20);
    let train = load_manifest(dir.path(), Split::Train).unwrap();
    let val = load_manifest(dir.path(), Split::Val).unwrap();
    let test = load_manifest(dir.path(), Split::Test).unwrap();
    assert_eq!(train.len() + val.len() + test.len(), 20);
    assert!(!val.is_empty() && !test.is_empty());
    let paths: Vec<_> = train.iter().map(|s| s.image_path.clone()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    assert!(train.iter().all(|s| s.split == Split::Train && s.attributes_40.len() == 40));
}

#[test]
fn missing_attribute_row_names_the_image() {
    let dir = dataset(6);
    rewrite_attributes(dir.path(), |t| {
        let mut lines: Vec<&str> = t.lines().collect();
        lines.remove(2);
        lines.join("\n") + "\n"
    });
    let err = load_manifest(dir.path(), Split::Train).unwrap_err();
    let Error::MissingAttributes(path) = &err else { panic!("unexpected error {err}") };
    assert!(err.to_string().contains(&path.display().to_string()));
    assert!(path.starts_with(dir.path()));
}

#[test]
fn malformed_label_is_reported_with_column() {
    let dir = dataset(4);
    rewrite_attributes(dir.path(), |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
        cells[3] = "0.5".into();
        lines[1] = cells.join(",");
        lines.join("\n") + "\n"
    });
    match read_attribute_table(&dir.path().join(ATTRIBUTES_FILE)) {
        Err(Error::MalformedAttribute { column, value, .. }) => {
            assert_eq!(column, ALL_ATTRIBUTES[2]);
            assert_eq!(value, "0.5");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn attribute_columns_may_come_in_any_order() {
    let dir = dataset(5);
    let before = read_attribute_table(&dir.path().join(ATTRIBUTES_FILE)).unwrap();
    rewrite_attributes(dir.path(), |t| {
        t.lines()
            .map(|l| {
                let cells: Vec<&str> = l.split(',').collect();
                let mut out = vec![cells[0]];
                out.extend(cells[1..].iter().rev());
                out.join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    });
    let after = read_attribute_table(&dir.path().join(ATTRIBUTES_FILE)).unwrap();
    assert_eq!(before, after);
}

#[test]
fn unknown_attribute_column_is_rejected() {
    let dir = dataset(3);
    rewrite_attributes(dir.path(), |t| t.replacen("Smiling", "Grinning", 1));
    assert!(read_attribute_table(&dir.path().join(ATTRIBUTES_FILE)).is_err());
}

#[test]
fn image_without_split_is_rejected() {
    let dir = dataset(4);
    let path = dir.path().join(SPLITS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    assert!(matches!(load_manifest(dir.path(), Split::Train), Err(Error::MissingSplit(_))));
}

#[test]
fn sample_cache_round_trips_exactly() {
    let dir = dataset(5);
    let scales = [16, 32];
    let samples = prepare(dir.path(), Split::Train, &scales).unwrap();
    let path = dir.path().join("train.cache");
    write_cache(&path, &scales, &samples).unwrap();
    let (s, back) = read_cache(&path).unwrap();
    assert_eq!(s, scales);
    assert_eq!(back, samples);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    std::fs::write(&path, &bytes).unwrap();
    assert!(read_cache(&path).is_err());
}

#[test]
fn trainer_checkpoint_round_trips_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let trainer = Trainer::new(TrainConfig::smoke()).unwrap();
    let path = dir.path().join("t.ckpt");
    save_trainer(&trainer, &path).unwrap();
    let back = load_trainer(&path).unwrap();
    assert_eq!(back.step, trainer.step);
    assert_eq!(back.config, trainer.config);
    for (name, t) in trainer.pipeline.store.iter() {
        let id = back.pipeline.store.find(name).unwrap();
        assert_eq!(back.pipeline.store.get(id), t, "{name}");
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(Bundle::from_bytes(&path, &bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Bundle::from_bytes(&path, &bad).is_err());
    let missing = dir.path().join("absent.ckpt");
    let err = load_trainer(&missing).unwrap_err();
    assert!(err.to_string().contains("absent.ckpt"));
}

#[test]
fn predictor_save_and_load_preserve_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let p = AttributePredictor::new(64, 9).unwrap();
    let path = dir.path().join("p.ckpt");
    save_predictor(&p, 9, &path).unwrap();
    let q = load_predictor(&path).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let x = Tensor::randn(&[2, 3, 64, 64], 0.5, &mut rng);
    assert_eq!(p.predict(&x).unwrap(), q.predict(&x).unwrap());
    // a pipeline checkpoint is not a predictor
    let t = dir.path().join("t.ckpt");
    save_trainer(&Trainer::new(TrainConfig::smoke()).unwrap(), &t).unwrap();
    assert!(load_predictor(&t).is_err());
}
