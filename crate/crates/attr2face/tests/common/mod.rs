use std::path::Path;

use attr2face::checkpoint::save_trainer;
use attr2face_core::config::TrainConfig;
use attr2face_core::train::Trainer;
use attr2face_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A smoke-width pipeline whose generator weights are redrawn at He scale,
/// so that untrained outputs vary visibly with noise and attributes.
pub fn random_model(path: &Path) {
    let mut trainer = Trainer::new(TrainConfig::smoke()).unwrap();
    let store = &mut trainer.pipeline.store;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| {
            let name = store.name(id);
            (name.starts_with("gs.") || name.starts_with("gf.")) && name.ends_with(".weight")
        })
        .collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        let fan_in = shape[1..].iter().product::<usize>().max(1);
        store.set(id, Tensor::randn(&shape, (2.0 / fan_in as f64).sqrt(), &mut rng)).unwrap();
    }
    save_trainer(&trainer, path).unwrap();
}
