use attr2face_core::attributes::{FACE_ATTRS, SKETCH_ATTRS};
use attr2face_core::config::{ModelConfig, TrainConfig};
use attr2face_core::face::FaceGenerator;
use attr2face_core::graph::{Graph, Mode};
use attr2face_core::nn::{describe, kl_regularizer, repeat_rows, GenNoise, Norm, NormKind};
use attr2face_core::optim::{Adam, AdamConfig};
use attr2face_core::params::{Builder, InitKind, ParamStore};
use attr2face_core::sketch::SketchGenerator;
use attr2face_core::train::{StageSelection, Trainer};
use attr2face_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn generators(width_div: usize) -> (ParamStore, SketchGenerator, FaceGenerator) {
    let cfg = ModelConfig { width_div, ..ModelConfig::default() };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gs = SketchGenerator::new(&mut Builder::new(&mut store, &mut rng, "gs"), &cfg).unwrap();
    let gf = FaceGenerator::new(&mut Builder::new(&mut store, &mut rng, "gf"), &cfg).unwrap();
    (store, gs, gf)
}

#[test]
fn kl_hand_examples() {
    // ½(1 + 1 - 1 - 0) for one unit-variance coordinate at μ = 1
    assert!((kl_regularizer(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
    // ½(0 + ¼ - 1 + ln 4) at σ = ½
    let expected = 0.5 * (0.25 - 1.0 + 4f64.ln());
    assert!((kl_regularizer(&[0.0], &[0.5]).unwrap() - expected).abs() < 1e-15);
    // coordinates add
    let both = kl_regularizer(&[1.0, 0.0], &[1.0, 0.5]).unwrap();
    assert!((both - 0.5 - expected).abs() < 1e-15);
    assert!(kl_regularizer(&[0.0], &[0.0]).is_err());
    assert!(kl_regularizer(&[0.0, 1.0], &[1.0]).is_err());
}

#[test]
fn block_stacks_at_full_width() {
    let (_, gs, gf) = generators(1);
    assert_eq!(describe(&gs.stack()), "AA(512)-UP(256)-Res(256)-UP(128)-Res(128)-UP(64)-Res(64)-UP(32)");
    assert_eq!(describe(&gf.stack()), "DO(64)-DO(128)-DO(256)-DO(512)-AA(512)-UP(512)-UP(256)-UP(128)-UP(64)-UP(32)");
    assert_eq!(gs.scales(), &[16, 32, 64]);
    assert_eq!(gf.resolution(), 64);
    assert_eq!((gs.attr_dim(), gf.attr_dim()), (SKETCH_ATTRS, FACE_ATTRS));
}

#[test]
fn width_divisor_scales_every_stage() {
    let (_, gs, gf) = generators(8);
    assert_eq!(describe(&gs.stack()), "AA(64)-UP(32)-Res(32)-UP(16)-Res(16)-UP(8)-Res(8)-UP(4)");
    assert_eq!(describe(&gf.stack()), "DO(8)-DO(16)-DO(32)-DO(64)-AA(64)-UP(64)-UP(32)-UP(16)-UP(8)-UP(4)");
}

#[test]
fn decoder_concatenates_mirrored_encoder_features() {
    let (_, _, gf) = generators(1);
    // (input resolution, input channels, decoder channels, skip channels)
    assert_eq!(gf.skip_audit(), vec![(4, 512, 512, 0), (8, 768, 512, 256), (16, 384, 256, 128), (32, 192, 128, 64)]);
    for (_, cin, dec, skip) in gf.skip_audit() {
        assert_eq!(cin, dec + skip);
    }
}

#[test]
fn face_output_depends_on_the_sketch() {
    let (store, _, gf) = generators(8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = Tensor::new(&[2, FACE_ATTRS], (0..2 * FACE_ATTRS).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let noise = GenNoise::sample(2, 100, 128, &mut rng);
    let run = |sketch: Tensor| {
        let mut g = Graph::new(Mode::Eval);
        let s = g.input(sketch);
        let yv = g.input(y.clone());
        let out = gf.forward(&mut g, &store, s, yv, &noise).unwrap();
        g.value(*out.images.last().unwrap()).clone()
    };
    let a = run(Tensor::full(&[2, 3, 64, 64], 1.0));
    let b = run(Tensor::randn(&[2, 3, 64, 64], 0.5, &mut rng));
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn conditional_norm_keeps_attribute_signal_on_identical_rows() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cbn = Norm::new(&mut Builder::new(&mut store, &mut rng, "cbn"), 4, 6, NormKind::Conditional, false);
    let bn = Norm::new(&mut Builder::new(&mut store, &mut rng, "bn"), 4, 6, NormKind::Plain, false);
    let row: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = Tensor::new(&[3, 4, 3, 3], row.iter().copied().cycle().take(3 * 36).collect()).unwrap();
    let y = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    let out = |norm: &Norm, cond: &[f64]| {
        let mut g = Graph::new(Mode::Train);
        let xv = g.input(x.clone());
        let c = g.input(repeat_rows(cond, 3));
        let parts = norm.forward_parts(&mut g, &store, xv, c).unwrap();
        (g.value(parts.normalized).clone(), g.value(parts.out).clone())
    };
    let (n1, c1) = out(&cbn, &y);
    let (n2, c2) = out(&cbn, &neg);
    // identical rows: batch statistics are per channel over rows and space,
    // so the normalized activations do not depend on the attributes
    assert!(n1.max_abs_diff(&n2) < 1e-12);
    assert!(c1.max_abs_diff(&c2) > 1e-6);
    let (_, p1) = out(&bn, &y);
    let (_, p2) = out(&bn, &neg);
    assert!(p1.max_abs_diff(&p2) < 1e-12);
}

#[test]
fn batch_norm_statistics_are_per_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::randn(&[4, 3, 5, 5], 2.0, &mut rng).map(|v| v + 3.0);
    let mut g = Graph::new(Mode::Train);
    let xv = g.input(x);
    let (v, _) = g.batch_norm(xv).unwrap();
    let t = g.value(v);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| (0..25).map(move |i| (n, i))).map(|(n, i)| t.data()[(n * 3 + c) * 25 + i]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
    }
}

#[test]
fn adam_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = Builder::new(&mut store, &mut rng, "q").param("w", &[8], InitKind::Normal(1.0));
    let mut adam = Adam::new(&store, vec![w], AdamConfig::default());
    let loss_at = |store: &ParamStore| store.get(w).data().iter().map(|v| (v - 0.3).powi(2)).sum::<f64>();
    let start = loss_at(&store);
    for _ in 0..300 {
        let mut g = Graph::new(Mode::Train);
        g.track([w]);
        let wv = g.param(&store, w);
        let d = g.add_scalar(wv, -0.3);
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        adam.step(&mut store, &grads, 0.02).unwrap();
    }
    assert!(loss_at(&store) < start * 1e-3, "{} -> {}", start, loss_at(&store));
}

#[test]
fn staged_schedule_runs_sketch_epochs_first() {
    let cfg = TrainConfig { staged: true, ..TrainConfig::smoke() };
    let t = Trainer::new(cfg.clone()).unwrap();
    let spe = t.steps_per_epoch(16) as u64;
    assert_eq!(t.total_steps(16, StageSelection::Both), 2 * cfg.epochs as u64 * spe);
    assert_eq!(t.schedule(0, 16, StageSelection::Both).0, StageSelection::Sketch);
    let first_face = cfg.epochs as u64 * spe;
    assert_eq!(t.schedule(first_face - 1, 16, StageSelection::Both).0, StageSelection::Sketch);
    assert_eq!(t.schedule(first_face, 16, StageSelection::Both), (StageSelection::Face, 0));
}

#[test]
fn batch_permutation_covers_each_epoch() {
    let t = Trainer::new(TrainConfig::smoke()).unwrap();
    let mut seen: Vec<usize> = (0..2).flat_map(|s| t.batch_indices(s, 16)).collect();
    seen.sort();
    assert_eq!(seen, (0..16).collect::<Vec<_>>());
    assert_ne!(t.batch_indices(0, 16), t.batch_indices(2, 16));
}
