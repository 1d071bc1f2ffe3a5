//! Inference: attribute vectors → sketches and faces, with reproducible
//! per-image noise.

use std::path::Path;

use attr2face_core::attributes::{compose, curated_index, FACE_ATTRS, PROGRESSION_WEIGHTS, SKETCH_ATTRS};
use attr2face_core::data::Image;
use attr2face_core::nn::{leading_columns, GenNoise};
use attr2face_core::train::Pipeline;
use attr2face_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{file_hash, load_trainer};
use crate::error::{Error, Result};

/// A loaded, immutable generator pair.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub pipeline: Pipeline,
    pub model_hash: String,
}

/// Faces (and optionally sketches) as `[0,1]` RGB images.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub faces: Vec<Image>,
    pub sketches: Vec<Image>,
}

/// Noise of the `index`-th image of a request seeded with `seed`: an
/// independent ChaCha stream per index.
pub fn image_noise(seed: u64, index: u64, noise_dim: usize, latent_dim: usize) -> (GenNoise, GenNoise) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = GenNoise::sample(1, noise_dim, latent_dim, &mut rng);
    let f = GenNoise::sample(1, noise_dim, latent_dim, &mut rng);
    (s, f)
}

/// Validates a request vector and clamps it to `[-1, 1]`.
pub fn checked_attributes(attributes: &[f64]) -> Result<Vec<f64>> {
    if attributes.len() != FACE_ATTRS {
        return Err(Error::Config(format!("expected {FACE_ATTRS} attribute values, got {}", attributes.len())));
    }
    if attributes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("attribute values must be finite".into()));
    }
    Ok(attributes.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

impl Synthesizer {
    pub fn new(pipeline: Pipeline, model_hash: String) -> Self {
        Self { pipeline, model_hash }
    }

    /// Loads the generators of a pipeline checkpoint; the model hash is the
    /// checkpoint file's SHA-256.
    pub fn load(path: &Path) -> Result<Self> {
        let trainer = load_trainer(path)?;
        Ok(Self::new(trainer.pipeline, file_hash(path)?))
    }

    pub fn resolution(&self) -> usize {
        *self.pipeline.scales().last().expect("validated scales")
    }

    /// The sketch-stage condition derived from a face-stage vector: its first
    /// 17 coordinates, checked against the request.
    pub fn texture_slice(&self, y_f: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(&[1, FACE_ATTRS], y_f.to_vec())?;
        let s = leading_columns(&t, SKETCH_ATTRS)?.into_data();
        if s[..] != y_f[..SKETCH_ATTRS] {
            return Err(Error::Config("texture slice differs from the request vector".into()));
        }
        Ok(s)
    }

    /// One image per noise index `0..count`.
    pub fn synthesize(&self, attributes: &[f64], seed: u64, count: usize) -> Result<Synthesis> {
        let y = checked_attributes(attributes)?;
        self.texture_slice(&y)?;
        self.render(&(0..count as u64).map(|i| (y.clone(), i)).collect::<Vec<_>>(), seed)
    }

    /// Renders `(attributes, noise index)` pairs one image at a time.
    pub fn render(&self, items: &[(Vec<f64>, u64)], seed: u64) -> Result<Synthesis> {
        let mc = &self.pipeline.config;
        let mut out = Synthesis { faces: Vec::with_capacity(items.len()), sketches: Vec::with_capacity(items.len()) };
        for (y, index) in items {
            let (ns, nf) = image_noise(seed, *index, mc.noise_dim, mc.latent_dim);
            let yt = Tensor::new(&[1, FACE_ATTRS], y.clone())?;
            let (s, f) = self.pipeline.synthesize(&yt, &ns, &nf)?;
            out.sketches.push(Image::from_chw(&s)?.to_unit());
            out.faces.push(Image::from_chw(&f)?.to_unit());
        }
        Ok(out)
    }

    /// Sweeps `attribute` over the six progression weights with the noise of
    /// index 0, so only the attribute changes along the strip.
    pub fn progression(&self, attribute: &str, base: &[f64], seed: u64) -> Result<(Vec<f64>, Synthesis)> {
        curated_index(attribute)?;
        let base = checked_attributes(base)?;
        let items = PROGRESSION_WEIGHTS
            .iter()
            .map(|&w| Ok((compose(&base, &[(attribute, w)])?, 0)))
            .collect::<Result<Vec<_>>>()?;
        Ok((PROGRESSION_WEIGHTS.to_vec(), self.render(&items, seed)?))
    }
}
