//! Models, optimizers and the alternating discriminator/generator step.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attributes::sample_mismatch;
use crate::config::{lr_schedule, ModelConfig, Stage, TrainConfig};
use crate::data::CuratedSample;
use crate::discriminator::{DiscriminatorSet, Judgment};
use crate::error::{invalid, Error, Result};
use crate::face::FaceGenerator;
use crate::graph::{Graph, Mode, Var};
use crate::loss::{discriminator_loss, generator_adv_loss, total_loss};
use crate::nn::GenNoise;
use crate::optim::{Adam, AdamConfig};
use crate::params::{Builder, ParamStore};
use crate::sketch::SketchGenerator;
use crate::tensor::Tensor;

/// Parameter-name prefixes of the four networks.
pub const SKETCH_G: &str = "gs";
pub const SKETCH_D: &str = "ds";
pub const FACE_G: &str = "gf";
pub const FACE_D: &str = "df";

fn group(prefix: &str) -> String {
    alloc::format!("{prefix}.")
}

/// The four networks of the pipeline.
#[derive(Clone, Debug)]
pub struct Models {
    pub sketch_g: SketchGenerator,
    pub sketch_d: DiscriminatorSet,
    pub face_g: FaceGenerator,
    pub face_d: DiscriminatorSet,
}

/// Parameters and architecture of both stages.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub models: Models,
}

impl Pipeline {
    /// Builds all networks, initializing parameters from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sketch_g = SketchGenerator::new(&mut Builder::new(&mut store, &mut rng, SKETCH_G), config)?;
        let sketch_d =
            DiscriminatorSet::new(&mut Builder::new(&mut store, &mut rng, SKETCH_D), config, sketch_g.attr_dim());
        let face_g = FaceGenerator::new(&mut Builder::new(&mut store, &mut rng, FACE_G), config)?;
        let face_d = DiscriminatorSet::new(&mut Builder::new(&mut store, &mut rng, FACE_D), config, face_g.attr_dim());
        Ok(Self { config: config.clone(), store, models: Models { sketch_g, sketch_d, face_g, face_d } })
    }

    pub fn scales(&self) -> &[usize] {
        &self.config.scales
    }

    /// Inference: top-scale sketches and faces for `y_f [N, 23]`.
    /// Returns `(sketches, faces)`, both `[N, 3, R, R]` in `[-1, 1]`.
    pub fn synthesize(&self, y_f: &Tensor, noise_s: &GenNoise, noise_f: &GenNoise) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new(Mode::Eval);
        let (n, _) = y_f.dims2()?;
        let ys = crate::nn::leading_columns(y_f, self.models.sketch_g.attr_dim())?;
        let ys = g.input(ys);
        let yf = g.input(y_f.clone());
        let out_s = self.models.sketch_g.forward(&mut g, &self.store, ys, noise_s)?;
        let sketch = *out_s.images.last().expect("at least one scale");
        let out_f = self.models.face_g.forward(&mut g, &self.store, sketch, yf, noise_f)?;
        let face = *out_f.images.last().expect("at least one scale");
        let s = g.value(sketch).clone();
        let f = g.value(face).clone();
        debug_assert_eq!(f.shape()[0], n);
        Ok((s, f))
    }
}

/// One Adam instance per network.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub sketch_g: Adam,
    pub sketch_d: Adam,
    pub face_g: Adam,
    pub face_d: Adam,
}

impl Optimizers {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let mk = |p: &str| Adam::new(store, store.trainable_with_prefix(&group(p)), config);
        Self { sketch_g: mk(SKETCH_G), sketch_d: mk(SKETCH_D), face_g: mk(FACE_G), face_d: mk(FACE_D) }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Adam)> {
        [(SKETCH_G, &self.sketch_g), (SKETCH_D, &self.sketch_d), (FACE_G, &self.face_g), (FACE_D, &self.face_d)]
            .into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut Adam)> {
        [
            (SKETCH_G, &mut self.sketch_g),
            (SKETCH_D, &mut self.sketch_d),
            (FACE_G, &mut self.face_g),
            (FACE_D, &mut self.face_d),
        ]
        .into_iter()
    }
}

/// A curated sample converted to `[3, r, r]` tensors once.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub faces: Vec<Tensor>,
    pub sketches: Vec<Tensor>,
    pub y_s: Vec<f64>,
    pub y_f: Vec<f64>,
}

/// In-memory training set at fixed scales.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub scales: Vec<usize>,
    pub samples: Vec<PreparedSample>,
}

impl TrainSet {
    pub fn new(samples: &[CuratedSample], scales: &[usize]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let level = |p: &crate::data::ImagePyramid, r: usize| {
            p.level(r).map(|im| im.to_chw()).ok_or_else(|| invalid!("sample lacks the {}x{} level", r, r))
        };
        let samples = samples
            .iter()
            .map(|s| {
                Ok(PreparedSample {
                    faces: scales.iter().map(|&r| level(&s.face, r)).collect::<Result<_>>()?,
                    sketches: scales.iter().map(|&r| level(&s.sketch, r)).collect::<Result<_>>()?,
                    y_s: s.y_s.clone(),
                    y_f: s.y_f.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales: scales.to_vec(), samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Batched tensors for one step. Image lists are indexed like the scales.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub y_s: Tensor,
    pub y_f: Tensor,
    pub faces: Vec<Tensor>,
    pub sketches: Vec<Tensor>,
    /// Real sketches whose texture attributes differ from the row's `y_s`.
    pub wrong_sketches: Vec<Tensor>,
    /// Real faces whose attributes differ from the row's `y_f`.
    pub wrong_faces: Vec<Tensor>,
}

impl TrainBatch {
    pub fn size(&self) -> usize {
        self.y_f.shape()[0]
    }

    /// Gathers `indices` from `set`; wrong pairs are drawn with `rng`.
    pub fn assemble<R: Rng + ?Sized>(set: &TrainSet, indices: &[usize], rng: &mut R) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::BatchTooSmall(indices.len()));
        }
        let all_s: Vec<&[f64]> = set.samples.iter().map(|s| s.y_s.as_slice()).collect();
        let all_f: Vec<&[f64]> = set.samples.iter().map(|s| s.y_f.as_slice()).collect();
        let mut wrong_s = Vec::with_capacity(indices.len());
        let mut wrong_f = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = set.samples.get(i).ok_or_else(|| invalid!("sample index {} out of range", i))?;
            wrong_s.push(sample_mismatch(&all_s, &s.y_s, rng)?);
            wrong_f.push(sample_mismatch(&all_f, &s.y_f, rng)?);
        }
        let rows = |idx: &[usize], f: &dyn Fn(&PreparedSample) -> &[f64]| -> Result<Tensor> {
            let d = f(&set.samples[idx[0]]).len();
            let data = idx.iter().flat_map(|&i| f(&set.samples[i]).iter().copied()).collect();
            Tensor::new(&[idx.len(), d], data)
        };
        let images = |idx: &[usize], sketch: bool| -> Result<Vec<Tensor>> {
            (0..set.scales.len())
                .map(|k| {
                    let items: Vec<Tensor> = idx
                        .iter()
                        .map(|&i| {
                            let s = &set.samples[i];
                            if sketch { s.sketches[k].clone() } else { s.faces[k].clone() }
                        })
                        .collect();
                    Tensor::stack(&items)
                })
                .collect()
        };
        Ok(Self {
            y_s: rows(indices, &|s| &s.y_s)?,
            y_f: rows(indices, &|s| &s.y_f)?,
            faces: images(indices, false)?,
            sketches: images(indices, true)?,
            wrong_sketches: images(&wrong_s, true)?,
            wrong_faces: images(&wrong_f, false)?,
        })
    }
}

/// Which generators a step trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StageSelection {
    Sketch,
    Face,
    Both,
}

impl StageSelection {
    pub fn includes(self, stage: Stage) -> bool {
        matches!(
            (self, stage),
            (StageSelection::Both, _) | (StageSelection::Sketch, Stage::Sketch) | (StageSelection::Face, Stage::Face)
        )
    }
}

/// Discriminator loss terms at one scale.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScaleLoss {
    pub resolution: usize,
    pub d_total: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub d_wrong: f64,
    /// Mean unconditional judgment on real / fake images (before the D update).
    pub real_judgment: f64,
    pub fake_judgment: f64,
}

/// Loss terms of one stage for one step.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageReport {
    pub scales: Vec<ScaleLoss>,
    /// Sum of the per-scale discriminator losses.
    pub d_loss: f64,
    /// Generator adversarial loss summed over scales.
    pub g_adv: f64,
    /// Batch-mean KL divergence of the AA embedding.
    pub kl: f64,
    /// `g_adv + lambda * kl`.
    pub g_total: f64,
    pub lambda: f64,
    pub lr: f64,
    /// Mean over scales of (real judgment − fake judgment).
    pub judgment_gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossReport {
    pub step: u64,
    pub epoch: usize,
    pub selection: StageSelection,
    pub sketch: Option<StageReport>,
    pub face: Option<StageReport>,
    /// Seconds spent in the step; filled in by the caller, never compared.
    pub wall_clock: f64,
}

impl LossReport {
    /// Every loss value in the report, labelled.
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (name, r) in [("sketch", &self.sketch), ("face", &self.face)] {
            let Some(r) = r else { continue };
            for s in &r.scales {
                for (k, v) in [("d_total", s.d_total), ("d_real", s.d_real), ("d_fake", s.d_fake), ("d_wrong", s.d_wrong)] {
                    out.push((alloc::format!("{name}.{}.{k}", s.resolution), v));
                }
            }
            for (k, v) in [("d_loss", r.d_loss), ("g_adv", r.g_adv), ("kl", r.kl), ("g_total", r.g_total), ("lr", r.lr)] {
                out.push((alloc::format!("{name}.{k}"), v));
            }
        }
        out
    }

    /// Same report with the wall-clock field cleared, for comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_clock: 0.0, ..self.clone() }
    }
}

/// Learning rates for both stages at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRates {
    pub sketch: f64,
    pub face: f64,
}

/// Per-stage forward state kept between the D and G updates.
struct StageForward {
    fakes: Vec<Var>,
    mu: Var,
    sigma: Var,
}

fn mean_of(t: &Tensor) -> f64 {
    t.mean()
}

fn judge_all(
    g: &mut Graph,
    p: &ParamStore,
    set: &DiscriminatorSet,
    images: &[Var],
    y: Var,
) -> Result<Vec<Judgment>> {
    images.iter().map(|&x| set.judge(g, p, x, y)).collect()
}

/// One discriminator update for a stage; returns per-scale loss terms.
#[allow(clippy::too_many_arguments)]
fn discriminator_pass(
    g: &mut Graph,
    p: &ParamStore,
    set: &DiscriminatorSet,
    scales: &[usize],
    real: &[Tensor],
    fake: &[Tensor],
    wrong: &[Tensor],
    y: &Tensor,
) -> Result<(Var, Vec<ScaleLoss>)> {
    let yv = g.input(y.clone());
    let mut total: Option<Var> = None;
    let mut out = Vec::with_capacity(scales.len());
    for (k, &r) in scales.iter().enumerate() {
        let d = set.get(r)?;
        let xr = g.input(real[k].clone());
        let xf = g.input(fake[k].clone());
        let xw = g.input(wrong[k].clone());
        let jr = d.forward(g, p, xr, yv)?;
        let jf = d.forward(g, p, xf, yv)?;
        let jw = d.forward(g, p, xw, yv)?;
        let l = discriminator_loss(g, &jr, &jf, &jw)?;
        out.push(ScaleLoss {
            resolution: r,
            d_total: g.value(l.total).item(),
            d_real: g.value(l.real).item(),
            d_fake: g.value(l.fake).item(),
            d_wrong: g.value(l.wrong).item(),
            real_judgment: mean_of(g.value(jr.uncond)),
            fake_judgment: mean_of(g.value(jf.uncond)),
        });
        total = Some(match total {
            None => l.total,
            Some(t) => g.add(t, l.total)?,
        });
    }
    Ok((total.ok_or_else(|| invalid!("no scales"))?, out))
}

fn check_finite(label: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(label.to_string()));
        }
    }
    Ok(())
}

fn apply_buffers(store: &mut ParamStore, updates: Vec<(crate::params::ParamId, Tensor)>, prefixes: &[&str]) -> Result<()> {
    for (id, t) in updates {
        let name = store.name(id);
        if prefixes.iter().any(|p| name.starts_with(&group(p))) {
            store.set(id, t)?;
        }
    }
    Ok(())
}

fn values(g: &Graph, vs: &[Var]) -> Vec<Tensor> {
    vs.iter().map(|&v| g.value(v).clone()).collect()
}

/// Training state: parameters, optimizers and the step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub pipeline: Pipeline,
    pub optimizers: Optimizers,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let pipeline = Pipeline::new(&config.model(), config.seed)?;
        let adam = AdamConfig { beta1: config.adam_beta1, beta2: config.adam_beta2, ..AdamConfig::default() };
        let optimizers = Optimizers::new(&pipeline.store, adam);
        Ok(Self { config, pipeline, optimizers, step: 0 })
    }

    pub fn steps_per_epoch(&self, set_len: usize) -> usize {
        (set_len / self.config.batch_size).max(1)
    }

    /// Stage selection and within-stage epoch for `step` under `plan`.
    pub fn schedule(&self, step: u64, set_len: usize, plan: StageSelection) -> (StageSelection, usize) {
        let epoch = (step / self.steps_per_epoch(set_len) as u64) as usize;
        if plan == StageSelection::Both && self.config.staged {
            if epoch < self.config.epochs {
                (StageSelection::Sketch, epoch)
            } else {
                (StageSelection::Face, epoch - self.config.epochs)
            }
        } else {
            (plan, epoch)
        }
    }

    /// Total number of steps a full run of `plan` takes.
    pub fn total_steps(&self, set_len: usize, plan: StageSelection) -> u64 {
        let epochs = if plan == StageSelection::Both && self.config.staged { 2 } else { 1 } * self.config.epochs;
        (epochs * self.steps_per_epoch(set_len)) as u64
    }

    /// Batch indices for `step`: a seeded permutation per epoch, sliced.
    pub fn batch_indices(&self, step: u64, set_len: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(set_len) as u64;
        let epoch = step / spe;
        let within = (step % spe) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(epoch);
        let mut perm: Vec<usize> = (0..set_len).collect();
        perm.shuffle(&mut rng);
        let b = self.config.batch_size.min(set_len);
        perm[within * b..(within + 1) * b].to_vec()
    }

    /// Random stream of `step`.
    pub fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        rng
    }

    /// Runs the next step of `plan` on `set`.
    pub fn next_step(&mut self, set: &TrainSet, plan: StageSelection) -> Result<LossReport> {
        let (sel, epoch) = self.schedule(self.step, set.len(), plan);
        let rates = StepRates {
            sketch: lr_schedule(epoch, &self.config, Stage::Sketch)?,
            face: lr_schedule(epoch, &self.config, Stage::Face)?,
        };
        let mut rng = self.step_rng(self.step);
        let idx = self.batch_indices(self.step, set.len());
        let batch = TrainBatch::assemble(set, &idx, &mut rng)?;
        let mut report = self.train_step(&batch, sel, rates, &mut rng)?;
        report.epoch = epoch;
        Ok(report)
    }

    /// One discriminator update (all scales, per selected stage) followed by
    /// one generator update. The KL term enters only the generator update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &TrainBatch,
        sel: StageSelection,
        rates: StepRates,
        rng: &mut R,
    ) -> Result<LossReport> {
        let n = batch.size();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let cfg = &self.config;
        let scales = self.pipeline.config.scales.clone();
        let models = self.pipeline.models.clone();
        let mc = &self.pipeline.config;
        let noise_s = GenNoise::sample(n, mc.noise_dim, mc.latent_dim, rng);
        let noise_f = GenNoise::sample(n, mc.noise_dim, mc.latent_dim, rng);
        let do_s = sel.includes(Stage::Sketch);
        let do_f = sel.includes(Stage::Face);

        // generator forward
        let mut gg = Graph::new(Mode::Train);
        if do_s {
            gg.track(self.pipeline.store.trainable_with_prefix(&group(SKETCH_G)));
        }
        if do_f {
            gg.track(self.pipeline.store.trainable_with_prefix(&group(FACE_G)));
        }
        let ys = gg.input(batch.y_s.clone());
        let yf = gg.input(batch.y_f.clone());
        let mut fwd_s = None;
        let mut fwd_f = None;
        let store = &self.pipeline.store;
        let face_input: Option<Var> = if do_f && cfg.ground_truth_sketch {
            Some(gg.input(batch.sketches.last().expect("scales").clone()))
        } else {
            None
        };
        let mut sketch_top = None;
        if do_s {
            let out = models.sketch_g.forward(&mut gg, store, ys, &noise_s)?;
            sketch_top = out.images.last().copied();
            fwd_s = Some(StageForward { fakes: out.images, mu: out.embedding.mu, sigma: out.embedding.sigma });
        }
        if do_f {
            let sketch = match (face_input, sketch_top) {
                (Some(s), _) => s,
                (None, Some(s)) if !cfg.stop_gradient_sketch => s,
                (None, Some(s)) => gg.detach(s),
                (None, None) => {
                    // frozen sketch generator evaluated with its running statistics
                    let mut ge = Graph::new(Mode::Eval);
                    let ye = ge.input(batch.y_s.clone());
                    let out = models.sketch_g.forward(&mut ge, store, ye, &noise_s)?;
                    let top = *out.images.last().expect("scales");
                    gg.input(ge.value(top).clone())
                }
            };
            let out = models.face_g.forward(&mut gg, store, sketch, yf, &noise_f)?;
            fwd_f = Some(StageForward { fakes: out.images, mu: out.embedding.mu, sigma: out.embedding.sigma });
        }

        // discriminator update
        let mut gd = Graph::new(Mode::Train);
        let mut d_loss: Option<Var> = None;
        let mut s_scales = Vec::new();
        let mut f_scales = Vec::new();
        if let Some(f) = &fwd_s {
            gd.track(store.trainable_with_prefix(&group(SKETCH_D)));
            let (l, per) = discriminator_pass(
                &mut gd,
                store,
                &models.sketch_d,
                &scales,
                &batch.sketches,
                &values(&gg, &f.fakes),
                &batch.wrong_sketches,
                &batch.y_s,
            )?;
            d_loss = Some(l);
            s_scales = per;
        }
        if let Some(f) = &fwd_f {
            gd.track(store.trainable_with_prefix(&group(FACE_D)));
            let (l, per) = discriminator_pass(
                &mut gd,
                store,
                &models.face_d,
                &scales,
                &batch.faces,
                &values(&gg, &f.fakes),
                &batch.wrong_faces,
                &batch.y_f,
            )?;
            d_loss = Some(match d_loss {
                None => l,
                Some(t) => gd.add(t, l)?,
            });
            f_scales = per;
        }
        let d_loss = d_loss.ok_or_else(|| invalid!("empty stage selection"))?;
        check_finite("discriminator loss", [gd.value(d_loss).item()])?;
        let d_grads = gd.backward(d_loss)?;
        let d_buffers = gd.take_buffer_updates();
        drop(gd);
        let store = &mut self.pipeline.store;
        if do_s {
            self.optimizers.sketch_d.step(store, &d_grads, rates.sketch)?;
        }
        if do_f {
            self.optimizers.face_d.step(store, &d_grads, rates.face)?;
        }
        apply_buffers(store, d_buffers, &[SKETCH_D, FACE_D])?;
        drop(d_grads);

        // generator update against the refreshed discriminators
        let g_buffers = gg.take_buffer_updates();
        let mut g_total: Option<Var> = None;
        let mut summaries: [Option<(f64, f64, f64)>; 2] = [None, None];
        for (slot, (fwd, dset, y, lambda)) in [
            (&fwd_s, &models.sketch_d, ys, cfg.lambda_s),
            (&fwd_f, &models.face_d, yf, cfg.lambda_f),
        ]
        .into_iter()
        .enumerate()
        {
            let Some(f) = fwd else { continue };
            let judgments = judge_all(&mut gg, store, dset, &f.fakes, y)?;
            let adv = generator_adv_loss(&mut gg, &judgments, cfg.generator_loss)?;
            let kl = gg.kl(f.mu, f.sigma)?;
            let t = total_loss(&mut gg, adv, kl, lambda)?;
            summaries[slot] = Some((gg.value(adv).item(), gg.value(kl).item(), gg.value(t).item()));
            g_total = Some(match g_total {
                None => t,
                Some(acc) => gg.add(acc, t)?,
            });
        }
        let g_total = g_total.ok_or_else(|| invalid!("empty stage selection"))?;
        check_finite("generator loss", [gg.value(g_total).item()])?;
        let g_grads = gg.backward(g_total)?;
        drop(gg);
        if do_s {
            self.optimizers.sketch_g.step(store, &g_grads, rates.sketch)?;
        }
        if do_f {
            self.optimizers.face_g.step(store, &g_grads, rates.face)?;
        }
        let mut g_groups = Vec::new();
        if do_s {
            g_groups.push(SKETCH_G);
        }
        if do_f {
            g_groups.push(FACE_G);
        }
        apply_buffers(store, g_buffers, &g_groups)?;

        let make = |scales: Vec<ScaleLoss>, s: Option<(f64, f64, f64)>, lambda: f64, lr: f64| {
            s.map(|(g_adv, kl, g_total)| {
                let d_loss = scales.iter().map(|s| s.d_total).sum();
                let judgment_gap = scales.iter().map(|s| s.real_judgment - s.fake_judgment).sum::<f64>()
                    / scales.len() as f64;
                StageReport { scales, d_loss, g_adv, kl, g_total, lambda, lr, judgment_gap }
            })
        };
        let report = LossReport {
            step: self.step,
            epoch: 0,
            selection: sel,
            sketch: make(s_scales, summaries[0], cfg.lambda_s, rates.sketch),
            face: make(f_scales, summaries[1], cfg.lambda_f, rates.face),
            wall_clock: 0.0,
        };
        check_finite("loss report", report.values().into_iter().map(|(_, v)| v))?;
        self.step += 1;
        Ok(report)
    }
}
