//! Small convolutional attribute predictor, used for the attribute L2
//! metric and, through its penultimate layer, as the default feature
//! extractor for FID.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attributes::FACE_ATTRS;
use crate::data::area_downsample;
use crate::data::Image;
use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::metrics::FeatureSet;
use crate::nn::{Conv2d, Linear};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Builder, ParamStore};
use crate::tensor::Tensor;

/// Version tag persisted with trained predictors.
pub const PREDICTOR_VERSION: &str = "attr-predictor-v1";
const LEAK: f64 = 0.2;
const WIDTHS: [usize; 4] = [16, 32, 64, 64];

#[derive(Clone, Debug)]
pub struct AttributePredictor {
    pub store: ParamStore,
    convs: Vec<Conv2d>,
    head: Linear,
    resolution: usize,
}

/// Settings of [`AttributePredictor::train`].
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, lr: 2e-3, seed: 0 }
    }
}

impl AttributePredictor {
    /// A randomly initialized predictor for `resolution × resolution` inputs.
    pub fn new(resolution: usize, seed: u64) -> Result<Self> {
        if resolution < 16 || !resolution.is_power_of_two() {
            return Err(invalid!("predictor resolution must be a power of two >= 16, got {}", resolution));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng, "ap");
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in WIDTHS.iter().enumerate() {
            convs.push(Conv2d::new(&mut b.sub(&alloc::format!("conv{i}")), cin, c, 4, 2, 1, true));
            cin = c;
        }
        let head = Linear::new(&mut b.sub("head"), cin, FACE_ATTRS, true);
        Ok(Self { store, convs, head, resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn feature_dim(&self) -> usize {
        *WIDTHS.last().expect("non-empty")
    }

    fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(shape_err!("predictor expects [N, 3, {r}, {r}], got {:?}", g.shape(x), r = self.resolution));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, &self.store, h)?;
            h = g.leaky_relu(h, LEAK);
        }
        let feat = g.global_avg_pool(h)?;
        let logits = self.head.forward(g, &self.store, feat)?;
        Ok((feat, g.tanh(logits)))
    }

    /// Penultimate features `[N, 64]` and scores `[N, 23]` in `[-1, 1]`.
    pub fn predict(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(images.clone());
        let (f, s) = self.forward_graph(&mut g, x)?;
        Ok((g.value(f).clone(), g.value(s).clone()))
    }

    /// Trains on `images [N,3,R,R]` with ±1 `labels [N,23]` by squared
    /// error on the tanh scores.
    pub fn train(&mut self, images: &Tensor, labels: &Tensor, cfg: &PredictorTrainConfig) -> Result<Vec<f64>> {
        let (n, ..) = images.dims4()?;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let (ln, ld) = labels.dims2()?;
        if ln != n || ld != FACE_ATTRS {
            return Err(shape_err!("labels {:?} for {} images", labels.shape(), n));
        }
        let ids = self.store.trainable_with_prefix("ap.");
        let mut opt = Adam::new(&self.store, ids.clone(), AdamConfig { beta1: 0.9, ..AdamConfig::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bs = cfg.batch_size.clamp(1, n);
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(bs) {
                let x = Tensor::stack(&chunk.iter().map(|&i| images.select(i)).collect::<Result<Vec<_>>>()?)?;
                let y = Tensor::stack(&chunk.iter().map(|&i| labels.select(i)).collect::<Result<Vec<_>>>()?)?;
                let mut g = Graph::new(Mode::Train);
                g.track(ids.iter().copied());
                let xv = g.input(x);
                let (_, scores) = self.forward_graph(&mut g, xv)?;
                let target = g.input(y);
                let diff = g.sub(scores, target)?;
                let sq = g.mul(diff, diff)?;
                let loss = g.mean(sq);
                let lv = g.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::NonFinite("predictor loss".to_string()));
                }
                epoch_loss += lv * chunk.len() as f64;
                let grads = g.backward(loss)?;
                drop(g);
                opt.step(&mut self.store, &grads, cfg.lr)?;
            }
            history.push(epoch_loss / n as f64);
        }
        Ok(history)
    }
}

/// Mean over attributes of the balanced binary accuracy (average of the
/// per-class hit rates; attributes with a single class use that class).
pub fn balanced_accuracy(scores: &Tensor, labels: &Tensor) -> Result<(f64, Vec<f64>)> {
    let (n, d) = labels.dims2()?;
    if scores.shape() != labels.shape() || n == 0 {
        return Err(shape_err!("scores {:?} vs labels {:?}", scores.shape(), labels.shape()));
    }
    let mut per = Vec::with_capacity(d);
    for j in 0..d {
        let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..n {
            let y = labels.data()[i * d + j];
            let s = scores.data()[i * d + j];
            if y > 0.0 {
                pos += 1;
                tp += (s > 0.0) as usize;
            } else {
                neg += 1;
                tn += (s <= 0.0) as usize;
            }
        }
        let rates: Vec<f64> = [(tp, pos), (tn, neg)]
            .iter()
            .filter(|(_, total)| *total > 0)
            .map(|&(hit, total)| hit as f64 / total as f64)
            .collect();
        per.push(rates.iter().sum::<f64>() / rates.len() as f64);
    }
    Ok((per.iter().sum::<f64>() / d as f64, per))
}

/// Maps a batch of images to embedding vectors.
pub trait FeatureExtractor {
    fn id(&self) -> String;
    fn embed(&self, images: &Tensor) -> Result<Tensor>;
}

/// Penultimate layer of an [`AttributePredictor`].
pub struct PredictorFeatures<'a>(pub &'a AttributePredictor);

impl FeatureExtractor for PredictorFeatures<'_> {
    fn id(&self) -> String {
        PREDICTOR_VERSION.to_string()
    }

    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.0.predict(images)?.0)
    }
}

/// Area-downsampled pixels (`size × size × 3` values per image).
pub struct PixelFeatures {
    pub size: usize,
}

impl FeatureExtractor for PixelFeatures {
    fn id(&self) -> String {
        alloc::format!("pixels{}", self.size)
    }

    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (n, ..) = images.dims4()?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let im = Image::from_chw(&images.select(i)?)?;
            rows.push(Tensor::new(&[self.size * self.size * 3], area_downsample(&im, self.size)?.data)?);
        }
        Tensor::stack(&rows)
    }
}

/// Registered extractor names.
pub const EXTRACTORS: [&str; 2] = ["predictor", "pixels8"];

/// Looks up an extractor by name; `predictor` needs a trained predictor.
pub fn extractor_by_name<'a>(name: &str, predictor: Option<&'a AttributePredictor>) -> Result<Box<dyn FeatureExtractor + 'a>> {
    match (name, predictor) {
        ("predictor", Some(p)) => Ok(Box::new(PredictorFeatures(p))),
        ("predictor", None) => Err(invalid!("the predictor extractor needs a trained predictor")),
        ("pixels8", _) => Ok(Box::new(PixelFeatures { size: 8 })),
        _ => Err(Error::UnknownExtractor(name.to_string())),
    }
}

/// Embeds `images [N,3,R,R]` in chunks of `chunk` images.
pub fn extract_features(images: &Tensor, extractor: &dyn FeatureExtractor, chunk: usize) -> Result<FeatureSet> {
    let (n, ..) = images.dims4()?;
    let mut data = Vec::new();
    let mut dim = 0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let part = Tensor::stack(&(start..end).map(|i| images.select(i)).collect::<Result<Vec<_>>>()?)?;
        let f = extractor.embed(&part)?;
        dim = f.dims2()?.1;
        data.extend_from_slice(f.data());
        start = end;
    }
    FeatureSet::new(&extractor.id(), n, dim, data)
}
