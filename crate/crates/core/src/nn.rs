//! Layers and the generator building blocks: attribute augmentation (AA),
//! conditional batch normalization, and the UP / DO / Res / STR modules.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, Mode, Var, BN_EPS};
use crate::params::{Builder, InitKind, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;
/// Momentum of the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

/// `Σ_i ½(μ_i² + σ_i² − 1 − ln σ_i²)`, the KL divergence of a diagonal
/// Gaussian from the standard normal.
pub fn kl_regularizer(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(shape_err!("kl: mu has {} entries, sigma {}", mu.len(), sigma.len()));
    }
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSigma(s));
        }
        let s2 = s * s;
        total += 0.5 * (m * m + s2 - 1.0 - libm::log(s2));
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, din: usize, dout: usize, bias: bool) -> Self {
        Self::with_init(b, din, dout, bias, InitKind::Normal(INIT_STD), 0.0)
    }

    pub fn with_init<R: Rng + ?Sized>(
        b: &mut Builder<'_, R>,
        din: usize,
        dout: usize,
        bias: bool,
        weight: InitKind,
        bias_value: f64,
    ) -> Self {
        let w = b.param("weight", &[dout, din], weight);
        let bias = bias.then(|| b.param("bias", &[dout], InitKind::Const(bias_value)));
        Self { w, b: bias, in_dim: din, out_dim: dout }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = self.b.map(|b| g.param(p, b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        b: &mut Builder<'_, R>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let w = b.param("weight", &[cout, cin, kernel, kernel], InitKind::Normal(INIT_STD));
        let bias = bias.then(|| b.param("bias", &[cout], InitKind::Const(0.0)));
        Self { w, b: bias, stride, pad, in_channels: cin, out_channels: cout }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = self.b.map(|b| g.param(p, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Which normalization the generators use. `Plain` is kept for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NormKind {
    Conditional,
    Plain,
}

#[derive(Clone, Debug)]
enum Affine {
    Plain { gamma: ParamId, beta: ParamId },
    Conditional { gamma: Linear, beta: Linear },
}

/// Batch normalization whose scale and shift are either free parameters
/// (`Plain`) or affine functions of a conditioning vector (`Conditional`).
#[derive(Clone, Debug)]
pub struct Norm {
    affine: Affine,
    running_mean: ParamId,
    running_var: ParamId,
    pub channels: usize,
}

/// Output of [`Norm::forward_parts`].
pub struct NormParts {
    /// Normalized activations before scale/shift.
    pub normalized: Var,
    pub out: Var,
}

impl Norm {
    /// `zero_init` starts the layer at output zero (scale 0, shift 0).
    pub fn new<R: Rng + ?Sized>(
        b: &mut Builder<'_, R>,
        channels: usize,
        cond_dim: usize,
        kind: NormKind,
        zero_init: bool,
    ) -> Self {
        let affine = match kind {
            NormKind::Plain => Affine::Plain {
                gamma: b.param("gamma", &[channels], InitKind::Const(if zero_init { 0.0 } else { 1.0 })),
                beta: b.param("beta", &[channels], InitKind::Const(0.0)),
            },
            NormKind::Conditional => {
                let w = if zero_init { InitKind::Const(0.0) } else { InitKind::Normal(INIT_STD) };
                let g0 = if zero_init { 0.0 } else { 1.0 };
                Affine::Conditional {
                    gamma: Linear::with_init(&mut b.sub("gamma"), cond_dim, channels, true, w, g0),
                    beta: Linear::with_init(&mut b.sub("beta"), cond_dim, channels, true, w, 0.0),
                }
            }
        };
        let running_mean = b.buffer("running_mean", Tensor::zeros(&[channels]));
        let running_var = b.buffer("running_var", Tensor::ones(&[channels]));
        Self { affine, running_mean, running_var, channels }
    }

    pub fn kind(&self) -> NormKind {
        match self.affine {
            Affine::Plain { .. } => NormKind::Plain,
            Affine::Conditional { .. } => NormKind::Conditional,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, cond: Var) -> Result<Var> {
        Ok(self.forward_parts(g, p, x, cond)?.out)
    }

    pub fn forward_parts(&self, g: &mut Graph, p: &ParamStore, x: Var, cond: Var) -> Result<NormParts> {
        let c = *g.shape(x).get(1).ok_or_else(|| shape_err!("norm: input {:?}", g.shape(x)))?;
        if c != self.channels {
            return Err(shape_err!("norm: {} channels, layer has {}", c, self.channels));
        }
        let normalized = match g.mode() {
            Mode::Train => {
                let (v, stats) = g.batch_norm(x)?;
                let old_m = p.get(self.running_mean).data();
                let old_v = p.get(self.running_var).data();
                let unbias = stats.count as f64 / (stats.count as f64 - 1.0);
                let rm: Vec<f64> = old_m
                    .iter()
                    .zip(&stats.mean)
                    .map(|(o, m)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * m)
                    .collect();
                let rv: Vec<f64> = old_v
                    .iter()
                    .zip(&stats.var)
                    .map(|(o, v)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * v * unbias)
                    .collect();
                g.record_buffer(self.running_mean, Tensor::new(&[c], rm)?);
                g.record_buffer(self.running_var, Tensor::new(&[c], rv)?);
                v
            }
            Mode::Eval => {
                let mean = p.get(self.running_mean).data();
                let var = p.get(self.running_var).data();
                let scale: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
                let shift: Vec<f64> = mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
                g.channel_affine(x, scale, &shift)?
            }
        };
        let out = match &self.affine {
            Affine::Plain { gamma, beta } => {
                let gm = g.param(p, *gamma);
                let bt = g.param(p, *beta);
                g.modulate(normalized, gm, bt)?
            }
            Affine::Conditional { gamma, beta } => {
                let gm = gamma.forward(g, p, cond)?;
                let bt = beta.forward(g, p, cond)?;
                g.modulate(normalized, gm, bt)?
            }
        };
        Ok(NormParts { normalized, out })
    }
}

/// Graph handles of a [`AttributeAugment`] forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub mu: Var,
    pub sigma: Var,
    pub latent: Var,
    pub noise: Var,
    /// `concat(latent, noise)`, consumed by the generator stack.
    pub code: Var,
}

/// Standard-normal draws consumed by one generator pass: the noise vector
/// `z` and the reparameterization draw `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenNoise {
    pub z: Tensor,
    pub u: Tensor,
}

impl GenNoise {
    pub fn sample<R: Rng + ?Sized>(batch: usize, noise_dim: usize, latent_dim: usize, rng: &mut R) -> Self {
        let z = Tensor::randn(&[batch, noise_dim], 1.0, rng);
        let u = Tensor::randn(&[batch, latent_dim], 1.0, rng);
        Self { z, u }
    }

    /// Deterministic variant with `u = 0`, so the latent equals `mu`.
    pub fn mean_only(z: Tensor, latent_dim: usize) -> Self {
        let n = z.shape()[0];
        Self { z, u: Tensor::zeros(&[n, latent_dim]) }
    }

    pub fn batch(&self) -> usize {
        self.z.shape()[0]
    }
}

/// Attribute augmentation: attributes → (μ, σ) through a fully-connected
/// stack, then `latent = μ + σ ⊙ u` and `code = concat(latent, z)`.
#[derive(Clone, Debug)]
pub struct AttributeAugment {
    fc1: Linear,
    n1: Norm,
    fc2: Linear,
    n2: Norm,
    mu: Linear,
    logvar: Linear,
    pub attr_dim: usize,
    pub latent_dim: usize,
    pub noise_dim: usize,
}

impl AttributeAugment {
    pub fn new<R: Rng + ?Sized>(
        b: &mut Builder<'_, R>,
        attr_dim: usize,
        hidden: usize,
        latent_dim: usize,
        noise_dim: usize,
        norm: NormKind,
    ) -> Self {
        let fc1 = Linear::new(&mut b.sub("fc1"), attr_dim, hidden, false);
        let n1 = Norm::new(&mut b.sub("n1"), hidden, attr_dim, norm, false);
        let fc2 = Linear::new(&mut b.sub("fc2"), hidden, hidden, false);
        let n2 = Norm::new(&mut b.sub("n2"), hidden, attr_dim, norm, false);
        let mu = Linear::new(&mut b.sub("mu"), hidden, latent_dim, true);
        // log-variance head starts at exactly zero, i.e. sigma = 1
        let logvar = Linear::with_init(&mut b.sub("logvar"), hidden, latent_dim, true, InitKind::Const(0.0), 0.0);
        Self { fc1, n1, fc2, n2, mu, logvar, attr_dim, latent_dim, noise_dim }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, y: Var, noise: &GenNoise) -> Result<Embedding> {
        let (n, d) = g.value(y).dims2()?;
        if d != self.attr_dim {
            return Err(invalid!("attribute vector has {} entries, expected {}", d, self.attr_dim));
        }
        if noise.z.shape() != [n, self.noise_dim] || noise.u.shape() != [n, self.latent_dim] {
            return Err(shape_err!(
                "noise z {:?} / u {:?} for batch {} (noise {}, latent {})",
                noise.z.shape(),
                noise.u.shape(),
                n,
                self.noise_dim,
                self.latent_dim
            ));
        }
        let h = self.fc1.forward(g, p, y)?;
        let h = self.n1.forward(g, p, h, y)?;
        let h = g.relu(h);
        let h = self.fc2.forward(g, p, h)?;
        let h = self.n2.forward(g, p, h, y)?;
        let h = g.relu(h);
        let mu = self.mu.forward(g, p, h)?;
        let logvar = self.logvar.forward(g, p, h)?;
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let u = g.input(noise.u.clone());
        let spread = g.mul(sigma, u)?;
        let latent = g.add(mu, spread)?;
        let z = g.input(noise.z.clone());
        let code = g.concat(latent, z)?;
        Ok(Embedding { mu, sigma, latent, noise: z, code })
    }
}

/// UP: nearest ×2 upsampling, 3×3 conv, normalization, ReLU.
#[derive(Clone, Debug)]
pub struct UpBlock {
    conv: Conv2d,
    norm: Norm,
}

impl UpBlock {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cin: usize, cout: usize, cond_dim: usize, norm: NormKind) -> Self {
        let conv = Conv2d::new(&mut b.sub("conv"), cin, cout, 3, 1, 1, false);
        let norm = Norm::new(&mut b.sub("norm"), cout, cond_dim, norm, false);
        Self { conv, norm }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, cond: Var) -> Result<Var> {
        let h = g.upsample2x(x)?;
        let h = self.conv.forward(g, p, h)?;
        let h = self.norm.forward(g, p, h, cond)?;
        Ok(g.relu(h))
    }
}

/// DO: 4×4 stride-2 conv, normalization, ReLU. Halves the spatial size.
#[derive(Clone, Debug)]
pub struct DownBlock {
    conv: Conv2d,
    norm: Norm,
}

impl DownBlock {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cin: usize, cout: usize, cond_dim: usize, norm: NormKind) -> Self {
        let conv = Conv2d::new(&mut b.sub("conv"), cin, cout, 4, 2, 1, false);
        let norm = Norm::new(&mut b.sub("norm"), cout, cond_dim, norm, false);
        Self { conv, norm }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, cond: Var) -> Result<Var> {
        let h = self.conv.forward(g, p, x)?;
        let h = self.norm.forward(g, p, h, cond)?;
        Ok(g.relu(h))
    }
}

/// Res: `relu(x + norm(conv(relu(norm(conv(x))))))`. The second
/// normalization starts at zero so the block is the identity on
/// non-negative inputs at initialization.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    norm1: Norm,
    conv2: Conv2d,
    norm2: Norm,
    channels: usize,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, channels: usize, cond_dim: usize, norm: NormKind) -> Self {
        let conv1 = Conv2d::new(&mut b.sub("conv1"), channels, channels, 3, 1, 1, false);
        let norm1 = Norm::new(&mut b.sub("norm1"), channels, cond_dim, norm, false);
        let conv2 = Conv2d::new(&mut b.sub("conv2"), channels, channels, 3, 1, 1, false);
        let norm2 = Norm::new(&mut b.sub("norm2"), channels, cond_dim, norm, true);
        Self { conv1, norm1, conv2, norm2, channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, cond: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(shape_err!("res block: input has {} channels, block expects {}", c, self.channels));
        }
        let h = self.conv1.forward(g, p, x)?;
        let h = self.norm1.forward(g, p, h, cond)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h)?;
        let h = self.norm2.forward(g, p, h, cond)?;
        let s = g.add(x, h)?;
        Ok(g.relu(s))
    }
}

/// STR: two 1×1 convolutions and a Tanh, producing a 3-channel image.
#[derive(Clone, Debug)]
pub struct StrBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl StrBlock {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cin: usize) -> Self {
        let conv1 = Conv2d::new(&mut b.sub("conv1"), cin, cin, 1, 1, 0, true);
        let conv2 = Conv2d::new(&mut b.sub("conv2"), cin, 3, 1, 1, 0, true);
        Self { conv1, conv2 }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, p, x)?;
        let h = self.conv2.forward(g, p, h)?;
        Ok(g.tanh(h))
    }
}

/// Kind and output width of one generator stage, as in `UP(256)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Aa,
    Up,
    Do,
    Res,
    Str,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub out_channels: usize,
}

impl core::fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let k = match self.kind {
            BlockKind::Aa => "AA",
            BlockKind::Up => "UP",
            BlockKind::Do => "DO",
            BlockKind::Res => "Res",
            BlockKind::Str => "STR",
        };
        write!(f, "{}({})", k, self.out_channels)
    }
}

/// Renders a block stack as `AA(512)-UP(256)-...`.
pub fn describe(stack: &[BlockSpec]) -> alloc::string::String {
    use core::fmt::Write;
    let mut s = alloc::string::String::new();
    for (i, b) in stack.iter().enumerate() {
        if i > 0 {
            s.push('-');
        }
        let _ = write!(s, "{b}");
    }
    s
}

/// Repeats a `[d]` attribute vector into a `[n, d]` batch.
pub fn repeat_rows(row: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    Tensor::new(&[n, row.len()], data).expect("consistent shape")
}

/// Columns `[0, k)` of a `[N, D]` tensor.
pub fn leading_columns(t: &Tensor, k: usize) -> Result<Tensor> {
    let (n, d) = t.dims2()?;
    if k > d {
        return Err(shape_err!("cannot take {} columns of {:?}", k, t.shape()));
    }
    let mut data = vec![0.0; n * k];
    for i in 0..n {
        data[i * k..(i + 1) * k].copy_from_slice(&t.data()[i * d..i * d + k]);
    }
    Tensor::new(&[n, k], data)
}
