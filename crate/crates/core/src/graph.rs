//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every tracked parameter and every leaf created with
//! [`Graph::leaf`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::gemm::gemm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Whether normalization layers use batch statistics (and update running
/// statistics) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

enum Value {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl Value {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    stride: usize,
    pad: usize,
}

enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Upsample2x(Var),
    BatchNorm { x: Var, invstd: Vec<f64> },
    ChannelAffine { x: Var, scale: Vec<f64> },
    Modulate { x: Var, gamma: Var, beta: Var },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Concat(Var, Var),
    Reshape(Var),
    BroadcastSpatial(Var),
    GlobalAvgPool(Var),
    LogClamped { x: Var, lo: f64, hi: f64, complement: bool },
    Mean(Var),
    Sum(Var),
    Kl { mu: Var, sigma: Var },
}

struct Node {
    value: Value,
    op: Op,
    grad: bool,
}

/// Batch statistics produced by [`Graph::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    tracked: BTreeSet<ParamId>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

/// Gradients returned by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    leaves: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

/// `[N, C, S]` view of a `[N, C]` or `[N, C, H, W]` tensor.
fn ncs(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        _ => Err(shape_err!("expected [N,C] or [N,C,H,W], got {:?}", shape)),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(ci * h + ih as usize) * w..(ci * h + ih as usize + 1) * w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= w as isize { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = (ci * h + ih as usize) * w;
                    for ow in 0..wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dx[base + iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self { nodes: Vec::new(), mode, tracked: BTreeSet::new(), buffer_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters in `ids` receive gradients; all others are treated as constants.
    pub fn track(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        self.tracked.extend(ids);
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// An input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let grad = self.tracked.contains(&id) && store.is_trainable(id);
        self.nodes.push(Node { value: Value::Shared(store.shared(id)), op: Op::Param(id), grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Copies `v` into a new constant node (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn record_buffer(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    /// Running-statistic updates gathered during the forward pass.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        core::mem::take(&mut self.buffer_updates)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{}: {:?} vs {:?}", what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let grad = self.g(a) || self.g(b);
        Ok(self.push(t, Op::Add(a, b), grad))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let grad = self.g(a) || self.g(b);
        Ok(self.push(t, Op::Sub(a, b), grad))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let grad = self.g(a) || self.g(b);
        Ok(self.push(t, Op::Mul(a, b), grad))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let grad = self.g(a);
        self.push(t, Op::Scale(a, s), grad)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        let grad = self.g(a);
        self.push(t, Op::AddScalar(a), grad)
    }

    /// `x[N,in] · w[out,in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = self.value(x).dims2()?;
        let (dout, win) = self.value(w).dims2()?;
        if din != win {
            return Err(shape_err!("linear: input dim {} vs weight {:?}", din, self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(shape_err!("linear: bias {:?} vs out {}", self.shape(b), dout));
            }
        }
        let mut out = vec![0.0; n * dout];
        gemm(n, din, dout, self.value(x).data(), false, self.value(w).data(), true, &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bias).for_each(|(o, bb)| *o += bb);
            }
        }
        let grad = self.g(x) || self.g(w) || b.is_some_and(|b| self.g(b));
        Ok(self.push(Tensor::new(&[n, dout], out)?, Op::Linear { x, w, b }, grad))
    }

    /// 2-d convolution of `x[N,Ci,H,W]` with square kernels `w[Co,Ci,k,k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, ci, h, wd) = self.value(x).dims4()?;
        let (co, wci, k, k2) = self.value(w).dims4()?;
        if wci != ci || k != k2 {
            return Err(shape_err!("conv2d: input {:?} vs weight {:?}", self.shape(x), self.shape(w)));
        }
        if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return Err(shape_err!("conv2d: kernel {} too large for {:?}", k, self.shape(x)));
        }
        let geom = ConvGeom { stride, pad };
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let kk = ci * k * k;
        let direct = k == 1 && stride == 1 && pad == 0;
        let mut out = vec![0.0; n * co * p];
        let mut cols = if direct { Vec::new() } else { vec![0.0; kk * p] };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        for s in 0..n {
            let xin = &xs[s * ci * h * wd..(s + 1) * ci * h * wd];
            let cols_ref: &[f64] = if direct {
                xin
            } else {
                im2col(xin, ci, h, wd, k, geom, ho, wo, &mut cols);
                &cols
            };
            gemm(co, kk, p, ws, false, cols_ref, false, &mut out[s * co * p..(s + 1) * co * p], false);
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(shape_err!("conv2d: bias {:?} vs {} channels", self.shape(b), co));
            }
            let bias = self.value(b).data();
            for (i, chunk) in out.chunks_mut(p).enumerate() {
                let bv = bias[i % co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let grad = self.g(x) || self.g(w) || b.is_some_and(|b| self.g(b));
        Ok(self.push(Tensor::new(&[n, co, ho, wo], out)?, Op::Conv { x, w, b, geom }, grad))
    }

    /// Nearest-neighbour ×2 spatial upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * 4 * h * w];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
            for i in 0..2 * h {
                for j in 0..2 * w {
                    d[i * 2 * w + j] = s[(i / 2) * w + j / 2];
                }
            }
        }
        let grad = self.g(x);
        Ok(self.push(Tensor::new(&[n, c, 2 * h, 2 * w], out)?, Op::Upsample2x(x), grad))
    }

    /// Per-channel normalization with batch statistics (no affine part).
    pub fn batch_norm(&mut self, x: Var) -> Result<(Var, BatchStats)> {
        let shape = self.shape(x).to_vec();
        let (n, c, s) = ncs(&shape)?;
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let m = (n * s) as f64;
        let xs = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                mean[ch] += xs[base..base + s].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                var[ch] += xs[base..base + s].iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let mut out = vec![0.0; xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    out[i] = (xs[i] - mean[ch]) * invstd[ch];
                }
            }
        }
        let grad = self.g(x);
        let stats = BatchStats { mean, var, count: n * s };
        let v = self.push(Tensor::new(&shape, out)?, Op::BatchNorm { x, invstd }, grad);
        Ok((v, stats))
    }

    /// `x * scale[c] + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: Vec<f64>, shift: &[f64]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, s) = ncs(&shape)?;
        if scale.len() != c || shift.len() != c {
            return Err(shape_err!("channel_affine: {} channels", c));
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    out[i] = xs[i] * scale[ch] + shift[ch];
                }
            }
        }
        let grad = self.g(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::ChannelAffine { x, scale }, grad))
    }

    /// `x * gamma + beta` where `gamma`, `beta` are `[C]` (shared) or `[N, C]`.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, s) = ncs(&shape)?;
        let gs = self.shape(gamma).to_vec();
        if gs != self.shape(beta) || !(gs == [c] || gs == [n, c]) {
            return Err(shape_err!("modulate: x {:?}, gamma {:?}, beta {:?}", shape, gs, self.shape(beta)));
        }
        let per_sample = gs.len() == 2;
        let xs = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let k = if per_sample { b * c + ch } else { ch };
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    out[i] = xs[i] * gv[k] + bv[k];
                }
            }
        }
        let grad = self.g(x) || self.g(gamma) || self.g(beta);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Modulate { x, gamma, beta }, grad))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let grad = self.g(x);
        self.push(t, Op::Relu(x), grad)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { v * slope });
        let grad = self.g(x);
        self.push(t, Op::LeakyRelu(x, slope), grad)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(libm::tanh);
        let grad = self.g(x);
        self.push(t, Op::Tanh(x), grad)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let grad = self.g(x);
        self.push(t, Op::Sigmoid(x), grad)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(libm::exp);
        let grad = self.g(x);
        self.push(t, Op::Exp(x), grad)
    }

    /// Concatenates along the channel axis (axis 1).
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (n, ca, s) = ncs(&sa)?;
        let (nb, cb, s2) = ncs(&sb)?;
        if n != nb || s != s2 || sa.len() != sb.len() || sa[2..] != sb[2..] {
            return Err(shape_err!("concat: {:?} vs {:?}", sa, sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for i in 0..n {
            out.extend_from_slice(&av[i * ca * s..(i + 1) * ca * s]);
            out.extend_from_slice(&bv[i * cb * s..(i + 1) * cb * s]);
        }
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let grad = self.g(a) || self.g(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat(a, b), grad))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let grad = self.g(x);
        Ok(self.push(t, Op::Reshape(x), grad))
    }

    /// `[N, C] -> [N, C, h, w]` by repetition over space.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for &v in xs {
            out.extend(core::iter::repeat_n(v, h * w));
        }
        let grad = self.g(x);
        Ok(self.push(Tensor::new(&[n, c, h, w], out)?, Op::BroadcastSpatial(x), grad))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let s = (h * w) as f64;
        let out = self.value(x).data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / s).collect();
        let grad = self.g(x);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::GlobalAvgPool(x), grad))
    }

    /// `ln(clamp(x, lo, hi))`, or `ln(1 - clamp(x, lo, hi))` when `complement`.
    pub fn log_clamped(&mut self, x: Var, lo: f64, hi: f64, complement: bool) -> Var {
        let t = self.value(x).map(|v| {
            let p = v.clamp(lo, hi);
            if complement {
                libm::log(1.0 - p)
            } else {
                libm::log(p)
            }
        });
        let grad = self.g(x);
        self.push(t, Op::LogClamped { x, lo, hi, complement }, grad)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).mean());
        let grad = self.g(x);
        self.push(t, Op::Mean(x), grad)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let grad = self.g(x);
        self.push(t, Op::Sum(x), grad)
    }

    /// Batch mean of `KL(N(mu, sigma^2) || N(0, I))` for `[N, d]` inputs.
    pub fn kl(&mut self, mu: Var, sigma: Var) -> Result<Var> {
        self.same_shape(mu, sigma, "kl")?;
        let (n, _) = self.value(mu).dims2()?;
        if let Some(&bad) = self.value(sigma).data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveSigma(bad));
        }
        let total = crate::nn::kl_regularizer(self.value(mu).data(), self.value(sigma).data())?;
        let grad = self.g(mu) || self.g(sigma);
        Ok(self.push(Tensor::scalar(total / n as f64), Op::Kl { mu, sigma }, grad))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            self.backprop_node(node, gy, &mut grads, &mut out, Var(i))?;
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
            slot => *slot = Some(t),
        }
    }

    fn backprop_node(
        &self,
        node: &Node,
        gy: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
        this: Var,
    ) -> Result<()> {
        let y = node.value.get();
        match &node.op {
            Op::Constant => {}
            Op::Leaf => {
                out.leaves.insert(this, gy);
            }
            Op::Param(id) => match out.params.get_mut(id) {
                Some(acc) => acc.data_mut().iter_mut().zip(gy.data()).for_each(|(a, b)| *a += b),
                None => {
                    out.params.insert(*id, gy);
                }
            },
            Op::Add(a, b) => {
                self.accumulate(grads, *b, gy.clone());
                self.accumulate(grads, *a, gy);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, gy.map(|v| -v));
                self.accumulate(grads, *a, gy);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip_map(&gy, vb, |g, x| g * x));
                self.accumulate(grads, *b, zip_map(&gy, va, |g, x| g * x));
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, gy.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, gy),
            Op::Linear { x, w, b } => {
                let (n, din) = self.value(*x).dims2()?;
                let dout = self.shape(*w)[0];
                if self.g(*x) {
                    let mut dx = vec![0.0; n * din];
                    gemm(n, dout, din, gy.data(), false, self.value(*w).data(), false, &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(&[n, din], dx)?);
                }
                if self.g(*w) {
                    let mut dw = vec![0.0; dout * din];
                    gemm(dout, n, din, gy.data(), true, self.value(*x).data(), false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(&[dout, din], dw)?);
                }
                if let Some(b) = b {
                    if self.g(*b) {
                        let mut db = vec![0.0; dout];
                        for row in gy.data().chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        self.accumulate(grads, *b, Tensor::new(&[dout], db)?);
                    }
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (n, ci, h, wd) = self.value(*x).dims4()?;
                let (co, _, k, _) = self.value(*w).dims4()?;
                let (_, _, ho, wo) = y.dims4()?;
                let p = ho * wo;
                let kk = ci * k * k;
                let direct = k == 1 && geom.stride == 1 && geom.pad == 0;
                let xs = self.value(*x).data();
                let ws = self.value(*w).data();
                let gd = gy.data();
                let need_x = self.g(*x);
                let need_w = self.g(*w);
                let mut dw = if need_w { vec![0.0; co * kk] } else { Vec::new() };
                let mut dx = if need_x { vec![0.0; n * ci * h * wd] } else { Vec::new() };
                let mut cols = if direct { Vec::new() } else { vec![0.0; kk * p] };
                let mut dcols = vec![0.0; kk * p];
                for s in 0..n {
                    let g_s = &gd[s * co * p..(s + 1) * co * p];
                    let xin = &xs[s * ci * h * wd..(s + 1) * ci * h * wd];
                    if need_w {
                        let cols_ref: &[f64] = if direct {
                            xin
                        } else {
                            im2col(xin, ci, h, wd, k, *geom, ho, wo, &mut cols);
                            &cols
                        };
                        gemm(co, p, kk, g_s, false, cols_ref, true, &mut dw, true);
                    }
                    if need_x {
                        let dxs = &mut dx[s * ci * h * wd..(s + 1) * ci * h * wd];
                        if direct {
                            gemm(kk, co, p, ws, true, g_s, false, dxs, false);
                        } else {
                            gemm(kk, co, p, ws, true, g_s, false, &mut dcols, false);
                            col2im(&dcols, ci, h, wd, k, *geom, ho, wo, dxs);
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(&[n, ci, h, wd], dx)?);
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(&[co, ci, k, k], dw)?);
                }
                if let Some(b) = b {
                    if self.g(*b) {
                        let mut db = vec![0.0; co];
                        for (i, chunk) in gd.chunks(p).enumerate() {
                            db[i % co] += chunk.iter().sum::<f64>();
                        }
                        self.accumulate(grads, *b, Tensor::new(&[co], db)?);
                    }
                }
            }
            Op::Upsample2x(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let mut dx = vec![0.0; n * c * h * w];
                let gd = gy.data();
                for plane in 0..n * c {
                    let s = &gd[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let d = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            d[(i / 2) * w + j / 2] += s[i * 2 * w + j];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(&[n, c, h, w], dx)?);
            }
            Op::BatchNorm { x, invstd } => {
                let (n, c, s) = ncs(y.shape())?;
                let m = (n * s) as f64;
                let xhat = y.data();
                let gd = gy.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        for i in base..base + s {
                            sum_g[ch] += gd[i];
                            sum_gx[ch] += gd[i] * xhat[i];
                        }
                    }
                }
                let mut dx = vec![0.0; gd.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        let k = invstd[ch] / m;
                        for i in base..base + s {
                            dx[i] = k * (m * gd[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape(), dx)?);
            }
            Op::ChannelAffine { x, scale } => {
                let (n, c, s) = ncs(y.shape())?;
                let mut dx = gy;
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        dx.data_mut()[base..base + s].iter_mut().for_each(|v| *v *= scale[ch]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Modulate { x, gamma, beta } => {
                let (n, c, s) = ncs(y.shape())?;
                let per_sample = self.shape(*gamma).len() == 2;
                let xs = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let gd = gy.data();
                let plen = if per_sample { n * c } else { c };
                let mut dgamma = vec![0.0; plen];
                let mut dbeta = vec![0.0; plen];
                let mut dx = vec![0.0; gd.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let k = if per_sample { b * c + ch } else { ch };
                        let base = (b * c + ch) * s;
                        for i in base..base + s {
                            dx[i] = gd[i] * gv[k];
                            dgamma[k] += gd[i] * xs[i];
                            dbeta[k] += gd[i];
                        }
                    }
                }
                let pshape = self.shape(*gamma).to_vec();
                self.accumulate(grads, *x, Tensor::new(y.shape(), dx)?);
                self.accumulate(grads, *gamma, Tensor::new(&pshape, dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(&pshape, dbeta)?);
            }
            Op::Relu(x) => {
                let t = zip_map(&gy, y, |g, v| if v > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *x, t);
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                let t = zip_map(&gy, self.value(*x), |g, v| if v > 0.0 { g } else { g * slope });
                self.accumulate(grads, *x, t);
            }
            Op::Tanh(x) => {
                let t = zip_map(&gy, y, |g, v| g * (1.0 - v * v));
                self.accumulate(grads, *x, t);
            }
            Op::Sigmoid(x) => {
                let t = zip_map(&gy, y, |g, v| g * v * (1.0 - v));
                self.accumulate(grads, *x, t);
            }
            Op::Exp(x) => {
                let t = zip_map(&gy, y, |g, v| g * v);
                self.accumulate(grads, *x, t);
            }
            Op::Concat(a, b) => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (n, ca, s) = ncs(&sa)?;
                let (_, cb, _) = ncs(&sb)?;
                let gd = gy.data();
                let mut da = Vec::with_capacity(n * ca * s);
                let mut db = Vec::with_capacity(n * cb * s);
                for i in 0..n {
                    let base = i * (ca + cb) * s;
                    da.extend_from_slice(&gd[base..base + ca * s]);
                    db.extend_from_slice(&gd[base + ca * s..base + (ca + cb) * s]);
                }
                self.accumulate(grads, *a, Tensor::new(&sa, da)?);
                self.accumulate(grads, *b, Tensor::new(&sb, db)?);
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, gy.reshape(&shape)?);
            }
            Op::BroadcastSpatial(x) => {
                let shape = self.shape(*x).to_vec();
                let (_, _, h, w) = y.dims4()?;
                let d = gy.data().chunks(h * w).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, Tensor::new(&shape, d)?);
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x).to_vec();
                let (_, _, h, w) = self.value(*x).dims4()?;
                let s = (h * w) as f64;
                let mut d = Vec::with_capacity(shape.iter().product());
                for &g in gy.data() {
                    d.extend(core::iter::repeat_n(g / s, h * w));
                }
                self.accumulate(grads, *x, Tensor::new(&shape, d)?);
            }
            Op::LogClamped { x, lo, hi, complement } => {
                let (lo, hi, complement) = (*lo, *hi, *complement);
                let t = zip_map(&gy, self.value(*x), |g, v| {
                    if v < lo || v > hi {
                        0.0
                    } else if complement {
                        -g / (1.0 - v)
                    } else {
                        g / v
                    }
                });
                self.accumulate(grads, *x, t);
            }
            Op::Mean(x) => {
                let shape = self.shape(*x).to_vec();
                let n = self.value(*x).len() as f64;
                self.accumulate(grads, *x, Tensor::full(&shape, gy.item() / n));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, gy.item()));
            }
            Op::Kl { mu, sigma } => {
                let n = self.shape(*mu)[0] as f64;
                let g = gy.item() / n;
                let dmu = self.value(*mu).map(|m| g * m);
                let dsig = self.value(*sigma).map(|s| g * (s - 1.0 / s));
                self.accumulate(grads, *mu, dmu);
                self.accumulate(grads, *sigma, dsig);
            }
        }
        Ok(())
    }
}
