//! Stage 1: attributes → multi-scale sketches.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use rand::Rng;

use crate::attributes::SKETCH_ATTRS;
use crate::config::ModelConfig;
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::nn::{AttributeAugment, BlockKind, BlockSpec, Embedding, GenNoise, Linear, Norm, ResBlock, StrBlock, UpBlock};
use crate::params::{Builder, ParamStore};

/// Channels of the 4×4 seed produced from the AA code.
pub const SEED_CHANNELS: usize = 512;

/// Output width of the `k`-th UP module (256, 128, 64, 32, then 16).
pub(crate) fn up_channels(k: usize) -> usize {
    (256usize >> k).max(16)
}

pub struct GeneratorOutput {
    /// One image per configured scale, ascending resolution, `[N, 3, r, r]`.
    pub images: Vec<Var>,
    pub embedding: Embedding,
}

#[derive(Clone, Debug)]
pub struct SketchGenerator {
    aa: AttributeAugment,
    seed: Linear,
    seed_norm: Norm,
    seed_channels: usize,
    ups: Vec<UpBlock>,
    res: Vec<Option<ResBlock>>,
    strs: BTreeMap<usize, StrBlock>,
    scales: Vec<usize>,
}

impl SketchGenerator {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ad = SKETCH_ATTRS;
        let aa = AttributeAugment::new(&mut b.sub("aa"), ad, cfg.aa_hidden, cfg.latent_dim, cfg.noise_dim, cfg.norm);
        let seed_channels = cfg.ch(SEED_CHANNELS);
        let seed = Linear::new(&mut b.sub("seed"), cfg.latent_dim + cfg.noise_dim, seed_channels * 16, false);
        let seed_norm = Norm::new(&mut b.sub("seed_norm"), seed_channels, ad, cfg.norm, false);
        let n_up = cfg.top().trailing_zeros() as usize - 2;
        let mut ups = Vec::with_capacity(n_up);
        let mut res = Vec::with_capacity(n_up);
        let mut strs = BTreeMap::new();
        let mut cin = seed_channels;
        for k in 0..n_up {
            let cout = cfg.ch(up_channels(k));
            ups.push(UpBlock::new(&mut b.sub(&alloc::format!("up{k}")), cin, cout, ad, cfg.norm));
            let r = 8 << k;
            res.push((k + 1 < n_up).then(|| ResBlock::new(&mut b.sub(&alloc::format!("res{k}")), cout, ad, cfg.norm)));
            if cfg.scales.contains(&r) {
                strs.insert(r, StrBlock::new(&mut b.sub(&alloc::format!("str{r}")), cout));
            }
            cin = cout;
        }
        Ok(Self { aa, seed, seed_norm, seed_channels, ups, res, strs, scales: cfg.scales.clone() })
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn attr_dim(&self) -> usize {
        self.aa.attr_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.aa.latent_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.aa.noise_dim
    }

    /// The block stack, e.g. `AA(512)-UP(256)-Res(256)-...-UP(32)`.
    pub fn stack(&self) -> Vec<BlockSpec> {
        let mut s = alloc::vec![BlockSpec { kind: BlockKind::Aa, out_channels: self.seed_channels }];
        for (up, res) in self.ups.iter().zip(&self.res) {
            s.push(BlockSpec { kind: BlockKind::Up, out_channels: up.out_channels() });
            if let Some(r) = res {
                s.push(BlockSpec { kind: BlockKind::Res, out_channels: r.channels() });
            }
        }
        s
    }

    /// Pyramid of sketches for attributes `y [N, 17]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, y: Var, noise: &GenNoise) -> Result<GeneratorOutput> {
        Ok(self.forward_traced(g, p, y, noise)?.0)
    }

    /// Like [`forward`](Self::forward), also returning the normalized
    /// (pre-affine) seed activations.
    pub fn forward_traced(&self, g: &mut Graph, p: &ParamStore, y: Var, noise: &GenNoise) -> Result<(GeneratorOutput, Var)> {
        let (n, d) = g.value(y).dims2()?;
        if d != self.aa.attr_dim {
            return Err(invalid!("sketch attributes have {} entries, expected {}", d, self.aa.attr_dim));
        }
        let embedding = self.aa.forward(g, p, y, noise)?;
        let h = self.seed.forward(g, p, embedding.code)?;
        let h = g.reshape(h, &[n, self.seed_channels, 4, 4])?;
        let parts = self.seed_norm.forward_parts(g, p, h, y)?;
        let mut h = g.relu(parts.out);
        let mut images = Vec::with_capacity(self.scales.len());
        for (k, (up, res)) in self.ups.iter().zip(&self.res).enumerate() {
            h = up.forward(g, p, h, y)?;
            if let Some(rb) = res {
                h = rb.forward(g, p, h, y)?;
            }
            if let Some(s) = self.strs.get(&(8 << k)) {
                images.push(s.forward(g, p, h)?);
            }
        }
        Ok((GeneratorOutput { images, embedding }, parts.normalized))
    }
}
