//! Patch discriminators with an unconditional realness branch and an
//! attribute-matching branch, one per output scale.

use alloc::vec::Vec;
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Linear, Norm, NormKind};
use crate::params::{Builder, ParamStore};

const LEAK: f64 = 0.2;
/// Spatial size of every judgment map.
pub const PATCH: usize = 4;
/// Channels of the attribute embedding in the matching branch.
pub const ATTR_EMBED_CHANNELS: usize = 128;

/// Two 4×4 probability maps: realness and attribute match.
#[derive(Clone, Copy, Debug)]
pub struct Judgment {
    pub uncond: Var,
    pub cond: Var,
}

#[derive(Clone, Debug)]
struct ChainLayer {
    conv: Conv2d,
    norm: Option<Norm>,
}

#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    resolution: usize,
    attr_dim: usize,
    chain: Vec<ChainLayer>,
    head: Conv2d,
    embed: Linear,
    embed_channels: usize,
    fuse1: Conv2d,
    fuse2: Conv2d,
}

impl PatchDiscriminator {
    /// Stride-2 chain from `resolution` down to 4×4. The channel ladder ends
    /// at 512 for every resolution; lower resolutions drop the leading layers.
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cfg: &ModelConfig, resolution: usize, attr_dim: usize) -> Self {
        let depth = resolution.trailing_zeros() as usize - 2;
        let mut chain = Vec::with_capacity(depth);
        let mut cin = 3;
        for j in 0..depth {
            let cout = cfg.ch(512 >> (depth - 1 - j));
            let mut lb = b.sub(&alloc::format!("conv{j}"));
            let conv = Conv2d::new(&mut lb.sub("conv"), cin, cout, 4, 2, 1, false);
            let norm = (j > 0).then(|| Norm::new(&mut lb.sub("norm"), cout, 0, NormKind::Plain, false));
            chain.push(ChainLayer { conv, norm });
            cin = cout;
        }
        let feat = cin;
        let embed_channels = cfg.ch(ATTR_EMBED_CHANNELS);
        let head = Conv2d::new(&mut b.sub("head"), feat, 1, 1, 1, 0, true);
        let embed = Linear::new(&mut b.sub("embed"), attr_dim, embed_channels * PATCH * PATCH, true);
        let fuse1 = Conv2d::new(&mut b.sub("fuse1"), feat + embed_channels, feat, 1, 1, 0, true);
        let fuse2 = Conv2d::new(&mut b.sub("fuse2"), feat, 1, 1, 1, 0, true);
        Self { resolution, attr_dim, chain, head, embed, embed_channels, fuse1, fuse2 }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of stride-2 convolutions in the realness chain.
    pub fn depth(&self) -> usize {
        self.chain.len()
    }

    /// Spatial sizes visited by the realness chain, input first.
    pub fn spatial_ladder(&self) -> Vec<usize> {
        (0..=self.chain.len()).map(|j| self.resolution >> j).collect()
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, y: Var) -> Result<Judgment> {
        let (n, c, h, w) = g.value(x).dims4()?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(shape_err!(
                "discriminator for {}x{} got input {:?}",
                self.resolution,
                self.resolution,
                g.shape(x)
            ));
        }
        let (ny, dy) = g.value(y).dims2()?;
        if ny != n || dy != self.attr_dim {
            return Err(shape_err!("discriminator attributes {:?}, expected [{}, {}]", g.shape(y), n, self.attr_dim));
        }
        let mut h = x;
        for layer in &self.chain {
            h = layer.conv.forward(g, p, h)?;
            if let Some(norm) = &layer.norm {
                h = norm.forward(g, p, h, y)?;
            }
            h = g.leaky_relu(h, LEAK);
        }
        let logits = self.head.forward(g, p, h)?;
        let uncond = g.sigmoid(logits);

        let e = self.embed.forward(g, p, y)?;
        let e = g.reshape(e, &[n, self.embed_channels, PATCH, PATCH])?;
        let e = g.leaky_relu(e, LEAK);
        let joint = g.concat(h, e)?;
        let joint = self.fuse1.forward(g, p, joint)?;
        let joint = g.leaky_relu(joint, LEAK);
        let logits = self.fuse2.forward(g, p, joint)?;
        let cond = g.sigmoid(logits);
        Ok(Judgment { uncond, cond })
    }
}

/// One discriminator per scale.
#[derive(Clone, Debug)]
pub struct DiscriminatorSet {
    discs: Vec<PatchDiscriminator>,
}

impl DiscriminatorSet {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cfg: &ModelConfig, attr_dim: usize) -> Self {
        let discs = cfg
            .scales
            .iter()
            .map(|&r| PatchDiscriminator::new(&mut b.sub(&alloc::format!("d{r}")), cfg, r, attr_dim))
            .collect();
        Self { discs }
    }

    pub fn get(&self, resolution: usize) -> Result<&PatchDiscriminator> {
        self.discs
            .iter()
            .find(|d| d.resolution == resolution)
            .ok_or(Error::NoDiscriminator(resolution))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PatchDiscriminator> {
        self.discs.iter()
    }

    /// Judges `x` with the discriminator registered for its resolution.
    pub fn judge(&self, g: &mut Graph, p: &ParamStore, x: Var, y: Var) -> Result<Judgment> {
        let res = *g.shape(x).get(2).ok_or_else(|| shape_err!("judge: input {:?}", g.shape(x)))?;
        self.get(res)?.forward(g, p, x, y)
    }
}
