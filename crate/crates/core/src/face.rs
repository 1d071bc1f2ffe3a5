//! Stage 2: sketch + attributes → multi-scale faces, through a UNet-shaped
//! encoder/decoder with skip connections and AA conditioning at the
//! bottleneck.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use rand::Rng;

use crate::attributes::FACE_ATTRS;
use crate::config::ModelConfig;
use crate::error::{invalid, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::nn::{
    AttributeAugment, BlockKind, BlockSpec, Conv2d, DownBlock, Embedding, GenNoise, Linear, Norm, ResBlock, StrBlock,
    UpBlock,
};
use crate::params::{Builder, ParamStore};
use crate::sketch::GeneratorOutput;

/// Channels at the 4×4 bottleneck.
pub const BOTTLENECK_CHANNELS: usize = 512;

/// Encoder features kept for the decoder.
pub struct Encoded {
    /// `[N, 512, 4, 4]`
    pub bottleneck: Var,
    /// Skip features, highest resolution first (`R/2, R/4, ..., 8`).
    pub skips: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct FaceGenerator {
    downs: Vec<DownBlock>,
    aa: AttributeAugment,
    fuse_proj: Linear,
    fuse_conv: Conv2d,
    fuse_norm: Norm,
    bottleneck_channels: usize,
    ups: Vec<UpBlock>,
    res: Vec<ResBlock>,
    refine: Conv2d,
    refine_norm: Norm,
    strs: BTreeMap<usize, StrBlock>,
    top: usize,
    scales: Vec<usize>,
}

impl FaceGenerator {
    pub fn new<R: Rng + ?Sized>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ad = FACE_ATTRS;
        let top = cfg.top();
        let depth = top.trailing_zeros() as usize - 2;
        let enc: Vec<usize> = (0..depth).map(|j| cfg.ch((512usize >> (depth - 1 - j)).max(16))).collect();
        let mut downs = Vec::with_capacity(depth);
        let mut cin = 3;
        for (j, &c) in enc.iter().enumerate() {
            downs.push(DownBlock::new(&mut b.sub(&alloc::format!("down{j}")), cin, c, ad, cfg.norm));
            cin = c;
        }
        let bottleneck_channels = cin;
        let aa = AttributeAugment::new(&mut b.sub("aa"), ad, cfg.aa_hidden, cfg.latent_dim, cfg.noise_dim, cfg.norm);
        let fuse_proj = Linear::new(&mut b.sub("fuse_proj"), cfg.latent_dim + cfg.noise_dim, bottleneck_channels, true);
        let fuse_conv = Conv2d::new(&mut b.sub("fuse_conv"), 2 * bottleneck_channels, bottleneck_channels, 1, 1, 0, false);
        let fuse_norm = Norm::new(&mut b.sub("fuse_norm"), bottleneck_channels, ad, cfg.norm, false);

        // decoder: UP k maps resolution 4·2^k → 8·2^k; from k = 1 on its
        // input also carries the encoder skip at 4·2^k
        let dec: Vec<usize> = (0..depth).map(|k| cfg.ch((512usize >> k).max(16))).collect();
        let mut ups = Vec::with_capacity(depth);
        let mut res = Vec::with_capacity(depth);
        let mut strs = BTreeMap::new();
        let mut prev = bottleneck_channels;
        for (k, &cout) in dec.iter().enumerate() {
            let skip = if k == 0 { 0 } else { enc[depth - 1 - k] };
            ups.push(UpBlock::new(&mut b.sub(&alloc::format!("up{k}")), prev + skip, cout, ad, cfg.norm));
            res.push(ResBlock::new(&mut b.sub(&alloc::format!("res{k}")), cout, ad, cfg.norm));
            let r = 8 << k;
            if r != top && cfg.scales.contains(&r) {
                strs.insert(r, StrBlock::new(&mut b.sub(&alloc::format!("str{r}")), cout));
            }
            prev = cout;
        }
        let refine_ch = (prev / 2).max(1);
        let refine = Conv2d::new(&mut b.sub("refine"), prev, refine_ch, 3, 1, 1, false);
        let refine_norm = Norm::new(&mut b.sub("refine_norm"), refine_ch, ad, cfg.norm, false);
        strs.insert(top, StrBlock::new(&mut b.sub(&alloc::format!("str{top}")), refine_ch));
        Ok(Self {
            downs,
            aa,
            fuse_proj,
            fuse_conv,
            fuse_norm,
            bottleneck_channels,
            ups,
            res,
            refine,
            refine_norm,
            strs,
            top,
            scales: cfg.scales.clone(),
        })
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn resolution(&self) -> usize {
        self.top
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

    pub fn stack(&self) -> Vec<BlockSpec> {
        let mut s: Vec<BlockSpec> =
            self.downs.iter().map(|d| BlockSpec { kind: BlockKind::Do, out_channels: d.out_channels() }).collect();
        s.push(BlockSpec { kind: BlockKind::Aa, out_channels: self.bottleneck_channels });
        for u in &self.ups {
            s.push(BlockSpec { kind: BlockKind::Up, out_channels: u.out_channels() });
        }
        s.push(BlockSpec { kind: BlockKind::Up, out_channels: self.refine.out_channels });
        s
    }

    /// For every decoder stage: (input resolution, input channels, decoder
    /// channels arriving, encoder skip channels concatenated).
    pub fn skip_audit(&self) -> Vec<(usize, usize, usize, usize)> {
        let depth = self.downs.len();
        let mut out = Vec::new();
        let mut prev = self.bottleneck_channels;
        for (k, up) in self.ups.iter().enumerate() {
            let skip = if k == 0 { 0 } else { self.downs[depth - 1 - k].out_channels() };
            out.push((4 << k, up.in_channels(), prev, skip));
            prev = up.out_channels();
        }
        out
    }

    pub fn encode_sketch(&self, g: &mut Graph, p: &ParamStore, sketch: Var, y: Var) -> Result<Encoded> {
        let (_, c, h, w) = g.value(sketch).dims4()?;
        if c != 3 || h != self.top || w != self.top {
            return Err(shape_err!("face generator expects [N, 3, {}, {}] sketches, got {:?}", self.top, self.top, g.shape(sketch)));
        }
        let mut h = sketch;
        let mut skips = Vec::with_capacity(self.downs.len());
        for d in &self.downs {
            h = d.forward(g, p, h, y)?;
            skips.push(h);
        }
        let bottleneck = skips.pop().expect("at least one down block");
        Ok(Encoded { bottleneck, skips })
    }

    /// AA code projected to a vector, broadcast to 4×4, concatenated with the
    /// bottleneck and reduced back to the bottleneck width by a 1×1 conv.
    pub fn fuse_condition(
        &self,
        g: &mut Graph,
        p: &ParamStore,
        bottleneck: Var,
        y: Var,
        noise: &GenNoise,
    ) -> Result<(Var, Embedding)> {
        let emb = self.aa.forward(g, p, y, noise)?;
        let v = self.fuse_proj.forward(g, p, emb.code)?;
        let v = g.broadcast_spatial(v, 4, 4)?;
        let joint = g.concat(bottleneck, v)?;
        let h = self.fuse_conv.forward(g, p, joint)?;
        let h = self.fuse_norm.forward(g, p, h, y)?;
        Ok((g.relu(h), emb))
    }

    /// Decoder from the fused bottleneck, consuming skips by concatenation.
    pub fn decode(&self, g: &mut Graph, p: &ParamStore, fused: Var, skips: &[Var], y: Var) -> Result<Vec<Var>> {
        let depth = self.downs.len();
        if skips.len() + 1 != depth {
            return Err(invalid!("decoder expects {} skips, got {}", depth - 1, skips.len()));
        }
        let mut h = fused;
        let mut images = Vec::with_capacity(self.scales.len());
        for (k, (up, rb)) in self.ups.iter().zip(&self.res).enumerate() {
            if k > 0 {
                h = g.concat(h, skips[depth - 1 - k])?;
            }
            h = up.forward(g, p, h, y)?;
            h = rb.forward(g, p, h, y)?;
            let r = 8 << k;
            if r != self.top {
                if let Some(s) = self.strs.get(&r) {
                    images.push(s.forward(g, p, h)?);
                }
            }
        }
        let h = self.refine.forward(g, p, h)?;
        let h = self.refine_norm.forward(g, p, h, y)?;
        let h = g.relu(h);
        images.push(self.strs[&self.top].forward(g, p, h)?);
        Ok(images)
    }

    /// Face pyramid for sketches `[N, 3, R, R]` and attributes `y [N, 23]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, sketch: Var, y: Var, noise: &GenNoise) -> Result<GeneratorOutput> {
        let (_, d) = g.value(y).dims2()?;
        if d != self.aa.attr_dim {
            return Err(invalid!("face attributes have {} entries, expected {}", d, self.aa.attr_dim));
        }
        let enc = self.encode_sketch(g, p, sketch, y)?;
        let (fused, embedding) = self.fuse_condition(g, p, enc.bottleneck, y, noise)?;
        let images = self.decode(g, p, fused, &enc.skips, y)?;
        Ok(GeneratorOutput { images, embedding })
    }
}
