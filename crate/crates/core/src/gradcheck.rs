//! Central finite-difference verification of analytic gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::graph::{Gradients, Graph, Mode, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Agreement between analytic and numeric gradients for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Number of coordinates compared.
    pub checked: usize,
    /// `‖a − n‖ / max(‖a‖ + ‖n‖, GRAD_FLOOR)` over the compared coordinates.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Denominator floor of the relative error, so that gradients that vanish
/// analytically are not judged on finite-difference rounding noise.
pub const GRAD_FLOOR: f64 = 1e-6;

fn rel_error(a: &[f64], n: &[f64]) -> (f64, f64) {
    let diff = libm::sqrt(a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum());
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nn = libm::sqrt(n.iter().map(|x| x * x).sum());
    let denom = na + nn;
    (diff / denom.max(GRAD_FLOOR), na)
}

/// Evaluates `f` on a fresh training-mode graph and returns the scalar loss.
fn eval<F>(store: &ParamStore, inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(Mode::Train);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, store, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(invalid!("gradient check needs a scalar output, got {:?}", v.shape()));
    }
    Ok(v.item())
}

/// Compares analytic gradients of the scalar produced by `f` against
/// central differences with step `h`, for every trainable parameter of
/// `params` and every entry of `inputs`. At most `max_coords` randomly chosen
/// coordinates are compared per tensor.
pub fn check_gradients<F, R>(
    store: &mut ParamStore,
    params: &[ParamId],
    inputs: &[Tensor],
    f: F,
    h: f64,
    max_coords: usize,
    rng: &mut R,
) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let (grads, leaf_vars): (Gradients, Vec<Var>) = {
        let mut g = Graph::new(Mode::Train);
        g.track(params.iter().copied());
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, store, &vars)?;
        (g.backward(out)?, vars)
    };
    let pick = |len: usize, rng: &mut R| -> Vec<usize> {
        if len <= max_coords {
            (0..len).collect()
        } else {
            let mut v = sample(rng, len, max_coords).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut out = Vec::new();
    for &id in params {
        if !store.is_trainable(id) {
            continue;
        }
        let len = store.get(id).len();
        let coords = pick(len, rng);
        let analytic: Vec<f64> = match grads.param(id) {
            Some(t) => coords.iter().map(|&i| t.data()[i]).collect(),
            None => alloc::vec![0.0; coords.len()],
        };
        let mut numeric = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(store, inputs, &f)?;
            store.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(store, inputs, &f)?;
            store.get_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let (rel, na) = rel_error(&analytic, &numeric);
        out.push(GradCheck { name: store.name(id).to_string(), checked: coords.len(), rel_error: rel, analytic_norm: na });
    }
    for (k, (t, &v)) in inputs.iter().zip(&leaf_vars).enumerate() {
        let coords = pick(t.len(), rng);
        let analytic: Vec<f64> = match grads.wrt(v) {
            Some(gt) => coords.iter().map(|&i| gt.data()[i]).collect(),
            None => alloc::vec![0.0; coords.len()],
        };
        let mut numeric = Vec::with_capacity(coords.len());
        let mut work: Vec<Tensor> = inputs.to_vec();
        for &i in &coords {
            let orig = t.data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(store, &work, &f)?;
            work[k].data_mut()[i] = orig - h;
            let down = eval(store, &work, &f)?;
            work[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let (rel, na) = rel_error(&analytic, &numeric);
        out.push(GradCheck { name: alloc::format!("input{k}"), checked: coords.len(), rel_error: rel, analytic_norm: na });
    }
    Ok(out)
}

/// Largest relative error among `checks`.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

/// Relative tolerance of the standard audit.
pub const AUDIT_TOLERANCE: f64 = 1e-4;

fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::randn(g.shape(x), 1.0, &mut rng);
    let w = g.input(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

/// Replaces every trainable parameter with `N(0, std²)` draws so that
/// zero-initialized layers do not hide gradient paths.
fn randomize<R: Rng + ?Sized>(store: &mut ParamStore, std: f64, rng: &mut R) {
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.get_mut(id).data_mut().copy_from_slice(Tensor::randn(&shape, std, rng).data());
    }
}

/// Gradient audit of every building block and both losses on random
/// 2-sample batches. Returns `(block, worst relative error)` pairs.
pub fn standard_audit(seed: u64) -> Result<Vec<(String, f64)>> {
    use crate::discriminator::Judgment;
    use crate::loss::{discriminator_loss, generator_adv_loss};
    use crate::nn::{AttributeAugment, DownBlock, GenNoise, Norm, NormKind, ResBlock, StrBlock, UpBlock};
    use crate::params::Builder;
    use rand::SeedableRng;

    const N: usize = 2;
    const CD: usize = 5;
    const H: f64 = 1e-5;
    const COORDS: usize = 24;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let y = Tensor::randn(&[N, CD], 1.0, &mut rng).map(|v| if v > 0.0 { 1.0 } else { -1.0 });
    let fmap = |c: usize, s: usize, rng: &mut rand_chacha::ChaCha8Rng| Tensor::randn(&[N, c, s, s], 1.0, rng);

    macro_rules! audit {
        ($name:expr, $build:expr, $inputs:expr, $f:expr) => {{
            let mut store = ParamStore::new();
            let mut brng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.random());
            let block = {
                let mut b = Builder::new(&mut store, &mut brng, "blk");
                #[allow(clippy::redundant_closure_call)]
                ($build)(&mut b)
            };
            randomize(&mut store, 0.3, &mut rng);
            let ids: Vec<ParamId> = store.ids().collect();
            let inputs: Vec<Tensor> = $inputs;
            let checks = check_gradients(&mut store, &ids, &inputs, |g, p, v| ($f)(&block, g, p, v), H, COORDS, &mut rng)?;
            results.push(($name.to_string(), worst(&checks)));
        }};
    }

    // the noise draws are constants of the pass, not differentiable inputs
    let aa_noise = GenNoise { z: Tensor::randn(&[N, 3], 1.0, &mut rng), u: Tensor::randn(&[N, 4], 1.0, &mut rng) };
    audit!(
        "AA",
        |b: &mut Builder<'_, _>| AttributeAugment::new(b, CD, 6, 4, 3, NormKind::Conditional),
        alloc::vec![y.clone()],
        |blk: &AttributeAugment, g: &mut Graph, p: &ParamStore, v: &[Var]| -> Result<Var> {
            let e = blk.forward(g, p, v[0], &aa_noise)?;
            let s = weighted_sum(g, e.code, 1)?;
            let kl = g.kl(e.mu, e.sigma)?;
            g.add(s, kl)
        }
    );
    audit!(
        "CBN",
        |b: &mut Builder<'_, _>| Norm::new(b, 3, CD, NormKind::Conditional, false),
        alloc::vec![fmap(3, 4, &mut rng), y.clone()],
        |blk: &Norm, g: &mut Graph, p: &ParamStore, v: &[Var]| -> Result<Var> {
            let o = blk.forward(g, p, v[0], v[1])?;
            weighted_sum(g, o, 2)
        }
    );
    audit!(
        "Res",
        |b: &mut Builder<'_, _>| ResBlock::new(b, 3, CD, NormKind::Conditional),
        alloc::vec![fmap(3, 4, &mut rng), y.clone()],
        |blk: &ResBlock, g: &mut Graph, p: &ParamStore, v: &[Var]| -> Result<Var> {
            let o = blk.forward(g, p, v[0], v[1])?;
            weighted_sum(g, o, 3)
        }
    );
    audit!(
        "UP",
        |b: &mut Builder<'_, _>| UpBlock::new(b, 3, 4, CD, NormKind::Conditional),
        alloc::vec![fmap(3, 4, &mut rng), y.clone()],
        |blk: &UpBlock, g: &mut Graph, p: &ParamStore, v: &[Var]| -> Result<Var> {
            let o = blk.forward(g, p, v[0], v[1])?;
            weighted_sum(g, o, 4)
        }
    );
    audit!(
        "DO",
        |b: &mut Builder<'_, _>| DownBlock::new(b, 3, 4, CD, NormKind::Conditional),
        alloc::vec![fmap(3, 8, &mut rng), y.clone()],
        |blk: &DownBlock, g: &mut Graph, p: &ParamStore, v: &[Var]| -> Result<Var> {
            let o = blk.forward(g, p, v[0], v[1])?;
            weighted_sum(g, o, 5)
        }
    );
    audit!(
        "STR",
        |b: &mut Builder<'_, _>| StrBlock::new(b, 4),
        alloc::vec![fmap(4, 4, &mut rng)],
        |blk: &StrBlock, g: &mut Graph, p: &ParamStore, v: &[Var]| -> Result<Var> {
            let o = blk.forward(g, p, v[0])?;
            weighted_sum(g, o, 6)
        }
    );

    // losses over probability maps in (0.05, 0.95)
    let prob = |rng: &mut rand_chacha::ChaCha8Rng| {
        Tensor::randn(&[N, 1, 4, 4], 1.0, rng).map(|v| 0.05 + 0.9 / (1.0 + libm::exp(-v)))
    };
    let maps: Vec<Tensor> = (0..6).map(|_| prob(&mut rng)).collect();
    let mut empty = ParamStore::new();
    let checks = check_gradients(
        &mut empty,
        &[],
        &maps,
        |g, _, v| {
            let j = |a: usize| Judgment { uncond: v[a], cond: v[a + 1] };
            Ok(discriminator_loss(g, &j(0), &j(2), &j(4))?.total)
        },
        H,
        COORDS,
        &mut rng,
    )?;
    results.push(("discriminator loss".to_string(), worst(&checks)));
    for form in [crate::config::GeneratorLossForm::NonSaturating, crate::config::GeneratorLossForm::Minimax] {
        let checks = check_gradients(
            &mut empty,
            &[],
            &maps,
            |g, _, v| {
                let js = [Judgment { uncond: v[0], cond: v[1] }, Judgment { uncond: v[2], cond: v[3] }];
                generator_adv_loss(g, &js, form)
            },
            H,
            COORDS,
            &mut rng,
        )?;
        results.push((alloc::format!("generator loss ({form:?})"), worst(&checks)));
    }
    let mu = Tensor::randn(&[N, 4], 1.0, &mut rng);
    let sigma = Tensor::randn(&[N, 4], 0.3, &mut rng).map(libm::exp);
    let checks = check_gradients(&mut empty, &[], &[mu, sigma], |g, _, v| g.kl(v[0], v[1]), H, COORDS, &mut rng)?;
    results.push(("KL".to_string(), worst(&checks)));
    Ok(results)
}
