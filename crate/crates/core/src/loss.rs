//! Triplet-matching adversarial losses.

use alloc::vec::Vec;

use crate::config::GeneratorLossForm;
use crate::discriminator::Judgment;
use crate::error::{invalid, shape_err, Result};
use crate::graph::{Graph, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Graph handles of the per-scale discriminator loss and its three terms.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLoss {
    pub total: Var,
    pub real: Var,
    pub fake: Var,
    pub wrong: Var,
}

fn mean_log(g: &mut Graph, p: Var, complement: bool) -> Var {
    let l = g.log_clamped(p, PROB_EPS, 1.0 - PROB_EPS, complement);
    g.mean(l)
}

fn check_same_shape(g: &Graph, js: &[&Judgment]) -> Result<()> {
    let s = g.shape(js[0].uncond).to_vec();
    for j in js {
        if g.shape(j.uncond) != s.as_slice() || g.shape(j.cond) != s.as_slice() {
            return Err(shape_err!("judgment maps differ in shape: {:?} vs {:?}", g.shape(j.uncond), s));
        }
    }
    Ok(())
}

/// Negated per-scale discriminator objective:
/// `-[log D(x) + log D(x,y)] - log(1 - D(x',y)) - [log(1 - D(x̂)) + log(1 - D(x̂,y))]`,
/// each term averaged over the batch and the 4×4 locations. The wrong pair
/// only enters through the attribute-matching branch.
pub fn discriminator_loss(g: &mut Graph, real: &Judgment, fake: &Judgment, wrong: &Judgment) -> Result<DiscriminatorLoss> {
    check_same_shape(g, &[real, fake, wrong])?;
    let ru = mean_log(g, real.uncond, false);
    let rc = mean_log(g, real.cond, false);
    let real_t = g.add(ru, rc)?;
    let real_t = g.scale(real_t, -1.0);
    let fu = mean_log(g, fake.uncond, true);
    let fc = mean_log(g, fake.cond, true);
    let fake_t = g.add(fu, fc)?;
    let fake_t = g.scale(fake_t, -1.0);
    let wc = mean_log(g, wrong.cond, true);
    let wrong_t = g.scale(wc, -1.0);
    let t = g.add(real_t, fake_t)?;
    let total = g.add(t, wrong_t)?;
    Ok(DiscriminatorLoss { total, real: real_t, fake: fake_t, wrong: wrong_t })
}

/// Generator adversarial loss summed over scales; both branches contribute.
pub fn generator_adv_loss(g: &mut Graph, fakes: &[Judgment], form: GeneratorLossForm) -> Result<Var> {
    if fakes.is_empty() {
        return Err(invalid!("generator loss needs at least one scale"));
    }
    let mut per_scale = Vec::with_capacity(fakes.len());
    for j in fakes {
        let t = match form {
            GeneratorLossForm::NonSaturating => {
                let u = mean_log(g, j.uncond, false);
                let c = mean_log(g, j.cond, false);
                let s = g.add(u, c)?;
                g.scale(s, -1.0)
            }
            GeneratorLossForm::Minimax => {
                let u = mean_log(g, j.uncond, true);
                let c = mean_log(g, j.cond, true);
                g.add(u, c)?
            }
        };
        per_scale.push(t);
    }
    let mut total = per_scale[0];
    for &t in &per_scale[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// `adv + lambda * kl` on graph nodes.
pub fn total_loss(g: &mut Graph, adv: Var, kl: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(invalid!("lambda must be non-negative, got {}", lambda));
    }
    let weighted = g.scale(kl, lambda);
    g.add(adv, weighted)
}

/// Scalar form of [`total_loss`].
pub fn total_sketch_loss(adv: f64, kl: f64, lambda_s: f64) -> Result<f64> {
    if lambda_s < 0.0 {
        return Err(invalid!("lambda must be non-negative, got {}", lambda_s));
    }
    Ok(adv + lambda_s * kl)
}
