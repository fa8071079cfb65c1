//! Forward noising, the reverse-step mean and variance, and the simple
//! noise-prediction loss.

use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::rng::DiffusionSeed;
use crate::schedule::NoiseSchedule;

/// One forward step: `sqrt(alpha_t) * x_prev + sqrt(1 - alpha_t) * eps`.
pub fn forward_step(
    x_prev: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<FeatureMap> {
    sched.check_step(t)?;
    let keep = sched.alpha(t).sqrt();
    let noise = (1.0 - sched.alpha(t)).sqrt();
    Ok(x_prev.map(|v| keep * v + noise * seed.normal()))
}

/// Closed-form jump from `x0` to step `t`; returns `(x_t, eps)`.
pub fn forward_jump(
    x0: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<(FeatureMap, FeatureMap)> {
    sched.check_step(t)?;
    let (frames, bins) = x0.shape();
    let eps = seed.normal_map(frames, bins);
    let ab = sched.alpha_bar(t);
    let (keep, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let xt = x0.zip_with(&eps, |x, e| keep * x + noise * e)?;
    Ok((xt, eps))
}

/// Reverse-process mean implied by a noise estimate.
pub fn mu_from_eps(
    xt: &FeatureMap,
    eps_hat: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<FeatureMap> {
    sched.check_step(t)?;
    xt.ensure_same_shape(eps_hat)?;
    let alpha = sched.alpha(t);
    let one_minus_ab = 1.0 - sched.alpha_bar(t);
    if one_minus_ab <= 0.0 {
        return Err(Error::DivisionByZero(format!("1 - alpha_bar is zero at step {t}")));
    }
    let coef = (1.0 - alpha) / one_minus_ab.sqrt();
    let scale = 1.0 / alpha.sqrt();
    xt.zip_with(eps_hat, |x, e| scale * (x - coef * e))
}

/// Fixed reverse variance at step `t` (see [`NoiseSchedule::sigma`]).
pub fn sigma_t(t: usize, sched: &NoiseSchedule) -> Result<f64> {
    sched.sigma(t)
}

/// Draw `x_{t-1} ~ N(mu, sigma_t I)`; the final step (`t = 1`) returns `mu`.
pub fn reverse_step(
    xt: &FeatureMap,
    mu: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<FeatureMap> {
    let sigma = sched.sigma(t)?;
    xt.ensure_same_shape(mu)?;
    if t == 1 {
        return Ok(mu.clone());
    }
    let sd = sigma.sqrt();
    Ok(mu.map(|m| m + sd * seed.normal()))
}

/// Mean squared elementwise difference.
pub fn l_simple(eps: &FeatureMap, eps_hat: &FeatureMap) -> Result<f64> {
    eps.ensure_same_shape(eps_hat)?;
    let sum: f64 = eps
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps.len() as f64)
}
