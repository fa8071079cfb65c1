//! Exact noise predictors for Gaussian and Gaussian-mixture data.
//!
//! For `x0 ~ N(m, v I)` the pair `(eps, x_t)` is jointly Gaussian, so the
//! MSE-optimal predictor is the linear regression of `eps` on `x_t`:
//! `sqrt(1 - ab) (x_t - sqrt(ab) m) / (ab v + 1 - ab)`. A mixture weights
//! the per-component predictors by their posterior responsibilities.

use super::{ConditionalEstimator, NoiseEstimator};
use crate::embedding::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone)]
pub struct AnalyticGaussianEstimator {
    mean0: FeatureMap,
    var0: f64,
    sched: NoiseSchedule,
}

impl AnalyticGaussianEstimator {
    pub fn new(mean0: FeatureMap, var0: f64, sched: NoiseSchedule) -> Result<Self> {
        if !(var0 > 0.0 && var0.is_finite()) {
            return Err(Error::invalid(format!("data variance must be positive, got {var0}")));
        }
        Ok(Self { mean0, var0, sched })
    }

    /// `N(0, I)` data of the given shape.
    pub fn standard(frames: usize, bins: usize, sched: NoiseSchedule) -> Self {
        Self {
            mean0: FeatureMap::zeros(frames, bins),
            var0: 1.0,
            sched,
        }
    }

    pub fn mean0(&self) -> &FeatureMap {
        &self.mean0
    }

    pub fn var0(&self) -> f64 {
        self.var0
    }
}

fn component_eps(
    x_t: &FeatureMap,
    mean: &FeatureMap,
    var: f64,
    alpha_bar: f64,
) -> Result<FeatureMap> {
    let denom = alpha_bar * var + 1.0 - alpha_bar;
    let gain = (1.0 - alpha_bar).sqrt() / denom;
    let shift = alpha_bar.sqrt();
    x_t.zip_with(mean, |x, m| gain * (x - shift * m))
}

impl NoiseEstimator for AnalyticGaussianEstimator {
    fn shape(&self) -> (usize, usize) {
        self.mean0.shape()
    }

    fn estimate(&self, x_t: &FeatureMap, t: usize) -> Result<FeatureMap> {
        self.sched.check_step(t)?;
        component_eps(x_t, &self.mean0, self.var0, self.sched.alpha_bar(t))
    }
}

/// Exact predictor for a mixture of isotropic Gaussians.
///
/// With reference embeddings attached, conditioning on `e` selects the
/// component whose reference has the largest dot product with `e`.
#[derive(Debug, Clone)]
pub struct AnalyticMixtureEstimator {
    means: Vec<FeatureMap>,
    vars: Vec<f64>,
    log_weights: Vec<f64>,
    references: Vec<SpeakerEmbedding>,
    sched: NoiseSchedule,
}

impl AnalyticMixtureEstimator {
    /// Equal-weight mixture.
    pub fn new(means: Vec<FeatureMap>, vars: Vec<f64>, sched: NoiseSchedule) -> Result<Self> {
        let k = means.len();
        if k == 0 || vars.len() != k {
            return Err(Error::invalid("need one variance per component"));
        }
        if means.iter().any(|m| m.shape() != means[0].shape()) {
            return Err(Error::invalid("component means differ in shape"));
        }
        if vars.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("component variances must be positive"));
        }
        Ok(Self {
            means,
            vars,
            log_weights: vec![-(k as f64).ln(); k],
            references: Vec::new(),
            sched,
        })
    }

    pub fn with_references(mut self, references: Vec<SpeakerEmbedding>) -> Result<Self> {
        if references.len() != self.means.len() {
            return Err(Error::invalid("need one reference embedding per component"));
        }
        self.references = references;
        Ok(self)
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    /// Predictor for component `k` alone.
    pub fn estimate_component(&self, x_t: &FeatureMap, t: usize, k: usize) -> Result<FeatureMap> {
        self.sched.check_step(t)?;
        component_eps(x_t, &self.means[k], self.vars[k], self.sched.alpha_bar(t))
    }

    /// Posterior responsibilities of each component given `x_t`.
    pub fn responsibilities(&self, x_t: &FeatureMap, t: usize) -> Result<Vec<f64>> {
        self.sched.check_step(t)?;
        let ab = self.sched.alpha_bar(t);
        let n = x_t.len() as f64;
        let mut logs = Vec::with_capacity(self.means.len());
        for ((mean, &var), &lw) in self.means.iter().zip(&self.vars).zip(&self.log_weights) {
            x_t.ensure_same_shape(mean)?;
            let s = ab * var + 1.0 - ab;
            let shift = ab.sqrt();
            let d2: f64 = x_t
                .as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(x, m)| (x - shift * m).powi(2))
                .sum();
            logs.push(lw - 0.5 * n * s.ln() - 0.5 * d2 / s);
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / total).collect())
    }
}

impl NoiseEstimator for AnalyticMixtureEstimator {
    fn shape(&self) -> (usize, usize) {
        self.means[0].shape()
    }

    fn estimate(&self, x_t: &FeatureMap, t: usize) -> Result<FeatureMap> {
        let resp = self.responsibilities(x_t, t)?;
        let (frames, bins) = x_t.shape();
        let mut out = vec![0.0; frames * bins];
        for (k, r) in resp.iter().enumerate() {
            let eps = self.estimate_component(x_t, t, k)?;
            for (o, e) in out.iter_mut().zip(eps.as_slice()) {
                *o += r * e;
            }
        }
        Ok(FeatureMap::from_vec_unchecked(frames, bins, out))
    }
}

impl ConditionalEstimator for AnalyticMixtureEstimator {
    fn estimate_conditional(
        &self,
        x_t: &FeatureMap,
        t: usize,
        condition: Option<&SpeakerEmbedding>,
    ) -> Result<FeatureMap> {
        let Some(e) = condition else {
            return self.estimate(x_t, t);
        };
        if self.references.is_empty() {
            return Err(Error::Config(
                "mixture estimator has no reference embeddings for conditioning".into(),
            ));
        }
        let k = self
            .references
            .iter()
            .enumerate()
            .map(|(k, r)| (k, r.dot(e)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.estimate_component(x_t, t, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{forward_jump, l_simple};
    use crate::rng::DiffusionSeed;
    use crate::schedule::ScheduleKind;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::Linear, 200).unwrap()
    }

    #[test]
    fn standard_data_gives_scaled_input() {
        let s = sched();
        let est = AnalyticGaussianEstimator::standard(2, 3, s.clone());
        let x = DiffusionSeed::new(1).normal_map(2, 3);
        let t = 77;
        let eps = est.estimate(&x, t).unwrap();
        let k = (1.0 - s.alpha_bar(t)).sqrt();
        for (e, v) in eps.as_slice().iter().zip(x.as_slice()) {
            assert!((e - k * v).abs() < 1e-15);
        }
    }

    #[test]
    fn regression_slope_matches_closed_form() {
        // Least-squares fit of eps on x_t over forward_jump draws.
        let s = sched();
        let t = 60;
        let x0 = FeatureMap::zeros(1, 1);
        let mut seed = DiffusionSeed::new(4);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for _ in 0..100_000 {
            let (xt, eps) = forward_jump(&x0.map(|_| seed.normal()), t, &s, &mut seed).unwrap();
            sxy += xt.get(0, 0) * eps.get(0, 0);
            sxx += xt.get(0, 0).powi(2);
        }
        let fitted = sxy / sxx;
        let want = (1.0 - s.alpha_bar(t)).sqrt();
        assert!((fitted - want).abs() < 0.01, "{fitted} vs {want}");
    }

    #[test]
    fn no_noise_limit_is_zero_at_mean() {
        let raw = NoiseSchedule::from_raw_parts(vec![1e-15], vec![1.0 - 1e-15]);
        let mean = FeatureMap::filled(2, 2, 0.7);
        let est = AnalyticGaussianEstimator::new(mean.clone(), 2.0, raw).unwrap();
        let eps = est.estimate(&mean, 1).unwrap();
        assert!(eps.as_slice().iter().all(|v| v.abs() < 1e-7));
        assert!(AnalyticGaussianEstimator::new(mean, 0.0, sched()).is_err());
    }

    #[test]
    fn beats_off_optimum_scalings() {
        let s = sched();
        let t = 90;
        let mean = FeatureMap::filled(1, 4, 0.8);
        let var = 0.5;
        let est = AnalyticGaussianEstimator::new(mean.clone(), var, s.clone()).unwrap();
        let mut seed = DiffusionSeed::new(12);
        let pairs: Vec<_> = (0..5000)
            .map(|_| {
                let x0 = mean.map(|m| m + var.sqrt() * seed.normal());
                forward_jump(&x0, t, &s, &mut seed).unwrap()
            })
            .collect();
        let loss_of = |f: &dyn Fn(&FeatureMap) -> FeatureMap| {
            pairs.iter().map(|(xt, e)| l_simple(e, &f(xt)).unwrap()).sum::<f64>() / pairs.len() as f64
        };
        let optimal = loss_of(&|xt| est.estimate(xt, t).unwrap());
        // Best scalar-multiple predictor on the same pairs.
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (xt, e) in &pairs {
            sxy += xt.as_slice().iter().zip(e.as_slice()).map(|(a, b)| a * b).sum::<f64>();
            sxx += xt.as_slice().iter().map(|a| a * a).sum::<f64>();
        }
        let best = sxy / sxx;
        for lambda in [best * 0.9, best * 1.1] {
            let scaled = loss_of(&|xt| xt.map(|v| lambda * v));
            assert!(optimal < scaled, "{optimal} vs {scaled} at {lambda}");
        }
    }

    #[test]
    fn mixture_reduces_to_gaussian_for_one_component() {
        let s = sched();
        let mean = DiffusionSeed::new(3).normal_map(2, 2);
        let g = AnalyticGaussianEstimator::new(mean.clone(), 0.3, s.clone()).unwrap();
        let m = AnalyticMixtureEstimator::new(vec![mean], vec![0.3], s).unwrap();
        let x = DiffusionSeed::new(4).normal_map(2, 2);
        assert_eq!(g.estimate(&x, 50).unwrap(), m.estimate(&x, 50).unwrap());
    }

    #[test]
    fn responsibilities_pick_the_near_component() {
        let s = sched();
        let a = FeatureMap::filled(2, 2, 3.0);
        let b = FeatureMap::filled(2, 2, -3.0);
        let m = AnalyticMixtureEstimator::new(vec![a.clone(), b], vec![0.1, 0.1], s).unwrap();
        let r = m.responsibilities(&a, 1).unwrap();
        assert!(r[0] > 0.999);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
