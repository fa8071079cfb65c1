//! Speaker-embedding-guided reverse diffusion.
//!
//! Two routes steer sampling toward a reference embedding `e`:
//!
//! * **external**: shift each reverse-step mean along the gradient of the
//!   similarity `embed(x_t) · e`, scaled by `s` and the step variance;
//! * **built-in**: mix conditional and unconditional noise predictions,
//!   `(1 - s) eps(x_t) + s eps(x_t | e)`, and derive the mean from the mix.
//!
//! Both start from `x_T ~ N(0, I)` and run `t = T, ..., 1`.

use std::io::Write;
use std::str::FromStr;

use crate::diffusion::{mu_from_eps, reverse_step};
use crate::embedding::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::estimators::{ConditionalEstimator, DifferentiableEmbedder, Embedder, NoiseEstimator};
use crate::feature_map::FeatureMap;
use crate::rng::DiffusionSeed;
use crate::schedule::NoiseSchedule;

pub const DEFAULT_EXTERNAL_SCALE: f64 = 2.0;
pub const DEFAULT_BUILTIN_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    External,
    BuiltIn,
}

impl GuidanceMode {
    pub fn default_scale(self) -> f64 {
        match self {
            Self::External => DEFAULT_EXTERNAL_SCALE,
            Self::BuiltIn => DEFAULT_BUILTIN_SCALE,
        }
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "external" => Ok(Self::External),
            "built-in" | "builtin" => Ok(Self::BuiltIn),
            other => Err(Error::invalid(format!("unknown guidance mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::External => "external",
            Self::BuiltIn => "built-in",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub scale: f64,
    pub target_frames: usize,
}

impl GuidanceConfig {
    pub fn new(mode: GuidanceMode, scale: f64, target_frames: usize) -> Result<Self> {
        let cfg = Self {
            mode,
            scale,
            target_frames,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The mode's default scale (2.0 external, 3.0 built-in).
    pub fn with_default_scale(mode: GuidanceMode, target_frames: usize) -> Result<Self> {
        Self::new(mode, mode.default_scale(), target_frames)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::invalid(format!("guidance scale {} must be finite and >= 0", self.scale)));
        }
        if self.target_frames == 0 {
            return Err(Error::invalid("target frame count must be positive"));
        }
        Ok(())
    }
}

/// Classifier-free mix of unconditional and conditional noise estimates.
///
/// Evaluated as `(1 - s) u + s c`, which returns `u` exactly at `s = 0` and
/// `c` exactly at `s = 1`.
pub fn cfg_mix(eps_uncond: &FeatureMap, eps_cond: &FeatureMap, s: f64) -> Result<FeatureMap> {
    let keep = 1.0 - s;
    eps_uncond.zip_with(eps_cond, |u, c| keep * u + s * c)
}

/// `mu + s * sigma * grad`.
pub fn guided_mean_external(
    mu: &FeatureMap,
    sigma: f64,
    grad: &FeatureMap,
    s: f64,
) -> Result<FeatureMap> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("variance {sigma} is negative")));
    }
    let step = s * sigma;
    mu.zip_with(grad, |m, g| m + step * g)
}

/// `embed(x_t) · e`.
pub fn similarity_check(
    x_t: &FeatureMap,
    e: &SpeakerEmbedding,
    embedder: &dyn Embedder,
) -> Result<f64> {
    let got = embedder.embed(x_t)?;
    if got.dim() != e.dim() {
        return Err(Error::invalid(format!(
            "embedding dims differ: {} vs {}",
            got.dim(),
            e.dim()
        )));
    }
    Ok(got.dot(e))
}

/// Per-step similarity log: one `t=<int> sim=<decimal>` line per step.
pub struct Trace<'a> {
    embedder: &'a dyn Embedder,
    sink: &'a mut dyn Write,
}

impl<'a> Trace<'a> {
    pub fn new(embedder: &'a dyn Embedder, sink: &'a mut dyn Write) -> Self {
        Self { embedder, sink }
    }

    fn record(&mut self, t: usize, x_t: &FeatureMap, e: &SpeakerEmbedding) -> Result<()> {
        let sim = similarity_check(x_t, e, self.embedder)?;
        writeln!(self.sink, "t={t} sim={sim}").map_err(|source| Error::Io {
            path: "<trace>".into(),
            source,
        })
    }
}

fn reverse_loop(
    shape: (usize, usize),
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
    mut mean_at: impl FnMut(&FeatureMap, usize) -> Result<FeatureMap>,
) -> Result<FeatureMap> {
    let mut x = seed.normal_map(shape.0, shape.1);
    for t in (1..=sched.total_steps()).rev() {
        let mu = mean_at(&x, t)?;
        x = reverse_step(&x, &mu, t, sched, seed)?;
    }
    Ok(x)
}

/// Ancestral sampling with no guidance.
pub fn sample_unguided(
    estimator: &dyn NoiseEstimator,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<FeatureMap> {
    reverse_loop(estimator.shape(), sched, seed, |x, t| {
        mu_from_eps(x, &estimator.estimate(x, t)?, t, sched)
    })
}

/// Ancestral sampling from the conditional branch alone.
pub fn sample_conditional(
    e: &SpeakerEmbedding,
    estimator: &dyn ConditionalEstimator,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<FeatureMap> {
    reverse_loop(estimator.shape(), sched, seed, |x, t| {
        mu_from_eps(x, &estimator.estimate_conditional(x, t, Some(e))?, t, sched)
    })
}

fn check_frames(cfg: &GuidanceConfig, estimator_shape: (usize, usize)) -> Result<()> {
    if estimator_shape.0 != cfg.target_frames {
        return Err(Error::Config(format!(
            "estimator generates {} frames but {} were requested",
            estimator_shape.0, cfg.target_frames
        )));
    }
    Ok(())
}

/// Gradient-guided sampling with an external differentiable embedder.
pub fn sample_external(
    e: &SpeakerEmbedding,
    cfg: &GuidanceConfig,
    estimator: &dyn NoiseEstimator,
    embedder: &dyn DifferentiableEmbedder,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<FeatureMap> {
    cfg.validate()?;
    if cfg.mode != GuidanceMode::External {
        return Err(Error::Config(format!("external sampler given {} config", cfg.mode)));
    }
    let shape = estimator.shape();
    check_frames(cfg, shape)?;
    if embedder.input_bins() != shape.1 {
        return Err(Error::Config(format!(
            "embedder takes {} bins, estimator produces {}",
            embedder.input_bins(),
            shape.1
        )));
    }
    reverse_loop(shape, sched, seed, |x, t| {
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(t, x, e)?;
        }
        let mu = mu_from_eps(x, &estimator.estimate(x, t)?, t, sched)?;
        let grad = embedder.similarity_grad(x, e)?;
        guided_mean_external(&mu, sched.sigma(t)?, &grad, cfg.scale)
    })
}

/// Classifier-free sampling with a jointly trained conditional estimator.
pub fn sample_builtin(
    e: &SpeakerEmbedding,
    cfg: &GuidanceConfig,
    estimator: &dyn ConditionalEstimator,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<FeatureMap> {
    cfg.validate()?;
    if cfg.mode != GuidanceMode::BuiltIn {
        return Err(Error::Config(format!("built-in sampler given {} config", cfg.mode)));
    }
    let shape = estimator.shape();
    check_frames(cfg, shape)?;
    reverse_loop(shape, sched, seed, |x, t| {
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(t, x, e)?;
        }
        let uncond = estimator.estimate_conditional(x, t, None)?;
        let cond = estimator.estimate_conditional(x, t, Some(e))?;
        mu_from_eps(x, &cfg_mix(&uncond, &cond, cfg.scale)?, t, sched)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{AnalyticGaussianEstimator, ToyEmbedder};
    use crate::schedule::ScheduleKind;

    fn scalar(v: f64) -> FeatureMap {
        FeatureMap::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn cfg_mix_values() {
        let u = DiffusionSeed::new(1).normal_map(3, 3);
        let c = DiffusionSeed::new(2).normal_map(3, 3);
        assert_eq!(cfg_mix(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_mix(&u, &c, 1.0).unwrap(), c);
        let v = cfg_mix(&scalar(0.2), &scalar(0.5), 3.0).unwrap().get(0, 0);
        assert!((v - 1.1).abs() < 1e-15);
        assert!(cfg_mix(&u, &FeatureMap::zeros(1, 3), 1.0).is_err());
    }

    #[test]
    fn cfg_mix_matches_difference_form() {
        let u = DiffusionSeed::new(3).normal_map(4, 4);
        let c = DiffusionSeed::new(4).normal_map(4, 4);
        for s in [0.0, 0.5, 1.0, 2.0, 3.0, 7.5] {
            let mixed = cfg_mix(&u, &c, s).unwrap();
            for ((m, a), b) in mixed.as_slice().iter().zip(u.as_slice()).zip(c.as_slice()) {
                let want = a + s * (b - a);
                assert!((m - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn guided_mean_values() {
        let mu = DiffusionSeed::new(5).normal_map(2, 2);
        let g = DiffusionSeed::new(6).normal_map(2, 2);
        assert_eq!(guided_mean_external(&mu, 0.3, &g, 0.0).unwrap(), mu);
        assert_eq!(guided_mean_external(&mu, 0.3, &FeatureMap::zeros(2, 2), 2.0).unwrap(), mu);
        let v = guided_mean_external(&scalar(1.0), 0.04, &scalar(0.5), 2.0).unwrap();
        assert!((v.get(0, 0) - 1.04).abs() < 1e-15);
        assert!(guided_mean_external(&mu, 0.3, &scalar(1.0), 2.0).is_err());
    }

    #[test]
    fn similarity_values() {
        let emb = ToyEmbedder::identity(2);
        let e = SpeakerEmbedding::normalize(vec![1.0, 1.0]).unwrap();
        let x = FeatureMap::from_rows(&[vec![2.0, 2.0]]).unwrap();
        assert!((similarity_check(&x, &e, &emb).unwrap() - 1.0).abs() < 1e-15);
        let x = FeatureMap::from_rows(&[vec![1.0, -1.0]]).unwrap();
        assert!(similarity_check(&x, &e, &emb).unwrap().abs() < 1e-15);
        let x = FeatureMap::from_rows(&[vec![0.3, 1.7], vec![-0.2, 0.4]]).unwrap();
        let brute = {
            let p = [0.05f64, 1.05];
            let n = p[0] * p[0] + p[1] * p[1];
            (p[0] + p[1]) / n.sqrt() / 2f64.sqrt()
        };
        assert!((similarity_check(&x, &e, &emb).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(GuidanceConfig::new(GuidanceMode::External, -1.0, 8).is_err());
        assert!(GuidanceConfig::new(GuidanceMode::External, f64::NAN, 8).is_err());
        assert!(GuidanceConfig::new(GuidanceMode::BuiltIn, 1.0, 0).is_err());
        let c = GuidanceConfig::with_default_scale(GuidanceMode::BuiltIn, 8).unwrap();
        assert_eq!(c.scale, 3.0);
        assert_eq!(GuidanceMode::External.default_scale(), 2.0);
    }

    #[test]
    fn external_rejects_mismatched_shapes_and_mode() {
        let sched = NoiseSchedule::build(ScheduleKind::Linear, 10).unwrap();
        let est = AnalyticGaussianEstimator::standard(4, 3, sched.clone());
        let emb = ToyEmbedder::identity(3);
        let e = SpeakerEmbedding::normalize(vec![1.0, 0.0, 0.0]).unwrap();
        let mut seed = DiffusionSeed::new(0);
        let cfg = GuidanceConfig::new(GuidanceMode::External, 2.0, 5).unwrap();
        assert!(matches!(
            sample_external(&e, &cfg, &est, &emb, &sched, &mut seed, None),
            Err(Error::Config(_))
        ));
        let cfg = GuidanceConfig::new(GuidanceMode::BuiltIn, 2.0, 4).unwrap();
        assert!(sample_external(&e, &cfg, &est, &emb, &sched, &mut seed, None).is_err());
        let cfg = GuidanceConfig::new(GuidanceMode::External, 2.0, 4).unwrap();
        let wide = ToyEmbedder::identity(5);
        assert!(sample_external(&e, &cfg, &est, &wide, &sched, &mut seed, None).is_err());
    }

    #[test]
    fn external_at_zero_scale_is_unguided_and_traces() {
        let sched = NoiseSchedule::build(ScheduleKind::Linear, 30).unwrap();
        let est = AnalyticGaussianEstimator::standard(4, 3, sched.clone());
        let emb = ToyEmbedder::identity(3);
        let e = SpeakerEmbedding::normalize(vec![1.0, 2.0, 2.0]).unwrap();
        let cfg = GuidanceConfig::new(GuidanceMode::External, 0.0, 4).unwrap();
        let plain = sample_unguided(&est, &sched, &mut DiffusionSeed::new(9)).unwrap();
        let mut log = Vec::new();
        let mut trace = Trace::new(&emb, &mut log);
        let guided = sample_external(
            &e,
            &cfg,
            &est,
            &emb,
            &sched,
            &mut DiffusionSeed::new(9),
            Some(&mut trace),
        )
        .unwrap();
        assert_eq!(plain, guided);
        let log = String::from_utf8(log).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 30);
        assert!(lines[0].starts_with("t=30 sim="));
        assert!(lines[29].starts_with("t=1 sim="));
    }
}
