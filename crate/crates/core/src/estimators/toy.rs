//! A synthetic "speaker" world: `K` Gaussian clusters in feature-map space.
//!
//! Each cluster mean is a per-bin profile shared by all frames plus a
//! per-frame pattern. Samples add isotropic noise. Every cluster owns the
//! reference embedding `embed(mean)` under the world's [`ToyEmbedder`].

use super::analytic::AnalyticMixtureEstimator;
use super::embedder::ToyEmbedder;
use super::net::PairSource;
use super::Embedder;
use crate::embedding::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::rng::DiffusionSeed;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyWorldConfig {
    pub clusters: usize,
    pub frames: usize,
    pub bins: usize,
    pub embed_dim: usize,
    /// Standard deviation of the per-bin speaker profile.
    pub profile_scale: f64,
    /// Standard deviation of the per-frame pattern around the profile.
    pub frame_variation: f64,
    /// Within-cluster noise standard deviation.
    pub spread: f64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            frames: 8,
            bins: 8,
            embed_dim: 8,
            profile_scale: 1.0,
            frame_variation: 0.5,
            spread: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    cfg: ToyWorldConfig,
    means: Vec<FeatureMap>,
    embedder: ToyEmbedder,
    references: Vec<SpeakerEmbedding>,
}

impl ToyWorld {
    pub fn generate(cfg: ToyWorldConfig, seed: &mut DiffusionSeed) -> Result<Self> {
        if cfg.clusters == 0 || cfg.frames == 0 || cfg.bins == 0 || cfg.embed_dim == 0 {
            return Err(Error::invalid("toy world dimensions must be positive"));
        }
        if !(cfg.spread > 0.0) || cfg.profile_scale < 0.0 || cfg.frame_variation < 0.0 {
            return Err(Error::invalid("toy world scales must be non-negative, spread positive"));
        }
        let embedder = ToyEmbedder::random(cfg.embed_dim, cfg.bins, seed);
        let mut means = Vec::with_capacity(cfg.clusters);
        for _ in 0..cfg.clusters {
            let profile: Vec<f64> = (0..cfg.bins).map(|_| cfg.profile_scale * seed.normal()).collect();
            let pattern = seed.normal_map(cfg.frames, cfg.bins);
            let values = pattern
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, p)| profile[i % cfg.bins] + cfg.frame_variation * p)
                .collect();
            means.push(FeatureMap::new(cfg.frames, cfg.bins, values)?);
        }
        let references = means
            .iter()
            .map(|m| embedder.embed(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            means,
            embedder,
            references,
        })
    }

    pub fn config(&self) -> &ToyWorldConfig {
        &self.cfg
    }

    pub fn means(&self) -> &[FeatureMap] {
        &self.means
    }

    pub fn embedder(&self) -> &ToyEmbedder {
        &self.embedder
    }

    pub fn references(&self) -> &[SpeakerEmbedding] {
        &self.references
    }

    pub fn clusters(&self) -> usize {
        self.means.len()
    }

    /// One `frames × bins` draw from cluster `k`.
    pub fn sample(&self, k: usize, seed: &mut DiffusionSeed) -> FeatureMap {
        let spread = self.cfg.spread;
        self.means[k].map(|m| m + spread * seed.normal())
    }

    /// `blocks` consecutive draws from cluster `k`, concatenated along frames.
    pub fn utterance(&self, k: usize, blocks: usize, seed: &mut DiffusionSeed) -> FeatureMap {
        let mut out = self.sample(k, seed);
        for _ in 1..blocks.max(1) {
            out = out
                .concat_frames(&self.sample(k, seed))
                .expect("blocks share bin count");
        }
        out
    }

    /// Index of the cluster mean closest in Euclidean distance.
    pub fn nearest_cluster(&self, x: &FeatureMap) -> usize {
        let dist = |m: &FeatureMap| -> f64 {
            m.as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        };
        self.means
            .iter()
            .enumerate()
            .map(|(k, m)| (k, dist(m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(k, _)| k)
    }

    /// The exact noise predictor for this world's data distribution.
    pub fn mixture_estimator(&self, sched: NoiseSchedule) -> Result<AnalyticMixtureEstimator> {
        let var = self.cfg.spread * self.cfg.spread;
        AnalyticMixtureEstimator::new(self.means.clone(), vec![var; self.means.len()], sched)?
            .with_references(self.references.clone())
    }
}

impl PairSource for ToyWorld {
    fn draw(&self, seed: &mut DiffusionSeed) -> (FeatureMap, SpeakerEmbedding) {
        let k = seed.index_inclusive(self.means.len() - 1);
        (self.sample(k, seed), self.references[k].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_land_near_their_cluster() {
        let world = ToyWorld::generate(ToyWorldConfig::default(), &mut DiffusionSeed::new(1)).unwrap();
        let mut seed = DiffusionSeed::new(2);
        for k in 0..world.clusters() {
            for _ in 0..50 {
                assert_eq!(world.nearest_cluster(&world.sample(k, &mut seed)), k);
            }
        }
    }

    #[test]
    fn utterance_has_requested_blocks() {
        let world = ToyWorld::generate(ToyWorldConfig::default(), &mut DiffusionSeed::new(1)).unwrap();
        let u = world.utterance(1, 3, &mut DiffusionSeed::new(3));
        assert_eq!(u.shape(), (24, 8));
    }
}
