//! Noise estimators and speaker embedders behind the samplers.

mod analytic;
mod tensor;
mod embedder;
mod net;
pub mod toy;

pub use analytic::{AnalyticGaussianEstimator, AnalyticMixtureEstimator};
pub use embedder::ToyEmbedder;
pub use tensor::Tensor;
pub use net::{
    net_grad, time_embedding, train_estimator, NetParams, NetShape, Optimizer, PairSource, SmallNetEstimator,
    TrainConfig, TrainOutcome, TrainingItem, TIME_EMBED_WIDTH,
};

use crate::embedding::SpeakerEmbedding;
use crate::error::Result;
use crate::feature_map::FeatureMap;

/// Unconditional noise prediction `eps(x_t, t)`.
pub trait NoiseEstimator: Send + Sync {
    /// `(frames, bins)` of the maps this estimator accepts.
    fn shape(&self) -> (usize, usize);

    fn estimate(&self, x_t: &FeatureMap, t: usize) -> Result<FeatureMap>;
}

/// Noise prediction that can also be conditioned on a speaker embedding.
///
/// `None` selects the unconditional (null-condition) branch, which must agree
/// with [`NoiseEstimator::estimate`].
pub trait ConditionalEstimator: NoiseEstimator {
    fn estimate_conditional(
        &self,
        x_t: &FeatureMap,
        t: usize,
        condition: Option<&SpeakerEmbedding>,
    ) -> Result<FeatureMap>;
}

/// Maps features to a unit-norm speaker embedding.
pub trait Embedder: Send + Sync {
    fn input_bins(&self) -> usize;

    fn embed(&self, x: &FeatureMap) -> Result<SpeakerEmbedding>;
}

/// An embedder that can differentiate `embed(x) · e` with respect to `x`.
pub trait DifferentiableEmbedder: Embedder {
    fn similarity_grad(&self, x: &FeatureMap, e: &SpeakerEmbedding) -> Result<FeatureMap>;
}
