//! Speaker-embedding-guided diffusion for extending short utterances.
//!
//! The crate synthesizes log mel-filterbank feature maps with a denoising
//! diffusion model steered toward a reference speaker embedding, appends the
//! generated frames to a short utterance, and measures the effect on speaker
//! verification (EER and MinDCF).
//!
//! Modules, bottom-up:
//!
//! * [`schedule`], [`diffusion`]: noise schedules and the forward/reverse
//!   step math;
//! * [`estimators`]: noise predictors (analytic and a small trainable net)
//!   and the toy speaker embedder;
//! * [`guidance`]: the external-gradient and built-in (classifier-free)
//!   sampling loops;
//! * [`audio`]: WAV reading, energy VAD, log mel filterbanks;
//! * [`eval`]: trial lists, cosine scoring, EER and MinDCF;
//! * [`pipeline`]: clip / extend / score conditions over a trial set;
//! * [`parallel`]: batch execution, rayon-backed under the `parallel` feature.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod feature_map;
pub mod guidance;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod schedule;

pub use embedding::SpeakerEmbedding;
pub use error::{Error, Result};
pub use feature_map::FeatureMap;
pub use parallel::Execution;
pub use rng::DiffusionSeed;
pub use schedule::{NoiseSchedule, ScheduleKind, VarianceKind};
