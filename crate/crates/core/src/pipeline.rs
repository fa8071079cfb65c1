//! The short-utterance protocol: clip, extend, embed, score.
//!
//! Every utterance is clipped to `clip_s` seconds once per clip length; the
//! same clip feeds every condition. Generated blocks are seeded by utterance,
//! clip and generation settings, so `dm` and `dm_plus` share their block and
//! parallel runs reproduce serial ones.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use crate::embedding::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::estimators::{ConditionalEstimator, DifferentiableEmbedder, Embedder, NoiseEstimator};
use crate::eval::{cosine_score, eer, min_dcf, DcfParams, Label, ScoreSet, Trial};
use crate::feature_map::FeatureMap;
use crate::guidance::{sample_builtin, sample_external, GuidanceConfig, GuidanceMode};
use crate::parallel::{try_map_indexed, Execution};
use crate::rng::{key_hash, DiffusionSeed};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionKind {
    /// The clip alone.
    Baseline,
    /// Generated frames only.
    Dm,
    /// Clip followed by generated frames.
    DmPlus,
    /// Clip followed by itself.
    Duplicate,
}

impl ConditionKind {
    pub fn generates(self) -> bool {
        matches!(self, Self::Dm | Self::DmPlus)
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Dm => "dm",
            Self::DmPlus => "dm_plus",
            Self::Duplicate => "duplicate",
        })
    }
}

impl std::str::FromStr for ConditionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "dm" => Ok(Self::Dm),
            "dm_plus" | "dm+" => Ok(Self::DmPlus),
            "duplicate" => Ok(Self::Duplicate),
            other => Err(Error::invalid(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub kind: ConditionKind,
    /// Clip length in seconds.
    pub clip_s: f64,
    /// Generated length in seconds; ignored unless the kind generates.
    pub gen_s: f64,
    pub mode: GuidanceMode,
    pub scale: f64,
}

impl Condition {
    pub fn new(kind: ConditionKind, clip_s: f64, gen_s: f64, mode: GuidanceMode, scale: f64) -> Result<Self> {
        let c = Self {
            kind,
            clip_s,
            gen_s,
            mode,
            scale,
        };
        c.validate()?;
        Ok(c)
    }

    /// A non-generating condition.
    pub fn plain(kind: ConditionKind, clip_s: f64) -> Result<Self> {
        Self::new(kind, clip_s, 0.0, GuidanceMode::BuiltIn, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_s.is_finite() && self.clip_s > 0.0) {
            return Err(Error::invalid(format!("clip duration {} must be positive", self.clip_s)));
        }
        if self.kind.generates() {
            if !(self.gen_s.is_finite() && self.gen_s > 0.0) {
                return Err(Error::invalid(format!(
                    "generated duration {} must be positive",
                    self.gen_s
                )));
            }
            if !(self.scale.is_finite() && self.scale >= 0.0) {
                return Err(Error::invalid(format!("guidance scale {} must be >= 0", self.scale)));
            }
        }
        Ok(())
    }

    /// Row label: the kind, plus guidance mode and scale for generating kinds.
    pub fn label(&self) -> String {
        if self.kind.generates() {
            format!("{}:{}:{}", self.kind, self.mode, self.scale)
        } else {
            self.kind.to_string()
        }
    }

    fn gen_key(&self) -> String {
        format!("{}|{}|{}", self.gen_s, self.mode, self.scale)
    }
}

/// Frames covering `seconds` at `frame_shift` seconds per frame.
pub fn frames_for(seconds: f64, frame_shift: f64) -> Result<usize> {
    if !(frame_shift > 0.0 && frame_shift.is_finite()) {
        return Err(Error::invalid(format!("frame shift {frame_shift} must be positive")));
    }
    let n = (seconds / frame_shift).round();
    if !(n >= 1.0) {
        return Err(Error::invalid(format!(
            "{seconds} s is less than one {frame_shift} s frame"
        )));
    }
    Ok(n as usize)
}

/// Random contiguous `round(duration / frame_shift)`-frame slice.
pub fn clip(
    features: &FeatureMap,
    duration: f64,
    frame_shift: f64,
    seed: &mut DiffusionSeed,
) -> Result<FeatureMap> {
    let n = frames_for(duration, frame_shift)?;
    if n > features.frames() {
        return Err(Error::ShortUtterance {
            needed: n,
            available: features.frames(),
        });
    }
    let offset = seed.index_inclusive(features.frames() - n);
    features.slice_frames(offset, n)
}

/// The sampler that produces generated frames.
#[derive(Clone, Copy)]
pub enum Generator<'a> {
    External {
        estimator: &'a dyn NoiseEstimator,
        embedder: &'a dyn DifferentiableEmbedder,
    },
    BuiltIn {
        estimator: &'a dyn ConditionalEstimator,
    },
}

impl Generator<'_> {
    pub fn mode(&self) -> GuidanceMode {
        match self {
            Self::External { .. } => GuidanceMode::External,
            Self::BuiltIn { .. } => GuidanceMode::BuiltIn,
        }
    }

    fn block_shape(&self) -> (usize, usize) {
        match self {
            Self::External { estimator, .. } => estimator.shape(),
            Self::BuiltIn { estimator } => estimator.shape(),
        }
    }

    /// `frames` guided frames, sampled block by block and truncated.
    pub fn generate(
        &self,
        e: &SpeakerEmbedding,
        scale: f64,
        frames: usize,
        sched: &NoiseSchedule,
        seed: &mut DiffusionSeed,
    ) -> Result<FeatureMap> {
        let (block, _) = self.block_shape();
        let cfg = GuidanceConfig::new(self.mode(), scale, block)?;
        let mut out: Option<FeatureMap> = None;
        while out.as_ref().map_or(0, FeatureMap::frames) < frames {
            let next = match self {
                Self::External {
                    estimator,
                    embedder,
                } => sample_external(e, &cfg, *estimator, *embedder, sched, seed, None)?,
                Self::BuiltIn { estimator } => sample_builtin(e, &cfg, *estimator, sched, seed, None)?,
            };
            out = Some(match out {
                Some(prev) => prev.concat_frames(&next)?,
                None => next,
            });
        }
        out.expect("frames >= 1").slice_frames(0, frames)
    }
}

/// Apply a condition to an already clipped utterance.
///
/// The guidance embedding is `embedder.embed(clip)`.
pub fn extend(
    clip: &FeatureMap,
    cond: &Condition,
    embedder: &dyn Embedder,
    generator: Option<&Generator<'_>>,
    sched: &NoiseSchedule,
    frame_shift: f64,
    seed: &mut DiffusionSeed,
) -> Result<FeatureMap> {
    cond.validate()?;
    match cond.kind {
        ConditionKind::Baseline => Ok(clip.clone()),
        ConditionKind::Duplicate => clip.concat_frames(clip),
        ConditionKind::Dm | ConditionKind::DmPlus => {
            let generator = generator.ok_or_else(|| Error::Config("condition needs a generator".into()))?;
            if generator.mode() != cond.mode {
                return Err(Error::Config(format!(
                    "condition asks for {} guidance but the generator is {}",
                    cond.mode,
                    generator.mode()
                )));
            }
            let e = embedder.embed(clip)?;
            let n = frames_for(cond.gen_s, frame_shift)?;
            let generated = generator.generate(&e, cond.scale, n, sched, seed)?;
            if cond.kind == ConditionKind::Dm {
                Ok(generated)
            } else {
                clip.concat_frames(&generated)
            }
        }
    }
}

pub struct ProtocolConfig {
    pub frame_shift: f64,
    pub master_seed: u64,
    /// Extend the enroll side too; when false only test utterances are extended.
    pub extend_enroll: bool,
    pub execution: Execution,
    /// Directory for extended feature maps, reused across runs when present.
    pub cache_dir: Option<PathBuf>,
    pub dcf: DcfParams,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            frame_shift: 0.01,
            master_seed: 0,
            extend_enroll: true,
            execution: Execution::default(),
            cache_dir: None,
            dcf: DcfParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub condition: String,
    pub clip_s: f64,
    pub gen_s: f64,
    pub eer: f64,
    pub min_dcf: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub condition: String,
    pub utterance: String,
    /// Whether this version of the utterance was extended.
    pub extended: bool,
    pub embedding: SpeakerEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutput {
    pub rows: Vec<ResultRow>,
    pub embeddings: Vec<EmbeddingRecord>,
    /// Per condition, the scores in trial order.
    pub scores: Vec<Vec<f64>>,
}

impl ProtocolOutput {
    pub fn results_csv(&self) -> String {
        let mut out = String::from("condition,clip_s,gen_s,eer,mindcf,n_trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.condition, r.clip_s, r.gen_s, r.eer, r.min_dcf, r.n_trials
            ));
        }
        out
    }

    pub fn embeddings_csv(&self) -> String {
        let mut out = String::from("condition,utterance,extended,values\n");
        for r in &self.embeddings {
            let values: Vec<String> = r.embedding.as_slice().iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.condition,
                r.utterance,
                u8::from(r.extended),
                values.join(" ")
            ));
        }
        out
    }
}

pub struct Protocol<'a> {
    pub utterances: &'a BTreeMap<String, FeatureMap>,
    pub embedder: &'a dyn Embedder,
    pub generator: Option<Generator<'a>>,
    pub sched: &'a NoiseSchedule,
}

fn cache_path(dir: &std::path::Path, utt: &str, cond: &Condition, extended: bool, master: u64) -> PathBuf {
    let key = key_hash(&[
        &master.to_string(),
        &cond.label(),
        &cond.clip_s.to_string(),
        &cond.gen_s.to_string(),
        if extended { "x" } else { "c" },
    ]);
    let safe: String = utt
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}-{:016x}-{key:016x}.fbank", key_hash(&[utt])))
}

impl Protocol<'_> {
    fn features(&self, utt: &str, cond: &Condition, extended: bool, cfg: &ProtocolConfig) -> Result<FeatureMap> {
        let cached = cfg
            .cache_dir
            .as_deref()
            .map(|dir| cache_path(dir, utt, cond, extended, cfg.master_seed));
        if let Some(path) = &cached {
            if path.is_file() {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                return FeatureMap::from_text(&text);
            }
        }
        let full = self
            .utterances
            .get(utt)
            .ok_or_else(|| Error::invalid("no features for this utterance"))?;
        let clip_key = cond.clip_s.to_string();
        let mut clip_seed = DiffusionSeed::keyed(cfg.master_seed, &["clip", utt, &clip_key]);
        let clipped = clip(full, cond.clip_s, cfg.frame_shift, &mut clip_seed)?;
        let out = if !extended || cond.kind == ConditionKind::Baseline {
            clipped
        } else {
            let gen_key = cond.gen_key();
            let mut gen_seed = DiffusionSeed::keyed(cfg.master_seed, &["gen", utt, &clip_key, &gen_key]);
            extend(&clipped, cond, self.embedder, self.generator.as_ref(), self.sched, cfg.frame_shift, &mut gen_seed)?
        };
        if let Some(path) = &cached {
            std::fs::write(path, out.to_text()).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
        }
        Ok(out)
    }

    /// Score every trial under every condition.
    pub fn run(&self, trials: &[Trial], conditions: &[Condition], cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
        if trials.is_empty() {
            return Err(Error::invalid("empty trial list"));
        }
        for cond in conditions {
            cond.validate()?;
            if cond.kind.generates() && self.generator.is_none() {
                return Err(Error::Config(format!("condition `{}` needs a generator", cond.label())));
            }
        }
        for t in trials {
            for id in [&t.enroll, &t.test] {
                if !self.utterances.contains_key(id.as_str()) {
                    return Err(Error::invalid("no features for this utterance").for_utterance(id.as_str()));
                }
            }
        }
        if let Some(dir) = &cfg.cache_dir {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.clone(),
                source,
            })?;
        }

        // (utterance, extended) pairs needed by the trial list, in first-use order.
        let mut keys: Vec<(&str, bool)> = Vec::new();
        let mut index: HashMap<(&str, bool), usize> = HashMap::new();
        let mut trial_keys = Vec::with_capacity(trials.len());
        for t in trials {
            let mut slot = |id: &'_ str, ext: bool| {
                let id: &str = self.utterances.get_key_value(id).expect("checked above").0;
                *index.entry((id, ext)).or_insert_with(|| {
                    keys.push((id, ext));
                    keys.len() - 1
                })
            };
            let e = slot(&t.enroll, cfg.extend_enroll);
            let s = slot(&t.test, true);
            trial_keys.push((e, s));
        }

        let mut out = ProtocolOutput {
            rows: Vec::with_capacity(conditions.len()),
            embeddings: Vec::new(),
            scores: Vec::with_capacity(conditions.len()),
        };
        for cond in conditions {
            let embeddings = try_map_indexed(cfg.execution, keys.len(), |i| {
                let (utt, ext) = keys[i];
                self.features(utt, cond, ext, cfg)
                    .and_then(|f| self.embedder.embed(&f))
                    .map_err(|e| e.for_utterance(utt))
            })?;
            let scores = trial_keys
                .iter()
                .map(|&(a, b)| cosine_score(&embeddings[a], &embeddings[b]))
                .collect::<Result<Vec<f64>>>()?;
            let labels: Vec<Label> = trials.iter().map(|t| t.label).collect();
            let set = ScoreSet::new(scores.clone(), labels)?;
            let label = cond.label();
            out.rows.push(ResultRow {
                condition: label.clone(),
                clip_s: cond.clip_s,
                gen_s: if cond.kind.generates() { cond.gen_s } else { 0.0 },
                eer: eer(&set)?,
                min_dcf: min_dcf(&set, cfg.dcf)?,
                n_trials: trials.len(),
            });
            out.scores.push(scores);
            for ((utt, ext), emb) in keys.iter().zip(embeddings) {
                out.embeddings.push(EmbeddingRecord {
                    condition: label.clone(),
                    utterance: utt.to_string(),
                    extended: *ext && cond.kind != ConditionKind::Baseline,
                    embedding: emb,
                });
            }
        }
        Ok(out)
    }
}
