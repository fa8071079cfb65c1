//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use voxtend_core::audio::{FbankConfig, VadConfig};
use voxtend_core::estimators::toy::ToyWorldConfig;
use voxtend_core::estimators::{NetShape, Optimizer, TrainConfig};
use voxtend_core::guidance::GuidanceMode;
use voxtend_core::pipeline::{Condition, ConditionKind};
use voxtend_core::{Execution, NoiseSchedule, ScheduleKind, VarianceKind};

use crate::CliError;

/// Every recognized key with its default.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("execution", "parallel"),
    ("schedule", "linear"),
    ("diffusion_steps", "200"),
    ("variance", "posterior"),
    ("guidance", "built-in"),
    ("scale", ""),
    ("estimator", ""),
    ("embedder", ""),
    ("sample_rate", "16000"),
    ("frame_len", "0.025"),
    ("frame_shift", "0.01"),
    ("n_fft", "512"),
    ("n_mels", "64"),
    ("f_min", "20"),
    ("f_max", "8000"),
    ("log_floor", "1e-10"),
    ("mean_normalize", "false"),
    ("vad", "true"),
    ("vad_frame_len", "0.025"),
    ("vad_threshold_db", "-40"),
    ("conditions", "baseline,dm,dm_plus,duplicate"),
    ("clip_s", "0.5"),
    ("gen_s", "0.5"),
    ("extend_enroll", "true"),
    ("dump_embeddings", "false"),
    ("cache_dir", ""),
    ("samples", "1"),
    ("train.steps", "2000"),
    ("train.batch_size", "32"),
    ("train.lr", "1e-3"),
    ("train.p_uncond", "0.1"),
    ("train.optimizer", "adam"),
    ("net.hidden1", "128"),
    ("net.hidden2", "128"),
    ("toy.clusters", "2"),
    ("toy.frames", "8"),
    ("toy.bins", "8"),
    ("toy.embed_dim", "8"),
    ("toy.profile_scale", "1.0"),
    ("toy.frame_variation", "0.5"),
    ("toy.spread", "0.5"),
    ("toy.utterances", "20"),
    ("toy.blocks", "4"),
];

pub const CACHE_ENV: &str = "VOXTEND_CACHE_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head).trim()
}

impl RunConfig {
    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            for (i, raw) in text.lines().enumerate() {
                let line = strip_comment(raw);
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Validation(format!("{}:{}: expected `key = value`", path.display(), i + 1))
                })?;
                Self::set(&mut values, k.trim(), v.trim(), &format!("{}:{}", path.display(), i + 1))?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("override `{o}` is not key=value")))?;
            Self::set(&mut values, k.trim(), v.trim(), "command line")?;
        }
        Ok(Self { values })
    }

    fn set(values: &mut BTreeMap<String, String>, key: &str, value: &str, origin: &str) -> Result<(), CliError> {
        match values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Validation(format!("{origin}: unknown key `{key}`"))),
        }
    }

    pub fn override_value(&mut self, key: &str, value: impl Display) {
        assert!(self.values.contains_key(key), "unknown key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key listed in DEFAULTS")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Validation(format!("`{key} = {raw}`: {e}")))
    }

    fn positive(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.get(key)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::Validation(format!("`{key}` must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    /// A path that must name an existing file.
    pub fn existing_file(&self, key: &str) -> Result<PathBuf, CliError> {
        let path = self
            .path(key)
            .ok_or_else(|| CliError::Validation(format!("`{key}` is required for this command")))?;
        if !path.is_file() {
            return Err(CliError::Validation(format!("`{key}`: {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Resolved configuration, one `key = value` line per key, sorted.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn execution(&self) -> Result<Execution, CliError> {
        match self.raw("execution") {
            "parallel" => Ok(Execution::Parallel),
            "sequential" => Ok(Execution::Sequential),
            other => Err(CliError::Validation(format!("`execution = {other}`: expected parallel or sequential"))),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        let kind: ScheduleKind = self.get("schedule")?;
        let steps: usize = self.get("diffusion_steps")?;
        let variance: VarianceKind = self.get("variance")?;
        Ok(NoiseSchedule::build(kind, steps)
            .map_err(|e| CliError::Validation(e.to_string()))?
            .with_variance(variance))
    }

    pub fn guidance(&self) -> Result<(GuidanceMode, f64), CliError> {
        let mode: GuidanceMode = self.get("guidance")?;
        let scale = if self.raw("scale").is_empty() {
            mode.default_scale()
        } else {
            self.get("scale")?
        };
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(CliError::Validation(format!("`scale` must be >= 0, got {scale}")));
        }
        Ok((mode, scale))
    }

    pub fn fbank(&self) -> Result<FbankConfig, CliError> {
        let cfg = FbankConfig {
            sample_rate: self.get("sample_rate")?,
            frame_len: self.positive("frame_len")?,
            frame_shift: self.positive("frame_shift")?,
            n_fft: self.get("n_fft")?,
            n_mels: self.get("n_mels")?,
            f_min: self.get("f_min")?,
            f_max: self.get("f_max")?,
            floor: self.positive("log_floor")?,
            mean_normalize: self.get("mean_normalize")?,
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    /// `None` when VAD is switched off.
    pub fn vad(&self) -> Result<Option<VadConfig>, CliError> {
        if !self.get::<bool>("vad")? {
            return Ok(None);
        }
        Ok(Some(VadConfig {
            frame_len: self.positive("vad_frame_len")?,
            threshold_db: self.get("vad_threshold_db")?,
        }))
    }

    pub fn frame_shift(&self) -> Result<f64, CliError> {
        self.positive("frame_shift")
    }

    pub fn conditions(&self) -> Result<Vec<Condition>, CliError> {
        let (mode, scale) = self.guidance()?;
        let clip_s = self.positive("clip_s")?;
        let gen_s = self.positive("gen_s")?;
        self.raw("conditions")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| {
                let kind: ConditionKind = name.parse().map_err(|e: voxtend_core::Error| CliError::Validation(e.to_string()))?;
                Condition::new(kind, clip_s, gen_s, mode, scale).map_err(|e| CliError::Validation(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()
            .and_then(|c| {
                if c.is_empty() {
                    Err(CliError::Validation("`conditions` is empty".into()))
                } else {
                    Ok(c)
                }
            })
    }

    /// `VOXTEND_CACHE_DIR` wins over the `cache_dir` key.
    pub fn cache_dir(&self) -> Option<PathBuf> {
        std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.path("cache_dir"))
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let optimizer: Optimizer = self.get("train.optimizer")?;
        let cfg = TrainConfig {
            steps: self.get("train.steps")?,
            batch_size: self.get("train.batch_size")?,
            learning_rate: self.positive("train.lr")?,
            p_uncond: self.get("train.p_uncond")?,
            optimizer,
        };
        if cfg.steps == 0 || cfg.batch_size == 0 {
            return Err(CliError::Validation("train.steps and train.batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.p_uncond) {
            return Err(CliError::Validation(format!("train.p_uncond {} outside [0, 1]", cfg.p_uncond)));
        }
        Ok(cfg)
    }

    pub fn toy(&self) -> Result<ToyWorldConfig, CliError> {
        Ok(ToyWorldConfig {
            clusters: self.get("toy.clusters")?,
            frames: self.get("toy.frames")?,
            bins: self.get("toy.bins")?,
            embed_dim: self.get("toy.embed_dim")?,
            profile_scale: self.get("toy.profile_scale")?,
            frame_variation: self.get("toy.frame_variation")?,
            spread: self.positive("toy.spread")?,
        })
    }

    pub fn net_shape(&self) -> Result<NetShape, CliError> {
        let toy = self.toy()?;
        Ok(NetShape {
            frames: toy.frames,
            bins: toy.bins,
            hidden1: self.get("net.hidden1")?,
            hidden2: self.get("net.hidden2")?,
            cond_dim: toy.embed_dim,
        })
    }
}
