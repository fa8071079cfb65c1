use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use voxtend_core::audio::{fbank, read_wav, vad_filter};
use voxtend_core::estimators::toy::ToyWorld;
use voxtend_core::estimators::{train_estimator, Embedder, SmallNetEstimator, ToyEmbedder};
use voxtend_core::eval::{format_metrics, load_score_csv, load_trials, min_dcf, eer, DcfParams, Label};
use voxtend_core::guidance::{sample_builtin, sample_external, GuidanceConfig, GuidanceMode, Trace};
use voxtend_core::parallel::try_map_indexed;
use voxtend_core::pipeline::{frames_for, Generator, Protocol, ProtocolConfig};
use voxtend_core::{DiffusionSeed, Error, FeatureMap};

use crate::config::RunConfig;
use crate::CliError;

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Create `out` and write every `(name, contents)` pair plus `config.txt`.
fn write_outputs(out: &Path, cfg: &RunConfig, files: &[(String, String)]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let mut written = Vec::with_capacity(files.len() + 1);
    for (name, contents) in files.iter().chain([&("config.txt".to_string(), cfg.to_text())]) {
        let path = out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

fn load_embedder(cfg: &RunConfig) -> Result<ToyEmbedder, CliError> {
    let path = cfg.existing_file("embedder")?;
    ToyEmbedder::from_text(&read_text(&path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_estimator(cfg: &RunConfig) -> Result<SmallNetEstimator, CliError> {
    let path = cfg.existing_file("estimator")?;
    SmallNetEstimator::from_text(&read_text(&path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn file_stem(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Validation(format!("{}: cannot derive an output name", path.display())))
}

/// WAV files to `<stem>.fbank`: VAD, then log mel filterbanks.
pub fn features(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let fb = cfg.fbank()?;
    let vad = cfg.vad()?;
    if inputs.is_empty() {
        return Err(CliError::Validation("no input files".into()));
    }
    let mut names = BTreeMap::new();
    for input in inputs {
        if !input.is_file() {
            return Err(CliError::Validation(format!("{}: no such file", input.display())));
        }
        let stem = file_stem(input)?;
        if let Some(prev) = names.insert(stem.clone(), input) {
            return Err(CliError::Validation(format!(
                "{} and {} both map to {stem}.fbank",
                prev.display(),
                input.display()
            )));
        }
    }
    let exec = cfg.execution()?;
    let maps = try_map_indexed(exec, inputs.len(), |i| {
        let path = &inputs[i];
        let named = |e: Error| Error::for_utterance(e, path.display().to_string());
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let mut wave = read_wav(&bytes).map_err(named)?;
        if let Some(v) = &vad {
            wave = vad_filter(&wave, v.frame_len, v.threshold_db);
            if wave.samples.is_empty() {
                return Err(named(Error::InvalidArgument(
                    "voice activity detection removed every frame".into(),
                )));
            }
        }
        fbank(&wave, &fb).map_err(named)
    })
    .map_err(CliError::runtime)?;
    let files: Vec<(String, String)> = inputs
        .iter()
        .zip(maps)
        .map(|(p, m)| Ok((format!("{}.fbank", file_stem(p)?), m.to_text())))
        .collect::<Result<_, CliError>>()?;
    write_outputs(out, cfg, &files)
}

fn toy_world(cfg: &RunConfig) -> Result<ToyWorld, CliError> {
    let mut seed = DiffusionSeed::keyed(cfg.seed()?, &["toy-world"]);
    ToyWorld::generate(cfg.toy()?, &mut seed).map_err(|e| CliError::Validation(e.to_string()))
}

/// Toy corpus: embedder checkpoint, utterance feature maps and an all-pairs trial list.
pub fn toy(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let world = toy_world(cfg)?;
    let count: usize = cfg.get("toy.utterances")?;
    let blocks: usize = cfg.get("toy.blocks")?;
    if count < 2 || blocks == 0 {
        return Err(CliError::Validation("toy.utterances must be >= 2 and toy.blocks >= 1".into()));
    }
    let mut seed = DiffusionSeed::keyed(cfg.seed()?, &["toy-utterances"]);
    let mut files = vec![("embedder.ckpt".to_string(), world.embedder().to_text())];
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % world.clusters();
        let id = format!("spk{k}_utt{i:03}");
        files.push((format!("{id}.fbank"), world.utterance(k, blocks, &mut seed).to_text()));
        ids.push((id, k));
    }
    let mut trials = String::new();
    for (i, (a, ka)) in ids.iter().enumerate() {
        for (b, kb) in &ids[i + 1..] {
            trials.push_str(&format!("{} {a} {b}\n", u8::from(ka == kb)));
        }
    }
    files.push(("trials.txt".to_string(), trials));
    write_outputs(out, cfg, &files)
}

/// Train the small net on the toy world; writes the net, embedder and loss curve.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let world = toy_world(cfg)?;
    let shape = cfg.net_shape()?;
    let tc = cfg.train()?;
    let sched = cfg.schedule()?;
    let master = cfg.seed()?;
    let net = SmallNetEstimator::init(shape, &mut DiffusionSeed::keyed(master, &["net-init"]))
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let outcome = train_estimator(&world, net, &tc, &sched, &mut DiffusionSeed::keyed(master, &["train"]))
        .map_err(CliError::runtime)?;
    let mut losses = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        losses.push_str(&format!("{},{l:?}\n", i + 1));
    }
    let window = (tc.steps / 20).max(1);
    let (first, last) = outcome.smoothed_endpoints(window);
    eprintln!("smoothed loss {first:.6} -> {last:.6} over {} steps", tc.steps);
    write_outputs(
        out,
        cfg,
        &[
            ("net.ckpt".into(), outcome.net.to_text()),
            ("embedder.ckpt".into(), world.embedder().to_text()),
            ("loss.csv".into(), losses),
        ],
    )
}

/// Guided samples toward the embedding of a reference feature map.
pub fn sample(cfg: &RunConfig, reference: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let net = load_estimator(cfg)?;
    let embedder = load_embedder(cfg)?;
    let sched = cfg.schedule()?;
    let (mode, scale) = cfg.guidance()?;
    let count: usize = cfg.get("samples")?;
    if count == 0 {
        return Err(CliError::Validation("`samples` must be positive".into()));
    }
    if !reference.is_file() {
        return Err(CliError::Validation(format!("{}: no such file", reference.display())));
    }
    let reference_map = FeatureMap::from_text(&read_text(reference)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", reference.display())))?;
    let e = embedder
        .embed(&reference_map)
        .map_err(|e| CliError::Validation(format!("{}: {e}", reference.display())))?;
    let frames = net.net_shape().frames;
    let guidance = GuidanceConfig::new(mode, scale, frames).map_err(|e| CliError::Validation(e.to_string()))?;
    let master = cfg.seed()?;
    let results = try_map_indexed(cfg.execution()?, count, |i| {
        let mut seed = DiffusionSeed::keyed(master, &["sample", &i.to_string()]);
        let mut sink = Vec::new();
        let x = {
            let mut trace = Trace::new(&embedder, &mut sink);
            match mode {
                GuidanceMode::External => {
                    sample_external(&e, &guidance, &net, &embedder, &sched, &mut seed, Some(&mut trace))?
                }
                GuidanceMode::BuiltIn => sample_builtin(&e, &guidance, &net, &sched, &mut seed, Some(&mut trace))?,
            }
        };
        let sim = embedder.embed(&x)?.dot(&e);
        Ok((x, String::from_utf8(sink).expect("trace is ASCII"), sim))
    })
    .map_err(CliError::runtime)?;
    let mut files = Vec::with_capacity(2 * count + 1);
    let mut summary = String::from("sample,similarity\n");
    for (i, (x, trace, sim)) in results.into_iter().enumerate() {
        files.push((format!("sample_{i:03}.fbank"), x.to_text()));
        files.push((format!("trace_{i:03}.txt"), trace));
        summary.push_str(&format!("{i},{sim}\n"));
    }
    files.push(("similarity.csv".into(), summary));
    write_outputs(out, cfg, &files)
}

fn resolve_features(dir: &Path, id: &str) -> Option<PathBuf> {
    let direct = dir.join(format!("{id}.fbank"));
    if direct.is_file() {
        return Some(direct);
    }
    let stem = Path::new(id).file_stem()?.to_str()?;
    let by_stem = dir.join(format!("{stem}.fbank"));
    by_stem.is_file().then_some(by_stem)
}

/// Clip, extend and score every trial under each configured condition.
pub fn extend_eval(cfg: &RunConfig, trials_path: &Path, features_dir: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let conditions = cfg.conditions()?;
    let sched = cfg.schedule()?;
    let embedder = load_embedder(cfg)?;
    let needs_generator = conditions.iter().any(|c| c.kind.generates());
    let net = if needs_generator { Some(load_estimator(cfg)?) } else { None };
    if !trials_path.is_file() {
        return Err(CliError::Validation(format!("{}: no such file", trials_path.display())));
    }
    let trials = load_trials(&read_text(trials_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", trials_path.display())))?;
    if trials.is_empty() {
        return Err(CliError::Validation(format!("{}: no trials", trials_path.display())));
    }
    let mut utterances = BTreeMap::new();
    for id in trials.iter().flat_map(|t| [&t.enroll, &t.test]) {
        if utterances.contains_key(id) {
            continue;
        }
        let path = resolve_features(features_dir, id).ok_or_else(|| {
            CliError::Validation(format!("utterance `{id}`: no features in {}", features_dir.display()))
        })?;
        let map = FeatureMap::from_text(&read_text(&path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if map.bins() != embedder.input_bins() {
            return Err(CliError::Validation(format!(
                "utterance `{id}` has {} bins, embedder expects {}",
                map.bins(),
                embedder.input_bins()
            )));
        }
        utterances.insert(id.clone(), map);
    }
    let frame_shift = cfg.frame_shift()?;
    let shortest = utterances.iter().min_by_key(|(_, m)| m.frames()).expect("trials are non-empty");
    for c in &conditions {
        let needed = frames_for(c.clip_s, frame_shift).map_err(|e| CliError::Validation(e.to_string()))?;
        if needed > shortest.1.frames() {
            return Err(CliError::Validation(format!(
                "utterance `{}` has {} frames, clip_s = {} needs {needed} at frame_shift = {frame_shift}",
                shortest.0,
                shortest.1.frames(),
                c.clip_s
            )));
        }
    }
    if let Some(n) = &net {
        if n.net_shape().bins != embedder.input_bins() {
            return Err(CliError::Validation(format!(
                "estimator generates {} bins, embedder expects {}",
                n.net_shape().bins,
                embedder.input_bins()
            )));
        }
    }
    let mut modes: Vec<GuidanceMode> = conditions.iter().filter(|c| c.kind.generates()).map(|c| c.mode).collect();
    modes.dedup();
    if modes.len() > 1 {
        return Err(CliError::Validation("generating conditions must share one guidance mode".into()));
    }
    let generator = net.as_ref().map(|n| match modes[0] {
        GuidanceMode::External => Generator::External {
            estimator: n,
            embedder: &embedder,
        },
        GuidanceMode::BuiltIn => Generator::BuiltIn { estimator: n },
    });
    let protocol = Protocol {
        utterances: &utterances,
        embedder: &embedder,
        generator,
        sched: &sched,
    };
    let pcfg = ProtocolConfig {
        frame_shift,
        master_seed: cfg.seed()?,
        extend_enroll: cfg.get("extend_enroll")?,
        execution: cfg.execution()?,
        cache_dir: cfg.cache_dir(),
        dcf: DcfParams::default(),
    };
    let result = protocol.run(&trials, &conditions, &pcfg).map_err(CliError::runtime)?;
    let mut files = vec![("results.csv".to_string(), result.results_csv())];
    for (i, (cond, s)) in conditions.iter().zip(&result.scores).enumerate() {
        let mut scores = String::from("score,label\n");
        for (t, v) in trials.iter().zip(s) {
            scores.push_str(&format!("{v:?},{}\n", u8::from(t.label == Label::Same)));
        }
        files.push((format!("scores_{i:02}_{}.csv", cond.kind), scores));
    }
    if cfg.get::<bool>("dump_embeddings")? {
        files.push(("embeddings.csv".into(), result.embeddings_csv()));
    }
    print!("{}", result.results_csv());
    write_outputs(out, cfg, &files)
}

/// EER and MinDCF over a `score,label` CSV.
pub fn metrics(scores: &Path) -> Result<String, CliError> {
    if !scores.is_file() {
        return Err(CliError::Validation(format!("{}: no such file", scores.display())));
    }
    let set = load_score_csv(&read_text(scores)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", scores.display())))?;
    let e = eer(&set).map_err(|e| CliError::Validation(e.to_string()))?;
    let d = min_dcf(&set, DcfParams::default()).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(format_metrics(e, d))
}
