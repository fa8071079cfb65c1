use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    pub sample_rate: u32,
    /// Analysis window length in seconds.
    pub frame_len: f64,
    /// Hop between frames in seconds.
    pub frame_shift: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Added to each filter energy before the log.
    pub floor: f64,
    /// Subtract the per-bin mean over frames.
    pub mean_normalize: bool,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 0.025,
            frame_shift: 0.010,
            n_fft: 512,
            n_mels: 64,
            f_min: 20.0,
            f_max: 8000.0,
            floor: 1e-10,
            mean_normalize: false,
        }
    }
}

impl FbankConfig {
    pub fn frame_samples(&self) -> usize {
        (self.frame_len * f64::from(self.sample_rate)).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.frame_shift * f64::from(self.sample_rate)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if !(self.frame_len > 0.0 && self.frame_shift > 0.0) {
            return Err(Error::Config("frame_len and frame_shift must be positive".into()));
        }
        if self.frame_samples() == 0 || self.shift_samples() == 0 {
            return Err(Error::Config("frame is shorter than one sample".into()));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(Error::Config(format!("n_fft={} is not a power of two", self.n_fft)));
        }
        if self.n_fft < self.frame_samples() {
            return Err(Error::Config(format!(
                "n_fft={} is shorter than the {}-sample frame",
                self.n_fft,
                self.frame_samples()
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got f_min={} f_max={}",
                self.f_min, self.f_max
            )));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::Config("floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Number of full frames in `n` samples, or zero when shorter than one frame.
pub fn frame_count(n: usize, frame: usize, shift: usize) -> usize {
    if n < frame {
        0
    } else {
        1 + (n - frame) / shift
    }
}

/// Triangular filters on the HTK mel scale, sampled at FFT bin frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Edge frequencies in Hz: `n_mels + 2` points equally spaced in mel.
    edges: Vec<f64>,
    /// `n_mels` rows of `n_fft / 2 + 1` weights.
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &FbankConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + step * i as f64))
            .collect();
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = f64::from(cfg.sample_rate) / cfg.n_fft as f64;
        let weights = (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { edges, weights })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.weights) {
            *o = row.iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

struct Analyzer {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    power: Vec<f64>,
}

impl Analyzer {
    fn new(cfg: &FbankConfig) -> Result<Self> {
        let bank = MelFilterbank::new(cfg)?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            window: hann(cfg.frame_samples()),
            fft,
            bank,
            buf: vec![Complex::default(); cfg.n_fft],
            scratch,
            power: vec![0.0; cfg.n_fft / 2 + 1],
        })
    }

    fn frame(&mut self, samples: &[f64], floor: f64, out: &mut [f64]) {
        self.buf.fill(Complex::default());
        for ((b, s), w) in self.buf.iter_mut().zip(samples).zip(&self.window) {
            b.re = s * w;
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (p, c) in self.power.iter_mut().zip(&self.buf) {
            *p = c.norm_sqr();
        }
        self.bank.apply(&self.power, out);
        for v in out.iter_mut() {
            *v = (*v + floor).ln();
        }
    }
}

/// Log mel filterbank energies, one row per full frame.
pub fn fbank(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::invalid(format!(
            "waveform is {} Hz, front end expects {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let (frame, shift) = (cfg.frame_samples(), cfg.shift_samples());
    let frames = frame_count(w.samples.len(), frame, shift);
    if frames == 0 {
        return Err(Error::invalid(format!(
            "{} samples is shorter than one {frame}-sample frame",
            w.samples.len()
        )));
    }
    let mut analyzer = Analyzer::new(cfg)?;
    let mut values = vec![0.0; frames * cfg.n_mels];
    for (i, row) in values.chunks_exact_mut(cfg.n_mels).enumerate() {
        let start = i * shift;
        analyzer.frame(&w.samples[start..start + frame], cfg.floor, row);
    }
    let map = FeatureMap::new(frames, cfg.n_mels, values)?;
    Ok(if cfg.mean_normalize {
        map.mean_normalized()
    } else {
        map
    })
}
