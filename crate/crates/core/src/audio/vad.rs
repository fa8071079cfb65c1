use super::wav::Waveform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    /// Frame length in seconds.
    pub frame_len: f64,
    /// Frames with RMS level below this (dB re full scale) are dropped.
    pub threshold_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_len: 0.025,
            threshold_db: -40.0,
        }
    }
}

/// Drop non-overlapping frames whose RMS level is below `threshold_db` dBFS.
///
/// A trailing partial frame is discarded, so the output length is always a
/// multiple of the frame length in samples.
pub fn vad_filter(w: &Waveform, frame_len: f64, threshold_db: f64) -> Waveform {
    let frame = ((frame_len * f64::from(w.sample_rate)).round() as usize).max(1);
    let mut kept = Vec::with_capacity(w.samples.len());
    for chunk in w.samples.chunks_exact(frame) {
        let mean_square = chunk.iter().map(|s| s * s).sum::<f64>() / frame as f64;
        let level = 10.0 * mean_square.log10();
        if level >= threshold_db {
            kept.extend_from_slice(chunk);
        }
    }
    Waveform {
        sample_rate: w.sample_rate,
        samples: kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_is_removed() {
        let w = Waveform::new(16_000, vec![0.0; 1600]).unwrap();
        assert!(vad_filter(&w, 0.025, -40.0).samples.is_empty());
    }

    #[test]
    fn full_scale_square_survives() {
        let samples: Vec<f64> = (0..1600).map(|i| if (i / 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let w = Waveform::new(16_000, samples).unwrap();
        assert_eq!(vad_filter(&w, 0.025, -40.0), w);
    }

    #[test]
    fn half_silence_half_tone() {
        // 4 silent frames, then 4 frames of a 0.1-amplitude tone (about -23 dBFS).
        let frame = 400;
        let mut samples = vec![0.0; 4 * frame];
        let tone: Vec<f64> = (0..4 * frame)
            .map(|i| 0.1 * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 16_000.0).sin())
            .collect();
        samples.extend_from_slice(&tone);
        let w = Waveform::new(16_000, samples).unwrap();
        let out = vad_filter(&w, 0.025, -40.0);
        assert_eq!(out.samples, tone);
    }

    #[test]
    fn partial_frame_dropped() {
        let w = Waveform::new(16_000, vec![0.5; 1000]).unwrap();
        let out = vad_filter(&w, 0.025, -40.0);
        assert_eq!(out.samples.len(), 800);
    }
}
