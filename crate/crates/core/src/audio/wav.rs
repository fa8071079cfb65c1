use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

fn fmt_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::WavFormat {
        field,
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a mono 16-bit PCM RIFF/WAVE file; samples are scaled by 1/32768.
pub fn read_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(fmt_err("riff header", "missing `RIFF` tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fmt_err("riff header", "missing `WAVE` form type"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(fmt_err("fmt chunk", format!("chunk of {size} bytes is too short")));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or_else(|| fmt_err("fmt chunk", "`data` chunk precedes `fmt `"))?;
                if tag != 1 {
                    return Err(fmt_err("audio format", format!("tag {tag} is not PCM (1)")));
                }
                if channels != 1 {
                    return Err(fmt_err("channels", format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(fmt_err("bits per sample", format!("{bits}, expected 16")));
                }
                if rate == 0 {
                    return Err(fmt_err("sample rate", "zero"));
                }
                if body + size > bytes.len() {
                    return Err(fmt_err(
                        "data chunk",
                        format!("declares {size} bytes, only {} present", bytes.len() - body),
                    ));
                }
                if !size.is_multiple_of(2) {
                    return Err(fmt_err("data chunk", format!("odd byte count {size}")));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Ok(Waveform {
                    sample_rate: rate,
                    samples,
                });
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(fmt_err("data chunk", "not found"))
}

/// Encode as mono 16-bit PCM, rounding `x * 32768` and clamping.
pub fn write_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
