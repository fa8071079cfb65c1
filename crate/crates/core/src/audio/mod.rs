//! Audio front end: 16-bit PCM WAV input, energy VAD and log mel filterbanks.

mod fbank;
mod vad;
mod wav;

pub use fbank::{fbank, frame_count, hz_to_mel, mel_to_hz, FbankConfig, MelFilterbank};
pub use vad::{vad_filter, VadConfig};
pub use wav::{read_wav, write_wav, Waveform};
