//! Minimal WAV ingestion and export: RIFF with 16-bit PCM or 32-bit float
//! samples, mono or multichannel. Sample-rate conversion is out of scope;
//! callers reject mismatched rates.

use std::path::Path;

use crate::stft::Waveform;
use crate::{Error, Result};

/// Reads a PCM16 or Float32 WAV file into a full-scale waveform.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::InvalidInput("wav file has no channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Io(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Io(e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::InvalidInput(format!(
                "unsupported wav format {fmt:?}/{bits} bit; expected PCM16 or Float32"
            )))
        }
    };
    if !interleaved.len().is_multiple_of(n_channels) {
        return Err(Error::InvalidInput("truncated wav data".into()));
    }
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % n_channels].push(v);
    }
    Waveform::new(channels, spec.sample_rate)
}

/// Writes a waveform as 32-bit float WAV.
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    for i in 0..w.len() {
        for c in 0..w.channels() {
            writer
                .write_sample(w.channel(c)[i] as f32)
                .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    writer.finalize().map_err(|e| Error::Io(e.to_string()))
}

/// Writes a waveform as 16-bit PCM WAV, clipping to full scale.
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    for i in 0..w.len() {
        for c in 0..w.channels() {
            let v = (w.channel(c)[i] * 32768.0).clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    writer.finalize().map_err(|e| Error::Io(e.to_string()))
}
