//! WAV file ingestion and emission.
//!
//! Accepts mono 16-bit integer PCM and 32-bit float files. Integer
//! samples map to [-1, 1) by dividing by 32768. Multichannel input is
//! rejected rather than silently downmixed.

use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
        path: path.into(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|source| Error::Wav {
                path: path.into(),
                source,
            })?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|source| Error::Wav {
                path: path.into(),
                source,
            })?,
        (fmt, bits) => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported wav encoding {:?}/{} bits (need 16-bit PCM or 32-bit float)",
                path.display(),
                fmt,
                bits
            )));
        }
    };
    Waveform::new(samples, spec.sample_rate)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn write_wav(path: &Path, w: &Waveform, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|source| Error::Wav {
        path: path.into(),
        source,
    })?;
    let write_err = |source| Error::Wav {
        path: path.into(),
        source,
    };
    match format {
        WavFormat::Pcm16 => {
            for &s in &w.samples {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(write_err)?;
            }
        }
        WavFormat::Float32 => {
            for &s in &w.samples {
                writer.write_sample(s as f32).map_err(write_err)?;
            }
        }
    }
    writer.finalize().map_err(|source| Error::Wav {
        path: path.into(),
        source,
    })
}
