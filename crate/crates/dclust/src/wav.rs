//! 16-bit PCM mono WAV files.

use std::path::Path;

use dclust_core::signal::Waveform;

use crate::error::{AppError, Result};

const FULL_SCALE: f64 = 32768.0;

fn map_hound(path: &Path, e: hound::Error) -> AppError {
    match e {
        hound::Error::IoError(io) => AppError::io(path, io),
        other => AppError::format(path, other.to_string()),
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AppError::format(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AppError::format(path, format!("{}-bit {:?} samples, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format)));
    }
    let expected = reader.len() as usize;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| map_hound(path, e))?;
    if samples.len() != expected {
        return Err(AppError::io(path, std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated sample data")));
    }
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

/// Quantise to 16 bits, clipping to `[-1, 1)`.
pub fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let clipped = wave.samples().iter().filter(|x| x.abs() >= 1.0).count();
    if clipped > 0 {
        log::warn!("{}: {clipped} samples clipped", path.display());
    }
    for &x in wave.samples() {
        writer.write_sample(quantize(x)).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
