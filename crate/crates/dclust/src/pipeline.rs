//! Turning manifest entries into mixtures, and mixtures into training
//! segments.

use std::path::{Path, PathBuf};

use dclust_core::dataset::{make_segments, utterance_targets, MixtureEntry, SegmentBatch};
use dclust_core::signal::{mix_sources, resample_to_8k, stft, Mixture, Spectrogram, Waveform};

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::wav::read_wav;

pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Read a WAV and bring it to the 8 kHz pipeline rate.
pub fn load_source(path: &Path) -> Result<Waveform> {
    let wave = read_wav(path)?;
    resample_to_8k(&wave).map_err(|e| match e {
        dclust_core::Error::UnsupportedRate(_) => AppError::format(path, e.to_string()),
        other => other.into(),
    })
}

/// Mix the entry's sources; all are truncated to the shortest one.
pub fn realize(entry: &MixtureEntry, source_dir: &Path) -> Result<Mixture> {
    entry.validate()?;
    let waves = entry.sources.iter().map(|s| load_source(&resolve(source_dir, s))).collect::<Result<Vec<_>>>()?;
    mix_waves(&waves, &entry.snr_db)
}

pub fn mix_waves(waves: &[Waveform], snr_db: &[f64]) -> Result<Mixture> {
    let len = waves.iter().map(Waveform::len).min().unwrap_or(0);
    let waves: Vec<Waveform> = waves.iter().map(|w| w.truncated(len)).collect();
    Ok(mix_sources(&waves[0], &waves[1..], snr_db)?)
}

/// Features, IBM labels and silence weights cut into training segments.
pub fn mixture_segments(mix: &Mixture, mixture_id: &str, cfg: &RunConfig) -> Result<Vec<SegmentBatch>> {
    let stft_cfg = cfg.stft();
    let x = stft(&mix.mixture, &stft_cfg)?;
    let sources: Vec<Spectrogram> = mix.sources.iter().map(|s| stft(s, &stft_cfg)).collect::<dclust_core::Result<_>>()?;
    let (features, labels, weights) = utterance_targets(&x, &sources, &cfg.target()?)?;
    Ok(make_segments(&features, &labels, &weights, cfg.dataset.segment_len, mixture_id)?)
}

pub fn manifest_segments(entries: &[MixtureEntry], cfg: &RunConfig) -> Result<Vec<SegmentBatch>> {
    let mut out = Vec::new();
    for e in entries {
        let mix = realize(e, &cfg.paths.source_dir)?;
        out.extend(mixture_segments(&mix, &e.mixture_id, cfg)?);
    }
    Ok(out)
}
