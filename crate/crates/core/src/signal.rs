//! Waveforms, SNR mixing, integer-ratio resampling and the sqrt-Hann
//! STFT/iSTFT pair.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftPlan;

/// Sample rate the whole pipeline operates at.
pub const PIPELINE_RATE_HZ: u32 = 8000;

/// Mono sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Precondition(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate_hz: sample_rate_hz.max(1) }
    }

    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Mean power `Σx²/L`.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// First `len` samples (or all of them if shorter).
    pub fn truncated(&self, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Element-wise sum; lengths and rates must agree.
    pub fn sum(parts: &[Waveform]) -> Result<Waveform> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("cannot sum zero waveforms".into()))?;
        let mut out = vec![0.0; first.len()];
        for p in parts {
            if p.len() != first.len() || p.sample_rate_hz != first.sample_rate_hz {
                return Err(Error::Shape("waveforms differ in length or rate".into()));
            }
            for (o, s) in out.iter_mut().zip(&p.samples) {
                *o += s;
            }
        }
        Ok(Waveform { samples: out, sample_rate_hz: first.sample_rate_hz })
    }
}

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub window_kind: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms window, 8 ms shift at 8 kHz.
    fn default() -> Self {
        Self { window_len_samples: 256, hop_samples: 64, fft_size: 256, window_kind: WindowKind::SqrtHann }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h, n) = (self.window_len_samples, self.hop_samples, self.fft_size);
        if w == 0 || h == 0 {
            return Err(Error::Config("window and hop must be positive".into()));
        }
        if w % h != 0 {
            return Err(Error::Config(format!("hop {h} does not divide window length {w}")));
        }
        if n < w {
            return Err(Error::Config(format!("fft size {n} is shorter than window {w}")));
        }
        if !n.is_power_of_two() {
            return Err(Error::Config(format!("fft size {n} is not a power of two")));
        }
        Ok(())
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zero padding added at each end of the signal.
    #[inline]
    pub fn edge_pad(&self) -> usize {
        self.window_len_samples - self.hop_samples
    }

    /// Frame count for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        let padded = len + 2 * self.edge_pad();
        if padded < self.window_len_samples {
            return 0;
        }
        (padded - self.window_len_samples) / self.hop_samples + 1
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len_samples;
        match self.window_kind {
            // periodic Hann, so the squared window is exactly COLA at hop n/4
            WindowKind::SqrtHann => (0..n)
                .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sqrt())
                .collect(),
        }
    }
}

/// Complex STFT, frames × bins, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    values: Vec<Complex64>,
    config: StftConfig,
    signal_len: usize,
    sample_rate_hz: u32,
}

impl Spectrogram {
    pub fn from_values(
        frames: usize,
        values: Vec<Complex64>,
        config: StftConfig,
        signal_len: usize,
        sample_rate_hz: u32,
    ) -> Result<Self> {
        let bins = config.bins();
        if values.len() != frames * bins {
            return Err(Error::Shape(format!("{} values for {frames}x{bins}", values.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Precondition("spectrogram contains non-finite values".into()));
        }
        Ok(Self { frames, bins, values, config, signal_len, sample_rate_hz })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Length of the waveform this spectrogram was computed from.
    #[inline]
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    #[inline]
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.values[t * self.bins + f]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr().sqrt()).collect()
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    /// Element-wise real mask, same shape as `self`.
    pub fn masked(&self, mask: &[f64]) -> Result<Spectrogram> {
        if mask.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries, spectrogram {}",
                mask.len(),
                self.values.len()
            )));
        }
        let values = self.values.iter().zip(mask).map(|(z, m)| z * m).collect();
        Ok(Spectrogram { values, ..self.clone() })
    }

    /// Sum of spectrograms with identical shape and config.
    pub fn sum(parts: &[Spectrogram]) -> Result<Spectrogram> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("cannot sum zero spectrograms".into()))?;
        let mut values = first.values.clone();
        for p in &parts[1..] {
            if !p.same_shape(first) || p.config != first.config {
                return Err(Error::Shape("spectrograms differ in shape or config".into()));
            }
            for (v, z) in values.iter_mut().zip(&p.values) {
                *v += z;
            }
        }
        Ok(Spectrogram { values, ..first.clone() })
    }
}

/// Short-time Fourier transform with symmetric `window − hop` zero padding.
pub fn stft(wave: &Waveform, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let len = wave.len();
    let wlen = config.window_len_samples;
    if len < wlen {
        return Err(Error::TooShort(format!("{len} samples, one window needs {wlen}")));
    }
    let pad = config.edge_pad();
    let frames = config.frame_count(len);
    let bins = config.bins();
    let window = config.window();
    let plan = FftPlan::new(config.fft_size)?;
    let mut padded = vec![0.0; len + 2 * pad];
    padded[pad..pad + len].copy_from_slice(wave.samples());

    let mut values = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_size];
    for t in 0..frames {
        let start = t * config.hop_samples;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < wlen {
                Complex64::new(padded[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        plan.forward(&mut buf);
        values.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, values, config: *config, signal_len: len, sample_rate_hz: wave.sample_rate_hz() })
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(spec: &Spectrogram, config: &StftConfig) -> Result<Waveform> {
    config.validate()?;
    if spec.config != *config {
        return Err(Error::Config("spectrogram was produced with a different STFT config".into()));
    }
    let wlen = config.window_len_samples;
    let hop = config.hop_samples;
    let n = config.fft_size;
    let pad = config.edge_pad();
    let window = config.window();
    let plan = FftPlan::new(n)?;
    let total = (spec.frames.saturating_sub(1)) * hop + wlen;
    let mut out = vec![0.0; total.max(spec.signal_len + 2 * pad)];
    let mut env = vec![0.0; out.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.frames {
        let row = &spec.values[t * spec.bins..(t + 1) * spec.bins];
        buf[..spec.bins].copy_from_slice(row);
        // Hermitian completion
        for k in spec.bins..n {
            buf[k] = row[n - k].conj();
        }
        plan.inverse(&mut buf);
        let start = t * hop;
        for i in 0..wlen {
            out[start + i] += buf[i].re * window[i];
            env[start + i] += window[i] * window[i];
        }
    }
    let samples = (pad..pad + spec.signal_len)
        .map(|i| if env[i] > 1e-10 { out[i] / env[i] } else { 0.0 })
        .collect();
    Waveform::new(samples, spec.sample_rate_hz)
}

const RESAMPLE_TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Windowed-sinc low-pass for decimation by `factor`, unit DC gain.
fn decimation_filter(factor: usize) -> Vec<f64> {
    let cutoff = 0.5 / factor as f64;
    let center = (RESAMPLE_TAPS - 1) as f64 / 2.0;
    let norm = bessel_i0(KAISER_BETA);
    let mut taps: Vec<f64> = (0..RESAMPLE_TAPS)
        .map(|k| {
            let x = k as f64 - center;
            let sinc = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
            let r = 2.0 * k as f64 / (RESAMPLE_TAPS - 1) as f64 - 1.0;
            sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Downsample an integer multiple of 8 kHz to 8 kHz.
///
/// 64-tap Kaiser (β = 8) windowed-sinc anti-aliasing filter followed by
/// decimation. The even tap count leaves a residual half-input-sample delay.
pub fn resample_to_8k(wave: &Waveform) -> Result<Waveform> {
    let rate = wave.sample_rate_hz();
    if rate == PIPELINE_RATE_HZ {
        return Ok(wave.clone());
    }
    if rate < PIPELINE_RATE_HZ || rate % PIPELINE_RATE_HZ != 0 {
        return Err(Error::UnsupportedRate(rate));
    }
    let factor = (rate / PIPELINE_RATE_HZ) as usize;
    let taps = decimation_filter(factor);
    let x = wave.samples();
    let offset = (RESAMPLE_TAPS / 2) as isize;
    let out_len = x.len().div_ceil(factor);
    let samples = (0..out_len)
        .map(|m| {
            let base = (m * factor) as isize - offset;
            taps.iter()
                .enumerate()
                .filter_map(|(k, h)| {
                    let idx = base + k as isize + 1;
                    (idx >= 0 && (idx as usize) < x.len()).then(|| h * x[idx as usize])
                })
                .sum()
        })
        .collect();
    Waveform::new(samples, PIPELINE_RATE_HZ)
}

/// Output of [`mix_at_snr`]: the mixture and the exact scaled sources that
/// sum to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    /// Gain applied to each interferer before joint renormalisation.
    pub gains: Vec<f64>,
}

/// Largest mixture peak allowed before all outputs are scaled down jointly.
pub const MIX_PEAK_LIMIT: f64 = 1.0;
/// Peak the mixture is brought to when it exceeds [`MIX_PEAK_LIMIT`].
pub const MIX_RENORM_PEAK: f64 = 0.99;

/// `10·log10(P_a / P_b)`.
pub fn power_ratio_db(a: &Waveform, b: &Waveform) -> f64 {
    10.0 * (a.power() / b.power()).log10()
}

/// Mix `interferer` into `target` so that `P_target / P_scaled_interferer`
/// equals `snr_db`.
pub fn mix_at_snr(target: &Waveform, interferer: &Waveform, snr_db: f64) -> Result<Mixture> {
    mix_sources(target, core::slice::from_ref(interferer), &[snr_db])
}

/// Multi-source version of [`mix_at_snr`]; each interferer is scaled against
/// the target independently.
pub fn mix_sources(target: &Waveform, interferers: &[Waveform], snr_db: &[f64]) -> Result<Mixture> {
    if interferers.len() != snr_db.len() {
        return Err(Error::Shape(format!(
            "{} interferers but {} SNR values",
            interferers.len(),
            snr_db.len()
        )));
    }
    if let Some(s) = snr_db.iter().find(|s| !s.is_finite()) {
        return Err(Error::Config(format!("SNR {s} dB is not finite")));
    }
    let target_power = target.power();
    if target_power <= 0.0 {
        return Err(Error::DegenerateSource("target has zero power".into()));
    }
    let mut sources = vec![target.clone()];
    let mut gains = Vec::with_capacity(interferers.len());
    for (i, (w, snr)) in interferers.iter().zip(snr_db).enumerate() {
        if w.len() != target.len() || w.sample_rate_hz() != target.sample_rate_hz() {
            return Err(Error::Shape(format!("interferer {i} differs from target in length or rate")));
        }
        let p = w.power();
        if p <= 0.0 {
            return Err(Error::DegenerateSource(format!("interferer {i} has zero power")));
        }
        let g = (target_power / (p * 10.0f64.powf(snr / 10.0))).sqrt();
        gains.push(g);
        sources.push(w.scaled(g));
    }
    let mut mixture = Waveform::sum(&sources)?;
    let peak = mixture.peak();
    if peak > MIX_PEAK_LIMIT {
        let s = MIX_RENORM_PEAK / peak;
        mixture = mixture.scaled(s);
        for src in sources.iter_mut() {
            *src = src.scaled(s);
        }
    }
    Ok(Mixture { mixture, sources, gains })
}
