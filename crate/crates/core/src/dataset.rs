//! Mixture manifests, the synthetic harmonic source generator, log-magnitude
//! features and partition targets (ideal binary masks and silence weights).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::signal::{Spectrogram, Waveform, PIPELINE_RATE_HZ};

/// Frames per network segment.
pub const SEGMENT_FRAMES: usize = 100;

/// Per-element class assignment. Row `n` of the indicator matrix is one-hot
/// at `classes[n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionLabels {
    classes: Vec<usize>,
    num_classes: usize,
}

impl PartitionLabels {
    pub fn new(classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Precondition("partition needs at least one class".into()));
        }
        if let Some(c) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Precondition(format!("class {c} out of range 0..{num_classes}")));
        }
        Ok(Self { classes, num_classes })
    }

    /// Build from an N × C indicator; every row must contain exactly one 1.
    pub fn from_indicator(y: &Matrix) -> Result<Self> {
        let mut classes = Vec::with_capacity(y.rows());
        for (n, row) in y.iter_rows().enumerate() {
            let mut hit = None;
            for (c, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    if hit.is_some() {
                        return Err(Error::Precondition(format!("row {n} has several ones")));
                    }
                    hit = Some(c);
                } else if v != 0.0 {
                    return Err(Error::Precondition(format!("row {n} is not binary")));
                }
            }
            classes.push(hit.ok_or_else(|| Error::Precondition(format!("row {n} has no class")))?);
        }
        Self::new(classes, y.cols())
    }

    pub fn indicator(&self) -> Matrix {
        let mut y = Matrix::zeros(self.classes.len(), self.num_classes);
        for (n, &c) in self.classes.iter().enumerate() {
            y.set(n, c, 1.0);
        }
        y
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    #[inline]
    pub fn class(&self, n: usize) -> usize {
        self.classes[n]
    }

    pub fn select(&self, keep: &[usize]) -> PartitionLabels {
        PartitionLabels { classes: keep.iter().map(|&i| self.classes[i]).collect(), num_classes: self.num_classes }
    }

    pub fn slice(&self, start: usize, end: usize) -> PartitionLabels {
        PartitionLabels { classes: self.classes[start..end].to_vec(), num_classes: self.num_classes }
    }

    /// Relabel classes through `map` (old class → new class).
    pub fn relabeled(&self, map: &[usize], num_classes: usize) -> Result<PartitionLabels> {
        PartitionLabels::new(self.classes.iter().map(|&c| map[c]).collect(), num_classes)
    }
}

/// One mixture recipe: which recordings, at which SNRs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEntry {
    pub mixture_id: String,
    /// First entry is the target; the rest are interferers.
    pub sources: Vec<String>,
    /// One value per interferer, target-to-interferer power ratio.
    pub snr_db: Vec<f64>,
    pub seed: u64,
}

impl MixtureEntry {
    pub fn validate(&self) -> Result<()> {
        if self.sources.len() < 2 {
            return Err(Error::Config(format!("{}: a mixture needs at least 2 sources", self.mixture_id)));
        }
        if self.snr_db.len() + 1 != self.sources.len() {
            return Err(Error::Config(format!(
                "{}: {} sources need {} SNR values, got {}",
                self.mixture_id,
                self.sources.len(),
                self.sources.len() - 1,
                self.snr_db.len()
            )));
        }
        for (i, a) in self.sources.iter().enumerate() {
            if self.sources[i + 1..].contains(a) {
                return Err(Error::Config(format!("{}: source {a} repeated", self.mixture_id)));
            }
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(format!("{}: non-finite SNR", self.mixture_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixtureManifest {
    pub entries: Vec<MixtureEntry>,
}

impl MixtureManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Draw `count` mixture recipes. Each mixture takes its sources from
/// `sources_per_mixture` distinct lists ("speakers"); SNRs are uniform in
/// `snr_range`.
pub fn build_manifest(
    source_lists: &[Vec<String>],
    count: usize,
    snr_range: (f64, f64),
    sources_per_mixture: usize,
    seed: u64,
) -> Result<MixtureManifest> {
    if source_lists.len() < 2 {
        return Err(Error::Config(format!("need at least 2 source lists, got {}", source_lists.len())));
    }
    if sources_per_mixture < 2 || sources_per_mixture > source_lists.len() {
        return Err(Error::Config(format!(
            "{sources_per_mixture} sources per mixture from {} lists",
            source_lists.len()
        )));
    }
    if let Some(i) = source_lists.iter().position(|l| l.is_empty()) {
        return Err(Error::Config(format!("source list {i} is empty")));
    }
    let (lo, hi) = snr_range;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Config(format!("invalid SNR range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let speakers = index::sample(&mut rng, source_lists.len(), sources_per_mixture);
        let sources: Vec<String> = speakers
            .iter()
            .map(|s| {
                let list = &source_lists[s];
                list[rng.random_range(0..list.len())].clone()
            })
            .collect();
        let snr_db = (1..sources_per_mixture)
            .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect();
        let entry = MixtureEntry { mixture_id: format!("mix{i:05}"), sources, snr_db, seed: rng.random() };
        entry.validate()?;
        entries.push(entry);
    }
    Ok(MixtureManifest { entries })
}

/// Parameters of one synthetic harmonic source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSourceSpec {
    pub f0_hz: f64,
    pub num_harmonics: usize,
    pub am_rate_hz: f64,
    /// Modulation depth in `[0, 1]`.
    pub am_depth: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl SynthSourceSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = PIPELINE_RATE_HZ as f64 / 2.0;
        let finite = [self.f0_hz, self.am_rate_hz, self.am_depth, self.duration_s].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("synth spec has non-finite fields".into()));
        }
        if self.f0_hz <= 0.0 || self.num_harmonics == 0 {
            return Err(Error::Config("f0 and harmonic count must be positive".into()));
        }
        if self.f0_hz * self.num_harmonics as f64 >= nyquist {
            return Err(Error::Config(format!(
                "{} harmonics of {} Hz reach the {nyquist} Hz Nyquist limit",
                self.num_harmonics, self.f0_hz
            )));
        }
        if !(0.0..=1.0).contains(&self.am_depth) || self.am_rate_hz < 0.0 {
            return Err(Error::Config("AM depth must lie in [0, 1] and rate be non-negative".into()));
        }
        if self.duration_s <= 0.0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        Ok(())
    }
}

/// Peak level of generated sources.
pub const SYNTH_PEAK: f64 = 0.5;

/// Harmonic series of `f0` with `1/h` roll-off and random per-harmonic
/// phase, amplitude-modulated by `1 + depth·sin(2π·rate·t + φ)`, peak
/// normalised to [`SYNTH_PEAK`]. Always 8 kHz.
pub fn synth_source(spec: &SynthSourceSpec) -> Result<Waveform> {
    spec.validate()?;
    let rate = PIPELINE_RATE_HZ as f64;
    let len = (spec.duration_s * rate).round() as usize;
    if len == 0 {
        return Err(Error::Config("duration shorter than one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..spec.num_harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let am_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let mut samples: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(i, ph)| {
                    let h = (i + 1) as f64;
                    (2.0 * PI * h * spec.f0_hz * t + ph).sin() / h
                })
                .sum();
            let env = 1.0 + spec.am_depth * (2.0 * PI * spec.am_rate_hz * t + am_phase).sin();
            env * tone
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        for s in samples.iter_mut() {
            *s *= SYNTH_PEAK / peak;
        }
    }
    Waveform::new(samples, PIPELINE_RATE_HZ)
}

/// Default log-feature floor relative to the spectrogram maximum.
pub const DEFAULT_FLOOR_DB: f64 = -80.0;

/// `log10(max(|X|, floor))` with `floor` relative to the largest magnitude.
/// An all-zero spectrogram is treated as having unit maximum.
pub fn log_magnitude(spec: &Spectrogram, floor_db: f64) -> Result<Matrix> {
    if spec.frames() == 0 || spec.bins() == 0 {
        return Err(Error::Precondition("empty spectrogram".into()));
    }
    let mags = spec.magnitudes();
    let max = mags.iter().fold(0.0f64, |m, &v| m.max(v));
    let reference = if max > 0.0 { max } else { 1.0 };
    let floor = reference * 10.0f64.powf(floor_db / 20.0);
    let floor = if floor > 0.0 { floor } else { f64::MIN_POSITIVE };
    let data = mags.into_iter().map(|m| m.max(floor).log10()).collect();
    Matrix::from_vec(spec.frames(), spec.bins(), data)
}

fn check_same_shape(specs: &[Spectrogram]) -> Result<()> {
    let first = specs.first().ok_or_else(|| Error::Precondition("no sources".into()))?;
    if let Some(i) = specs.iter().position(|s| !s.same_shape(first)) {
        return Err(Error::Shape(format!(
            "source {i} is {}x{}, source 0 is {}x{}",
            specs[i].frames(),
            specs[i].bins(),
            first.frames(),
            first.bins()
        )));
    }
    Ok(())
}

/// Each bin belongs to the source with the largest magnitude; ties go to the
/// lowest source index.
pub fn ideal_binary_mask(sources: &[Spectrogram]) -> Result<PartitionLabels> {
    if sources.len() < 2 {
        return Err(Error::Precondition("ideal binary mask needs at least 2 sources".into()));
    }
    check_same_shape(sources)?;
    let mags: Vec<Vec<f64>> = sources.iter().map(|s| s.magnitudes()).collect();
    let n = mags[0].len();
    let classes = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..mags.len() {
                if mags[c][i] > mags[best][i] {
                    best = c;
                }
            }
            best
        })
        .collect();
    PartitionLabels::new(classes, sources.len())
}

/// Which spectrogram the silence threshold is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SilenceMode {
    /// Keep a bin only if every source is above threshold relative to its
    /// own maximum.
    #[default]
    AllSources,
    /// Keep a bin if the mixture (sum of sources) is above threshold
    /// relative to the mixture maximum.
    Mixture,
}

pub const DEFAULT_SILENCE_DB: f64 = -40.0;

/// Binary training weights, one per bin in frame-major order. Comparisons
/// are inclusive so a threshold of `-inf` keeps every bin.
pub fn silence_weights(sources: &[Spectrogram], threshold_db: f64, mode: SilenceMode) -> Result<Vec<bool>> {
    check_same_shape(sources)?;
    let ratio = 10.0f64.powf(threshold_db / 20.0);
    let passes = |mags: &[f64]| -> Vec<bool> {
        let max = mags.iter().fold(0.0f64, |m, &v| m.max(v));
        let limit = max * ratio;
        mags.iter().map(|&m| m >= limit).collect()
    };
    match mode {
        SilenceMode::AllSources => {
            let mut keep = vec![true; sources[0].values().len()];
            for s in sources {
                for (k, p) in keep.iter_mut().zip(passes(&s.magnitudes())) {
                    *k &= p;
                }
            }
            Ok(keep)
        }
        SilenceMode::Mixture => Ok(passes(&Spectrogram::sum(sources)?.magnitudes())),
    }
}

/// Where a segment came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentOrigin {
    pub mixture_id: String,
    pub start_frame: usize,
}

/// One fixed-length training example. Elements are frame-major: the bins of
/// frame 0, then frame 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    pub features: Matrix,
    pub labels: PartitionLabels,
    pub weights: Vec<bool>,
    pub origin: SegmentOrigin,
}

impl SegmentBatch {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn bins(&self) -> usize {
        self.features.cols()
    }
}

/// Cut consecutive non-overlapping segments; a final partial segment is
/// dropped.
pub fn make_segments(
    features: &Matrix,
    labels: &PartitionLabels,
    weights: &[bool],
    segment_len: usize,
    mixture_id: &str,
) -> Result<Vec<SegmentBatch>> {
    let (frames, bins) = (features.rows(), features.cols());
    if labels.len() != frames * bins || weights.len() != frames * bins {
        return Err(Error::Shape(format!(
            "{frames}x{bins} features but {} labels and {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if segment_len == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    if frames < segment_len {
        log::warn!("{mixture_id}: {frames} frames is shorter than one {segment_len}-frame segment");
    }
    let out = (0..frames / segment_len)
        .map(|s| {
            let start = s * segment_len;
            let (lo, hi) = (start * bins, (start + segment_len) * bins);
            SegmentBatch {
                features: Matrix::from_vec(segment_len, bins, features.as_slice()[lo..hi].to_vec())
                    .expect("slice has segment shape"),
                labels: labels.slice(lo, hi),
                weights: weights[lo..hi].to_vec(),
                origin: SegmentOrigin { mixture_id: mixture_id.into(), start_frame: start },
            }
        })
        .collect();
    Ok(out)
}

/// Start frames that cover a whole utterance at inference time: consecutive
/// segments plus, when frames remain, one final segment aligned to the end
/// (overlapping its predecessor).
pub fn inference_segment_starts(frames: usize, segment_len: usize) -> Vec<usize> {
    if segment_len == 0 || frames < segment_len {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..frames / segment_len).map(|s| s * segment_len).collect();
    if frames % segment_len != 0 {
        starts.push(frames - segment_len);
    }
    starts
}

/// Settings that turn a mixture and its sources into network targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetConfig {
    pub floor_db: f64,
    pub silence_threshold_db: f64,
    pub silence_mode: SilenceMode,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { floor_db: DEFAULT_FLOOR_DB, silence_threshold_db: DEFAULT_SILENCE_DB, silence_mode: SilenceMode::AllSources }
    }
}

/// Features, IBM labels and silence weights for a whole utterance.
pub fn utterance_targets(
    mixture: &Spectrogram,
    sources: &[Spectrogram],
    cfg: &TargetConfig,
) -> Result<(Matrix, PartitionLabels, Vec<bool>)> {
    if sources.iter().any(|s| !s.same_shape(mixture)) {
        return Err(Error::Shape("sources and mixture spectrograms differ in shape".into()));
    }
    let features = log_magnitude(mixture, cfg.floor_db)?;
    let labels = ideal_binary_mask(sources)?;
    let weights = silence_weights(sources, cfg.silence_threshold_db, cfg.silence_mode)?;
    Ok((features, labels, weights))
}
