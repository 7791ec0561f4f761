//! Mixture in, `k` source estimates out: embed, cluster, mask, resynthesise.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::clustering::{cluster_utterance, oracle_permutation, ClusteringStrategy, KMeansConfig};
use crate::dataset::{ideal_binary_mask, inference_segment_starts, log_magnitude, silence_weights, SilenceMode, DEFAULT_FLOOR_DB};
use crate::error::{Error, Result};
use crate::network::EmbeddingModel;
use crate::signal::{istft, stft, Spectrogram, StftConfig, Waveform};

/// How a set of masks was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationMethod {
    Clustering(ClusteringStrategy),
    OracleIbm,
    Snmf,
}

impl SeparationMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clustering(s) => s.name(),
            Self::OracleIbm => "oracle_ibm",
            Self::Snmf => "snmf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// One `T·F` frame-major mask per source; entries in `[0, 1]`.
    pub masks: Vec<Vec<f64>>,
    pub estimates: Vec<Waveform>,
    pub method: SeparationMethod,
    pub model_id: String,
    /// Filled in by callers that can read a clock.
    pub timing_ms: Option<u64>,
}

impl SeparationResult {
    pub fn frames(&self, bins: usize) -> usize {
        self.masks.first().map_or(0, |m| m.len() / bins)
    }

    /// Index of the largest mask per bin (lowest index on ties).
    pub fn hard_labels(&self) -> Vec<usize> {
        let n = self.masks.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                (0..self.masks.len()).fold(0, |best, c| if self.masks[c][i] > self.masks[best][i] { c } else { best })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationConfig {
    pub stft: StftConfig,
    pub floor_db: f64,
    /// Centroids are fitted on bins whose mixture magnitude is within this
    /// many dB of the mixture maximum; `None` fits on every bin.
    pub cluster_threshold_db: Option<f64>,
    pub kmeans: KMeansConfig,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            floor_db: DEFAULT_FLOOR_DB,
            cluster_threshold_db: Some(-40.0),
            kmeans: KMeansConfig::default(),
        }
    }
}

fn binary_masks(labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|c| labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect()).collect()
}

/// Apply each mask to the mixture spectrogram and invert.
pub fn resynthesize(mixture: &Spectrogram, masks: &[Vec<f64>], cfg: &StftConfig) -> Result<Vec<Waveform>> {
    masks.iter().map(|m| istft(&mixture.masked(m)?, cfg)).collect()
}

fn warn_empty(masks: &[Vec<f64>]) {
    for (c, m) in masks.iter().enumerate() {
        if m.iter().all(|&x| x == 0.0) {
            log::warn!("cluster {c} is empty; its estimate is silent");
        }
    }
}

/// Separate `mixture` into `k` estimates with a trained embedding model.
/// Segment strategies need `references` for the oracle alignment.
#[allow(clippy::too_many_arguments)]
pub fn separate(
    mixture: &Waveform,
    model: &EmbeddingModel,
    model_id: &str,
    k: usize,
    strategy: ClusteringStrategy,
    seed: u64,
    references: Option<&[Waveform]>,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    if k < 2 {
        return Err(Error::Config(format!("separation into {k} sources")));
    }
    let spec = model.spec();
    let x = stft(mixture, &cfg.stft)?;
    if x.bins() != spec.input_dim {
        return Err(Error::Shape(format!("model expects {} bins, STFT gives {}", spec.input_dim, x.bins())));
    }
    let seg = spec.segment_len;
    if x.frames() < seg {
        return Err(Error::TooShort(format!("{} frames, need at least {seg}", x.frames())));
    }
    let features = log_magnitude(&x, cfg.floor_db)?;
    let bins = x.bins();
    let starts = inference_segment_starts(x.frames(), seg);
    let mut embeddings = Vec::with_capacity(starts.len());
    for &s in &starts {
        let rows: Vec<usize> = (s..s + seg).collect();
        embeddings.push(model.embed(&features.select_rows(&rows))?.into_inner());
    }
    let active = match cfg.cluster_threshold_db {
        Some(db) => {
            let flags = silence_weights(core::slice::from_ref(&x), db, SilenceMode::AllSources)?;
            Some(starts.iter().map(|&s| flags[s * bins..(s + seg) * bins].to_vec()).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut labels = cluster_utterance(&embeddings, active.as_deref(), k, strategy, seed, &cfg.kmeans)?;

    if strategy.needs_oracle() {
        let refs = references
            .ok_or_else(|| Error::Precondition(format!("{} needs reference sources", strategy.name())))?;
        let ref_specs: Vec<Spectrogram> = refs.iter().map(|r| stft(r, &cfg.stft)).collect::<Result<_>>()?;
        let perms = oracle_permutation(&labels, &starts, k, &x, &ref_specs)?;
        for (seg_labels, perm) in labels.iter_mut().zip(&perms) {
            for l in seg_labels.iter_mut() {
                *l = perm[*l];
            }
        }
    }

    // later segments overwrite the frames they share with earlier ones
    let mut full = vec![0usize; x.frames() * bins];
    for (&s, seg_labels) in starts.iter().zip(&labels) {
        full[s * bins..s * bins + seg_labels.len()].copy_from_slice(seg_labels);
    }
    let masks = binary_masks(&full, k);
    warn_empty(&masks);
    let estimates = resynthesize(&x, &masks, &cfg.stft)?;
    Ok(SeparationResult {
        masks,
        estimates,
        method: SeparationMethod::Clustering(strategy),
        model_id: model_id.into(),
        timing_ms: None,
    })
}

/// Binary-mask ceiling: masks from the references' ideal binary mask.
pub fn oracle_ibm_separate(mixture: &Waveform, references: &[Waveform], cfg: &StftConfig) -> Result<SeparationResult> {
    if references.iter().any(|r| r.len() != mixture.len()) {
        return Err(Error::Shape("references and mixture differ in length".into()));
    }
    let x = stft(mixture, cfg)?;
    let ref_specs: Vec<Spectrogram> = references.iter().map(|r| stft(r, cfg)).collect::<Result<_>>()?;
    let ibm = ideal_binary_mask(&ref_specs)?;
    let masks = binary_masks(ibm.classes(), references.len());
    let estimates = resynthesize(&x, &masks, cfg)?;
    Ok(SeparationResult { masks, estimates, method: SeparationMethod::OracleIbm, model_id: "oracle".into(), timing_ms: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_source, SynthSourceSpec};
    use crate::network::{init_params, FeatureNormalizer, NetworkSpec};
    use crate::signal::mix_at_snr;

    fn tone(f0: f64, harmonics: usize, seed: u64, secs: f64) -> Waveform {
        synth_source(&SynthSourceSpec { f0_hz: f0, num_harmonics: harmonics, am_rate_hz: 3.0, am_depth: 0.3, duration_s: secs, seed }).unwrap()
    }

    fn small_model(seed: u64) -> EmbeddingModel {
        let spec = NetworkSpec { hidden_per_direction: 4, embedding_dim: 3, ..NetworkSpec::default() };
        EmbeddingModel::new(init_params(&spec, seed).unwrap(), FeatureNormalizer::identity(129)).unwrap()
    }

    fn energy(w: &[f64]) -> f64 {
        w.iter().map(|x| x * x).sum()
    }

    #[test]
    fn masks_partition_and_estimates_sum_to_the_resynthesis() {
        let m = mix_at_snr(&tone(150.0, 10, 1, 2.0), &tone(410.0, 4, 2, 2.0), 2.0).unwrap();
        let model = small_model(3);
        let cfg = SeparationConfig::default();
        for (k, strategy) in [(2, ClusteringStrategy::GlobalKmeans), (3, ClusteringStrategy::GlobalKmeans), (2, ClusteringStrategy::SegmentKmeansOracle)] {
            let r = separate(&m.mixture, &model, "m", k, strategy, 5, Some(&m.sources), &cfg).unwrap();
            assert_eq!(r.masks.len(), k);
            assert_eq!(r.estimates.len(), k);
            for i in 0..r.masks[0].len() {
                assert_eq!(r.masks.iter().map(|mk| mk[i]).sum::<f64>(), 1.0);
            }
            let x = stft(&m.mixture, &cfg.stft).unwrap();
            let whole = istft(&x, &cfg.stft).unwrap();
            let total = Waveform::sum(&r.estimates).unwrap();
            let err: Vec<f64> = total.samples().iter().zip(whole.samples()).map(|(a, b)| a - b).collect();
            assert!(energy(&err) <= 1e-20 * energy(whole.samples()));
            assert!(r.estimates.iter().all(|e| e.len() == m.mixture.len()));
        }
    }

    #[test]
    fn separation_is_deterministic() {
        let m = mix_at_snr(&tone(130.0, 8, 4, 1.5), &tone(300.0, 5, 5, 1.5), 0.0).unwrap();
        let model = small_model(6);
        let cfg = SeparationConfig::default();
        let a = separate(&m.mixture, &model, "m", 2, ClusteringStrategy::GlobalKmeans, 9, None, &cfg).unwrap();
        let b = separate(&m.mixture, &model, "m", 2, ClusteringStrategy::GlobalKmeans, 9, None, &cfg).unwrap();
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn short_mixture_and_missing_references() {
        let model = small_model(1);
        let cfg = SeparationConfig::default();
        let short = tone(200.0, 3, 1, 0.5);
        assert!(matches!(separate(&short, &model, "m", 2, ClusteringStrategy::GlobalKmeans, 0, None, &cfg), Err(Error::TooShort(_))));
        let long = tone(200.0, 3, 1, 1.5);
        assert!(matches!(
            separate(&long, &model, "m", 2, ClusteringStrategy::SegmentKmeansOracle, 0, None, &cfg),
            Err(Error::Precondition(_))
        ));
        let narrow = NetworkSpec { input_dim: 65, hidden_per_direction: 2, embedding_dim: 2, ..NetworkSpec::default() };
        let model = EmbeddingModel::new(init_params(&narrow, 0).unwrap(), FeatureNormalizer::identity(65)).unwrap();
        assert!(matches!(separate(&long, &model, "m", 2, ClusteringStrategy::GlobalKmeans, 0, None, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn ibm_on_disjoint_sources_recovers_each_source() {
        let a = tone(1000.0, 1, 1, 1.0);
        let b = tone(2500.0, 1, 2, 1.0);
        let m = mix_at_snr(&a, &b, 0.0).unwrap();
        let r = oracle_ibm_separate(&m.mixture, &m.sources, &StftConfig::default()).unwrap();
        for (est, src) in r.estimates.iter().zip(&m.sources) {
            let err: Vec<f64> = est.samples().iter().zip(src.samples()).map(|(e, s)| e - s).collect();
            let snr = 10.0 * (energy(src.samples()) / energy(&err)).log10();
            assert!(snr > 20.0, "{snr}");
        }
    }

    #[test]
    fn identical_sources_fall_to_the_first_class() {
        let a = tone(300.0, 3, 1, 1.0);
        let r = oracle_ibm_separate(&Waveform::sum(&[a.clone(), a.clone()]).unwrap(), &[a.clone(), a], &StftConfig::default()).unwrap();
        assert!(r.masks[0].iter().all(|&m| m == 1.0));
        assert!(r.estimates[1].samples().iter().all(|&s| s == 0.0));
        assert_eq!(r.hard_labels().iter().filter(|&&l| l == 1).count(), 0);
    }
}
