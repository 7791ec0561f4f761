//! Run configuration: TOML sections named after the pipeline modules, with
//! `--section.key=value` command-line overrides and a `DC_SEED` override of
//! the master seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dclust_core::clustering::{ClusteringStrategy, KMeansConfig};
use dclust_core::dataset::{SilenceMode, TargetConfig, DEFAULT_FLOOR_DB, DEFAULT_SILENCE_DB, SEGMENT_FRAMES};
use dclust_core::eval::SdrMode;
use dclust_core::network::{NetworkSpec, OptimizerConfig};
use dclust_core::nmf::{Divergence, NmfConfig, DEFAULT_CONTEXT, DEFAULT_RANK};
use dclust_core::objective::{LossConfig, Weighting};
use dclust_core::separation::SeparationConfig;
use dclust_core::signal::{StftConfig, WindowKind};

use crate::container::parse_activation;
use crate::error::{AppError, Result};

pub const SEED_ENV: &str = "DC_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub paths: PathsSection,
    pub signal: SignalSection,
    pub dataset: DatasetSection,
    pub synth: SynthSection,
    pub network: NetworkSection,
    pub objective: ObjectiveSection,
    pub train: TrainSection,
    pub clustering: ClusteringSection,
    pub eval: EvalSection,
    pub nmf: NmfSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub manifest: PathBuf,
    pub validation_manifest: Option<PathBuf>,
    /// Directory that relative source paths in a manifest resolve against.
    pub source_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub floor_db: f64,
    pub silence_threshold_db: f64,
    /// `all_sources` or `mixture`.
    pub silence_mode: String,
    pub segment_len: usize,
    pub mixtures: usize,
    pub sources_per_mixture: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub f0_hz: Vec<f64>,
    pub seeds_per_f0: usize,
    /// Harmonics are kept below this frequency.
    pub max_harmonic_hz: f64,
    pub am_rate_hz: f64,
    pub am_depth: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub blstm_layers: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
    /// `tanh` or `logistic`.
    pub activation: String,
    /// Standardise each input bin with statistics of the training set.
    pub normalize_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    /// `partition_size` or `unweighted`.
    pub weighting: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_noise_std: f64,
    /// Write 0 in the wall-clock column of the loss log so reruns are
    /// byte-identical.
    pub deterministic_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub k: usize,
    pub strategy: String,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Fit centroids on bins within this many dB of the mixture maximum;
    /// absent means every bin.
    pub active_threshold_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `scale_invariant` or `filtered(L)`.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfSection {
    pub rank: usize,
    pub context: usize,
    /// `kl` or `euclidean`.
    pub divergence: String,
    pub sparsity: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsSection::default(),
            signal: SignalSection::default(),
            dataset: DatasetSection::default(),
            synth: SynthSection::default(),
            network: NetworkSection::default(),
            objective: ObjectiveSection::default(),
            train: TrainSection::default(),
            clustering: ClusteringSection::default(),
            eval: EvalSection::default(),
            nmf: NmfSection::default(),
        }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            manifest: "manifest.jsonl".into(),
            validation_manifest: None,
            source_dir: ".".into(),
            checkpoint_dir: "checkpoints".into(),
            output_dir: "out".into(),
        }
    }
}

impl Default for SignalSection {
    fn default() -> Self {
        let s = StftConfig::default();
        Self { window_len: s.window_len_samples, hop: s.hop_samples, fft_size: s.fft_size }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            floor_db: DEFAULT_FLOOR_DB,
            silence_threshold_db: DEFAULT_SILENCE_DB,
            silence_mode: "all_sources".into(),
            segment_len: SEGMENT_FRAMES,
            mixtures: 200,
            sources_per_mixture: 2,
            snr_min_db: 0.0,
            snr_max_db: 5.0,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            f0_hz: vec![110.0, 120.0, 245.0, 255.0],
            seeds_per_f0: 5,
            max_harmonic_hz: 2000.0,
            am_rate_hz: 4.0,
            am_depth: 0.5,
            duration_s: 1.0,
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        let s = NetworkSpec::default();
        Self {
            blstm_layers: s.blstm_layers,
            hidden: s.hidden_per_direction,
            embedding_dim: s.embedding_dim,
            activation: "tanh".into(),
            normalize_input: true,
        }
    }
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { weighting: "partition_size".into() }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        Self {
            epochs: 10,
            learning_rate: o.learning_rate,
            momentum: o.momentum,
            weight_noise_std: o.weight_noise_std,
            deterministic_log: false,
        }
    }
}

impl Default for ClusteringSection {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self {
            k: 2,
            strategy: ClusteringStrategy::default().name().into(),
            restarts: km.restarts,
            max_iter: km.max_iter,
            tol: km.tol,
            active_threshold_db: SeparationConfig::default().cluster_threshold_db,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { mode: SdrMode::default().name() }
    }
}

impl Default for NmfSection {
    fn default() -> Self {
        let c = NmfConfig::default();
        Self {
            rank: DEFAULT_RANK,
            context: DEFAULT_CONTEXT,
            divergence: c.divergence.name().into(),
            sparsity: c.sparsity_lambda,
            max_iter: c.max_iter,
            tol: c.tol,
        }
    }
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

/// Parse an override value as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, then the optional file, then `overrides`
    /// (`section.key=value`, leading dashes optional), then `DC_SEED`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
                text.parse::<toml::Table>().map_err(|e| AppError::format(path, e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let item = item.trim_start_matches('-');
            let (key, raw) = item.split_once('=').ok_or_else(|| usage(format!("override {item:?} is not key=value")))?;
            let mut path: Vec<&str> = key.split('.').collect();
            let leaf = path.pop().filter(|l| !l.is_empty()).ok_or_else(|| usage(format!("empty key in {item:?}")))?;
            let mut node = &mut table;
            for part in path {
                let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry.as_table_mut().ok_or_else(|| usage(format!("{part} is not a section")))?;
            }
            node.insert(leaf.to_string(), override_value(raw));
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("configuration: {}", e.message())))?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = seed.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check that every enumerated field parses.
    pub fn validate(&self) -> Result<()> {
        self.stft().validate()?;
        self.target().map(|_| ())?;
        self.network_spec(1)?.validate()?;
        self.optimizer().validate()?;
        self.loss()?;
        self.strategy()?;
        self.sdr_mode()?;
        self.nmf_config()?.validate()?;
        if self.dataset.snr_min_db > self.dataset.snr_max_db {
            return Err(usage("dataset.snr_min_db exceeds dataset.snr_max_db"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            window_len_samples: self.signal.window_len,
            hop_samples: self.signal.hop,
            fft_size: self.signal.fft_size,
            window_kind: WindowKind::SqrtHann,
        }
    }

    pub fn silence_mode(&self) -> Result<SilenceMode> {
        match self.dataset.silence_mode.as_str() {
            "all_sources" => Ok(SilenceMode::AllSources),
            "mixture" => Ok(SilenceMode::Mixture),
            other => Err(usage(format!("dataset.silence_mode {other:?} (expected all_sources or mixture)"))),
        }
    }

    pub fn target(&self) -> Result<TargetConfig> {
        Ok(TargetConfig {
            floor_db: self.dataset.floor_db,
            silence_threshold_db: self.dataset.silence_threshold_db,
            silence_mode: self.silence_mode()?,
        })
    }

    pub fn network_spec(&self, input_dim: usize) -> Result<NetworkSpec> {
        Ok(NetworkSpec {
            input_dim,
            blstm_layers: self.network.blstm_layers,
            hidden_per_direction: self.network.hidden,
            embedding_dim: self.network.embedding_dim,
            output_activation: parse_activation(&self.network.activation)?,
            segment_len: self.dataset.segment_len,
        })
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            weight_noise_std: self.train.weight_noise_std,
            seed: self.seed,
        }
    }

    pub fn loss(&self) -> Result<LossConfig> {
        let weighting = match self.objective.weighting.as_str() {
            "partition_size" => Weighting::PartitionSize,
            "unweighted" => Weighting::Unweighted,
            other => return Err(usage(format!("objective.weighting {other:?} (expected partition_size or unweighted)"))),
        };
        Ok(LossConfig { weighting, ..LossConfig::default() })
    }

    pub fn strategy(&self) -> Result<ClusteringStrategy> {
        Ok(ClusteringStrategy::parse(&self.clustering.strategy)?)
    }

    pub fn separation(&self) -> SeparationConfig {
        SeparationConfig {
            stft: self.stft(),
            floor_db: self.dataset.floor_db,
            cluster_threshold_db: self.clustering.active_threshold_db,
            kmeans: KMeansConfig {
                restarts: self.clustering.restarts,
                max_iter: self.clustering.max_iter,
                tol: self.clustering.tol,
            },
        }
    }

    pub fn sdr_mode(&self) -> Result<SdrMode> {
        Ok(SdrMode::parse(&self.eval.mode)?)
    }

    pub fn nmf_config(&self) -> Result<NmfConfig> {
        Ok(NmfConfig {
            divergence: Divergence::parse(&self.nmf.divergence)?,
            sparsity_lambda: self.nmf.sparsity,
            max_iter: self.nmf.max_iter,
            tol: self.nmf.tol,
        })
    }
}
