//! Epoch loop around `train_step`: shuffling, loss logs, per-epoch and
//! best-on-validation checkpoints, resume and warm start.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dclust_core::dataset::SegmentBatch;
use dclust_core::network::{evaluate_loss, init_params, train_step, EmbeddingModel, FeatureNormalizer, OptimizerState};
use dclust_core::objective::LossConfig;
use dclust_core::rng::derive_seed;

use crate::config::RunConfig;
use crate::container::Checkpoint;
use crate::error::{AppError, Result};

/// Stream indices under the master seed.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

pub const LOSS_LOG: &str = "loss_log.csv";
pub const EPOCH_LOG: &str = "epoch_log.csv";
pub const BEST_CHECKPOINT: &str = "best.dcnet";

pub fn epoch_checkpoint(dir: &Path, epoch: u64) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.dcnet"))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from a saved checkpoint, optimizer state included.
    pub resume: Option<PathBuf>,
    /// Start from a checkpoint's weights and input normaliser with a fresh
    /// optimizer.
    pub init_from: Option<PathBuf>,
    /// Where checkpoints and logs go; `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mean_train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub epochs: Vec<EpochRecord>,
}

fn mean_validation_loss(model: &EmbeddingModel, segments: &[SegmentBatch], loss: &LossConfig) -> Result<Option<f64>> {
    if segments.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for s in segments {
        total += evaluate_loss(&model.params, s, loss)?;
    }
    Ok(Some(total / segments.len() as f64))
}

fn normalized(segments: &[SegmentBatch], norm: &FeatureNormalizer) -> Result<Vec<SegmentBatch>> {
    segments
        .iter()
        .map(|s| Ok(SegmentBatch { features: norm.apply(&s.features)?, ..s.clone() }))
        .collect()
}

fn initial_state(cfg: &RunConfig, train: &[SegmentBatch], opts: &TrainOptions) -> Result<Checkpoint> {
    let bins = train[0].bins();
    let spec = cfg.network_spec(bins)?;
    let mut optimizer = cfg.optimizer();
    optimizer.seed = derive_seed(cfg.seed, NOISE_STREAM);
    if let Some(path) = &opts.resume {
        let ck = Checkpoint::load(path)?;
        ck.model.params.check_compatible(&spec)?;
        if ck.optimizer.is_none() {
            return Err(AppError::format(path, "checkpoint has no optimizer state to resume"));
        }
        log::info!("resuming {} after epoch {}", path.display(), ck.epoch);
        return Ok(ck);
    }
    let model = match &opts.init_from {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let params = ck.model.params.with_spec(spec)?;
            log::info!("warm start from {}", path.display());
            EmbeddingModel::new(params, ck.model.normalizer)?
        }
        None => {
            let params = init_params(&spec, derive_seed(cfg.seed, INIT_STREAM))?;
            let normalizer = if cfg.network.normalize_input {
                FeatureNormalizer::fit(train.iter().map(|s| &s.features))?
            } else {
                FeatureNormalizer::identity(bins)
            };
            EmbeddingModel::new(params, normalizer)?
        }
    };
    let state = OptimizerState::new(optimizer, &model.params)?;
    Ok(Checkpoint { model, optimizer: Some(state), epoch: 0, validation_loss: None })
}

fn append(path: &Path, text: &str, header: &str) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| AppError::io(path, e))?;
    if fresh {
        f.write_all(header.as_bytes()).map_err(|e| AppError::io(path, e))?;
    }
    f.write_all(text.as_bytes()).map_err(|e| AppError::io(path, e))
}

/// Run `cfg.train.epochs` epochs in total (a resumed run continues where
/// its checkpoint stopped).
pub fn train(cfg: &RunConfig, train: &[SegmentBatch], validation: &[SegmentBatch], opts: &TrainOptions) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(dclust_core::Error::Config("no training segments (empty manifest?)".into()).into());
    }
    let loss_cfg = cfg.loss()?;
    let mut ck = initial_state(cfg, train, opts)?;
    let train_set = normalized(train, &ck.model.normalizer)?;
    let val_set = normalized(validation, &ck.model.normalizer)?;
    if let Some(dir) = &opts.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        if opts.resume.is_none() {
            for name in [LOSS_LOG, EPOCH_LOG] {
                let p = dir.join(name);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| AppError::io(&p, e))?;
                }
            }
        }
    }
    let mut best: Option<Checkpoint> = match (&opts.output_dir, &opts.resume) {
        (Some(dir), Some(_)) if dir.join(BEST_CHECKPOINT).exists() => Some(Checkpoint::load(&dir.join(BEST_CHECKPOINT))?),
        _ => None,
    };
    let started = Instant::now();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    while (ck.epoch as usize) < cfg.train.epochs {
        let epoch = ck.epoch;
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, SHUFFLE_STREAM), epoch)));
        let state = ck.optimizer.as_mut().expect("training state has an optimizer");
        let mut log = String::new();
        let mut total = 0.0;
        for &i in &order {
            let step = state.step;
            let value = train_step(&mut ck.model.params, state, &train_set[i], &loss_cfg)?;
            total += value;
            let wall = if cfg.train.deterministic_log { 0 } else { started.elapsed().as_millis() };
            writeln!(log, "{epoch},{step},{value:.9e},{wall}").expect("string write");
        }
        let mean = total / train_set.len() as f64;
        ck.epoch += 1;
        ck.validation_loss = mean_validation_loss(&ck.model, &val_set, &loss_cfg)?;
        let score = ck.validation_loss.unwrap_or(mean);
        let improved = best.as_ref().is_none_or(|b| score < b.validation_loss.unwrap_or(f64::INFINITY));
        log::info!("epoch {} train {mean:.4} validation {:?}", ck.epoch, ck.validation_loss);
        if let Some(dir) = &opts.output_dir {
            append(&dir.join(LOSS_LOG), &log, "epoch,step,loss,wall_ms\n")?;
            let val = ck.validation_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
            append(&dir.join(EPOCH_LOG), &format!("{epoch},{mean:.9e},{val}\n"), "epoch,mean_loss,validation_loss\n")?;
            ck.save(&epoch_checkpoint(dir, ck.epoch))?;
        }
        if improved {
            let mut b = ck.clone();
            b.validation_loss = Some(score);
            if let Some(dir) = &opts.output_dir {
                b.save(&dir.join(BEST_CHECKPOINT))?;
            }
            best = Some(b);
        }
        records.push(EpochRecord { epoch, mean_train_loss: mean, validation_loss: ck.validation_loss });
    }
    let best = best.unwrap_or_else(|| ck.clone());
    Ok(TrainOutcome { last: ck, best, epochs: records })
}
