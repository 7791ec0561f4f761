//! Subcommand bodies. Each returns a one-line summary for the status line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dclust_core::dataset::{build_manifest, synth_source, MixtureManifest, SynthSourceSpec};
use dclust_core::eval::sdr_improvement;
use dclust_core::nmf::{separate_nmf, train_bases};
use dclust_core::rng::derive_seed;
use dclust_core::separation::{separate, SeparationResult};
use dclust_core::signal::{power_ratio_db, stft, Waveform};
use dclust_core::Matrix;

use crate::config::RunConfig;
use crate::container::{load_bases, save_bases, Checkpoint};
use crate::error::{AppError, Result};
use crate::manifest::{read_manifest, write_manifest};
use crate::pipeline::{load_source, manifest_segments, realize};
use crate::report::{mask_pgm, mean_improvement, to_csv, write_text, ReportRow};
use crate::selfcheck::{self, SelfcheckOptions};
use crate::train::{train, TrainOptions};
use crate::wav::write_wav;

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
}

fn speaker_name(f0: f64) -> String {
    format!("f0_{f0}hz")
}

/// Every (speaker, file name, waveform) of the configured grid.
pub fn synth_grid(cfg: &RunConfig) -> Result<Vec<(String, String, Waveform)>> {
    let s = &cfg.synth;
    let mut out = Vec::new();
    for (i, &f0) in s.f0_hz.iter().enumerate() {
        for j in 0..s.seeds_per_f0 {
            let spec = SynthSourceSpec {
                f0_hz: f0,
                num_harmonics: ((s.max_harmonic_hz / f0).floor() as usize).max(1),
                am_rate_hz: s.am_rate_hz,
                am_depth: s.am_depth,
                duration_s: s.duration_s,
                seed: derive_seed(cfg.seed, (i * s.seeds_per_f0 + j) as u64),
            };
            let wave = synth_source(&spec).map_err(|e| usage(format!("synth grid f0 {f0} Hz: {e}")))?;
            out.push((speaker_name(f0), format!("seed{j:02}.wav"), wave));
        }
    }
    Ok(out)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String> {
    let grid = synth_grid(cfg)?;
    for (speaker, name, wave) in &grid {
        write_wav(&cfg.paths.output_dir.join(speaker).join(name), wave)?;
    }
    Ok(format!("{} sources in {}", grid.len(), cfg.paths.output_dir.display()))
}

/// Speaker lists from `source_dir/<speaker>/*.wav`, as paths relative to
/// `source_dir`, both levels sorted.
pub fn speaker_lists(source_dir: &Path) -> Result<Vec<Vec<String>>> {
    let listing = |dir: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> =
            std::fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        v.sort();
        Ok(v)
    };
    let mut lists = Vec::new();
    for dir in listing(source_dir)?.into_iter().filter(|p| p.is_dir()) {
        let speaker = dir.file_name().expect("directory entry").to_string_lossy().into_owned();
        let files: Vec<String> = listing(&dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .map(|p| format!("{speaker}/{}", p.file_name().expect("file entry").to_string_lossy()))
            .collect();
        if !files.is_empty() {
            lists.push(files);
        }
    }
    Ok(lists)
}

pub fn mixture_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.mix.wav"))
}

pub fn reference_path(dir: &Path, id: &str, i: usize) -> PathBuf {
    dir.join(format!("{id}.ref{i}.wav"))
}

pub fn estimate_path(dir: &Path, id: &str, i: usize) -> PathBuf {
    dir.join(format!("{id}.src{i}.wav"))
}

pub fn cmd_mix(cfg: &RunConfig) -> Result<String> {
    let d = &cfg.dataset;
    let lists = speaker_lists(&cfg.paths.source_dir)?;
    let manifest = build_manifest(&lists, d.mixtures, (d.snr_min_db, d.snr_max_db), d.sources_per_mixture, cfg.seed)?;
    let mut worst = 0.0f64;
    for e in &manifest.entries {
        let mix = realize(e, &cfg.paths.source_dir)?;
        for (i, (src, snr)) in mix.sources[1..].iter().zip(&e.snr_db).enumerate() {
            let err = (power_ratio_db(&mix.sources[0], src) - snr).abs();
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(dclust_core::Error::Precondition(format!("{}: interferer {i} mixed at {err} dB off target", e.mixture_id)).into());
            }
        }
        write_wav(&mixture_path(&cfg.paths.output_dir, &e.mixture_id), &mix.mixture)?;
        for (i, s) in mix.sources.iter().enumerate() {
            write_wav(&reference_path(&cfg.paths.output_dir, &e.mixture_id, i), s)?;
        }
    }
    write_manifest(&cfg.paths.manifest, &manifest)?;
    Ok(format!("{} mixtures, worst SNR error {worst:.2e} dB", manifest.len()))
}

fn manifest_or_empty(path: Option<&Path>) -> Result<MixtureManifest> {
    match path {
        Some(p) => read_manifest(p),
        None => Ok(MixtureManifest::default()),
    }
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<PathBuf>, init_from: Option<PathBuf>) -> Result<String> {
    if resume.is_some() && init_from.is_some() {
        return Err(usage("--resume and --init-from are exclusive"));
    }
    let manifest = read_manifest(&cfg.paths.manifest)?;
    if manifest.is_empty() {
        return Err(dclust_core::Error::Config(format!("{} has no mixtures", cfg.paths.manifest.display())).into());
    }
    let validation = manifest_or_empty(cfg.paths.validation_manifest.as_deref())?;
    let train_segments = manifest_segments(&manifest.entries, cfg)?;
    let val_segments = manifest_segments(&validation.entries, cfg)?;
    log::info!("{} training and {} validation segments", train_segments.len(), val_segments.len());
    let opts = TrainOptions { resume, init_from, output_dir: Some(cfg.paths.checkpoint_dir.clone()) };
    let outcome = train(cfg, &train_segments, &val_segments, &opts)?;
    let last = outcome.epochs.last().map(|r| r.mean_train_loss).unwrap_or(f64::NAN);
    Ok(format!("{} epochs, final mean loss {last:.4}, checkpoints in {}", outcome.last.epoch, cfg.paths.checkpoint_dir.display()))
}

fn write_estimates(result: &SeparationResult, dir: &Path, id: &str, bins: usize, dump_masks: bool) -> Result<()> {
    for (i, est) in result.estimates.iter().enumerate() {
        write_wav(&estimate_path(dir, id, i), est)?;
        if dump_masks {
            let p = dir.join(format!("{id}.mask{i}.pgm"));
            std::fs::write(&p, mask_pgm(&result.masks[i], bins)).map_err(|e| AppError::io(&p, e))?;
        }
    }
    Ok(())
}

pub struct SeparateArgs {
    pub checkpoint: PathBuf,
    pub mixture: PathBuf,
    pub references: Vec<PathBuf>,
    pub dump_masks: bool,
}

pub fn cmd_separate(cfg: &RunConfig, args: &SeparateArgs) -> Result<String> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mixture = load_source(&args.mixture)?;
    let refs = args.references.iter().map(|p| load_source(p)).collect::<Result<Vec<_>>>()?;
    let strategy = cfg.strategy()?;
    let started = Instant::now();
    let mut result = separate(
        &mixture,
        &ck.model,
        &stem(&args.checkpoint),
        cfg.clustering.k,
        strategy,
        cfg.seed,
        (!refs.is_empty()).then_some(refs.as_slice()),
        &cfg.separation(),
    )?;
    result.timing_ms = Some(started.elapsed().as_millis() as u64);
    let id = stem(&args.mixture).trim_end_matches(".mix").to_string();
    write_estimates(&result, &cfg.paths.output_dir, &id, ck.model.spec().input_dim, args.dump_masks)?;
    Ok(format!("{} estimates for {id} in {}", result.estimates.len(), cfg.paths.output_dir.display()))
}

pub enum EvaluateArgs {
    Single { mixture: PathBuf, estimates: Vec<PathBuf>, references: Vec<PathBuf> },
    /// Estimates `<id>.src<i>.wav` in `estimates_dir`; mixtures and
    /// references as written by `mix` in `references_dir`.
    Manifest { estimates_dir: PathBuf, references_dir: PathBuf },
}

fn evaluate_one(id: &str, mixture: &Waveform, estimates: &[Waveform], refs: &[Waveform], cfg: &RunConfig) -> Result<ReportRow> {
    if estimates.len() != refs.len() {
        return Err(usage(format!("{id}: {} estimates for {} references", estimates.len(), refs.len())));
    }
    let len = refs.iter().chain(estimates).map(Waveform::len).chain([mixture.len()]).min().unwrap_or(0);
    let cut = |w: &Waveform| w.samples()[..len].to_vec();
    let (m, e, r): (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) = (cut(mixture), estimates.iter().map(cut).collect(), refs.iter().map(cut).collect());
    let e: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
    let r: Vec<&[f64]> = r.iter().map(Vec::as_slice).collect();
    let report = sdr_improvement(&m, &e, &r, cfg.sdr_mode()?)?;
    Ok(ReportRow { mixture_id: id.into(), report, strategy: cfg.clustering.strategy.clone() })
}

pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs, output: &Path) -> Result<String> {
    let load_all = |ps: &[PathBuf]| ps.iter().map(|p| load_source(p)).collect::<Result<Vec<_>>>();
    let rows = match args {
        EvaluateArgs::Single { mixture, estimates, references } => {
            let id = stem(mixture).trim_end_matches(".mix").to_string();
            vec![evaluate_one(&id, &load_source(mixture)?, &load_all(estimates)?, &load_all(references)?, cfg)?]
        }
        EvaluateArgs::Manifest { estimates_dir, references_dir } => {
            let manifest = read_manifest(&cfg.paths.manifest)?;
            let mut rows = Vec::with_capacity(manifest.len());
            for e in &manifest.entries {
                let id = &e.mixture_id;
                let n = e.sources.len();
                let ests: Vec<PathBuf> = (0..n).map(|i| estimate_path(estimates_dir, id, i)).collect();
                let refs: Vec<PathBuf> = (0..n).map(|i| reference_path(references_dir, id, i)).collect();
                let mixture = load_source(&mixture_path(references_dir, id))?;
                rows.push(evaluate_one(id, &mixture, &load_all(&ests)?, &load_all(&refs)?, cfg)?);
            }
            rows
        }
    };
    write_text(output, &to_csv(&rows))?;
    let means: Vec<String> = mean_improvement(&rows).iter().map(|v| format!("{v:.3}")).collect();
    Ok(format!("{} mixtures, mean SDR improvement per source [{}] dB, report {}", rows.len(), means.join(", "), output.display()))
}

pub fn cmd_nmf_train(cfg: &RunConfig, sources: &[PathBuf], source_id: &str, output: &Path) -> Result<String> {
    if sources.is_empty() {
        return Err(usage("nmf train needs at least one source WAV"));
    }
    let stft_cfg = cfg.stft();
    let mags = sources
        .iter()
        .map(|p| {
            let s = stft(&load_source(p)?, &stft_cfg)?;
            Ok(Matrix::from_vec(s.frames(), s.bins(), s.magnitudes())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let bases = train_bases(&mags, &cfg.nmf_config()?, cfg.nmf.rank, cfg.nmf.context, cfg.seed, source_id)?;
    save_bases(output, &bases)?;
    Ok(format!("rank {} bases for {source_id} in {}", bases.rank(), output.display()))
}

pub fn cmd_nmf_separate(cfg: &RunConfig, bases: &[PathBuf], mixture: &Path) -> Result<String> {
    if bases.len() < 2 {
        return Err(usage("nmf separate needs one bases file per source (at least 2)"));
    }
    let bases = bases.iter().map(|p| load_bases(p)).collect::<Result<Vec<_>>>()?;
    let wave = load_source(mixture)?;
    let result = separate_nmf(&wave, &bases, &cfg.nmf_config()?, &cfg.stft(), cfg.seed)?;
    let id = stem(mixture).trim_end_matches(".mix").to_string();
    write_estimates(&result, &cfg.paths.output_dir, &id, cfg.stft().bins(), false)?;
    Ok(format!("{} estimates for {id} in {}", result.estimates.len(), cfg.paths.output_dir.display()))
}

/// Returns the rendered report, or an error naming the failed checks.
pub fn cmd_selfcheck(cfg: &RunConfig, corrupt_gradient: bool) -> Result<String> {
    let results = selfcheck::run(SelfcheckOptions { seed: cfg.seed, corrupt_gradient });
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {} max_error={:.3e} tolerance={:.1e} cases={}", r.name, r.max_error, r.tolerance, r.cases);
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(format!("{} checks passed", results.len()))
    } else {
        Err(dclust_core::Error::Numeric { layer: 0, detail: format!("self-check failed: {}", failed.join(", ")) }.into())
    }
}
