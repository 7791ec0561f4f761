//! Supervised sparse NMF baseline: per-source bases learnt on clean
//! magnitudes, activations inferred on the mixture with the bases fixed,
//! Wiener-like soft masks.
//!
//! Frames are stacked into columns of `context` consecutive frames centred
//! on the frame they describe (zero beyond the edges); masks use the centre
//! block of each reconstructed column.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, Op};
use crate::separation::{resynthesize, SeparationMethod, SeparationResult};
use crate::signal::{stft, StftConfig, Waveform};

/// Keeps quotients finite where a reconstruction entry is exactly zero.
const TINY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Divergence {
    #[default]
    Kl,
    Euclidean,
}

impl Divergence {
    pub fn name(self) -> &'static str {
        match self {
            Self::Kl => "kl",
            Self::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Self::Kl),
            "euclidean" => Ok(Self::Euclidean),
            _ => Err(Error::Config(format!("unknown divergence {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub divergence: Divergence,
    /// L1 weight on the activations.
    pub sparsity_lambda: f64,
    pub max_iter: usize,
    /// Relative objective decrease below which updates stop.
    pub tol: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self { divergence: Divergence::Kl, sparsity_lambda: 0.1, max_iter: 200, tol: 1e-5 }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity_lambda >= 0.0) || !self.sparsity_lambda.is_finite() {
            return Err(Error::Config(format!("sparsity lambda {} must be finite and >= 0", self.sparsity_lambda)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tolerance {} must be >= 0", self.tol)));
        }
        Ok(())
    }
}

pub const DEFAULT_RANK: usize = 256;
pub const DEFAULT_CONTEXT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfBases {
    /// `(F·context) × R`, nonnegative, unit-norm columns.
    pub basis: Matrix,
    pub context: usize,
    pub source_id: String,
}

impl NmfBases {
    pub fn bins(&self) -> usize {
        self.basis.rows() / self.context
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.context == 0 || self.basis.rows() % self.context != 0 {
            return Err(Error::Shape(format!("{} basis rows do not split into {} frames", self.basis.rows(), self.context)));
        }
        if self.basis.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain(format!("bases of {} have negative or non-finite entries", self.source_id)));
        }
        Ok(())
    }
}

/// `(F·context) × T` matrix whose column `t` holds frames
/// `t − context/2 .. t − context/2 + context` of the `T × F` input.
pub fn stack_context(frames: &Matrix, context: usize) -> Matrix {
    let (t_len, bins) = (frames.rows(), frames.cols());
    let half = context / 2;
    let mut out = Matrix::zeros(bins * context, t_len);
    for t in 0..t_len {
        for j in 0..context {
            let Some(src) = (t + j).checked_sub(half).filter(|&s| s < t_len) else {
                continue;
            };
            for (f, &x) in frames.row(src).iter().enumerate() {
                out.set(j * bins + f, t, x);
            }
        }
    }
    out
}

fn product(w: &Matrix, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(w.rows(), h.cols());
    gemm(Op::N, Op::N, w.rows(), w.cols(), h.cols(), 1.0, w.as_slice(), h.as_slice(), 0.0, out.as_mut_slice());
    out
}

/// Divergence of `V` from `WH` plus `λ Σ H`.
pub fn objective(v: &Matrix, w: &Matrix, h: &Matrix, cfg: &NmfConfig) -> f64 {
    let wh = product(w, h);
    let fit: f64 = match cfg.divergence {
        Divergence::Kl => v
            .as_slice()
            .iter()
            .zip(wh.as_slice())
            .map(|(&x, &y)| {
                let y = y.max(TINY);
                if x > 0.0 { x * (x / y).ln() - x + y } else { y }
            })
            .sum(),
        Divergence::Euclidean => 0.5 * v.as_slice().iter().zip(wh.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
    };
    fit + cfg.sparsity_lambda * h.as_slice().iter().sum::<f64>()
}

fn update_h(v: &Matrix, w: &Matrix, h: &mut Matrix, cfg: &NmfConfig) {
    let (f, r, t) = (w.rows(), w.cols(), h.cols());
    let mut numer = Matrix::zeros(r, t);
    let mut denom = Matrix::zeros(r, t);
    match cfg.divergence {
        Divergence::Kl => {
            let wh = product(w, h);
            let ratio: Vec<f64> = v.as_slice().iter().zip(wh.as_slice()).map(|(x, y)| x / y.max(TINY)).collect();
            gemm(Op::T, Op::N, r, f, t, 1.0, w.as_slice(), &ratio, 0.0, numer.as_mut_slice());
            for c in 0..r {
                let col_sum: f64 = (0..f).map(|i| w.get(i, c)).sum();
                denom.row_mut(c).fill(col_sum);
            }
        }
        Divergence::Euclidean => {
            gemm(Op::T, Op::N, r, f, t, 1.0, w.as_slice(), v.as_slice(), 0.0, numer.as_mut_slice());
            let mut wtw = Matrix::zeros(r, r);
            gemm(Op::T, Op::N, r, f, r, 1.0, w.as_slice(), w.as_slice(), 0.0, wtw.as_mut_slice());
            gemm(Op::N, Op::N, r, r, t, 1.0, wtw.as_slice(), h.as_slice(), 0.0, denom.as_mut_slice());
        }
    }
    for ((x, n), d) in h.as_mut_slice().iter_mut().zip(numer.as_slice()).zip(denom.as_slice()) {
        *x *= n / (d + cfg.sparsity_lambda).max(TINY);
    }
}

fn update_w(v: &Matrix, w: &mut Matrix, h: &Matrix, cfg: &NmfConfig) {
    let (f, r, t) = (w.rows(), w.cols(), h.cols());
    let mut numer = Matrix::zeros(f, r);
    let mut denom = Matrix::zeros(f, r);
    match cfg.divergence {
        Divergence::Kl => {
            let wh = product(w, h);
            let ratio: Vec<f64> = v.as_slice().iter().zip(wh.as_slice()).map(|(x, y)| x / y.max(TINY)).collect();
            gemm(Op::N, Op::T, f, t, r, 1.0, &ratio, h.as_slice(), 0.0, numer.as_mut_slice());
            let row_sums: Vec<f64> = (0..r).map(|c| h.row(c).iter().sum()).collect();
            for i in 0..f {
                denom.row_mut(i).copy_from_slice(&row_sums);
            }
        }
        Divergence::Euclidean => {
            gemm(Op::N, Op::T, f, t, r, 1.0, v.as_slice(), h.as_slice(), 0.0, numer.as_mut_slice());
            let mut hht = Matrix::zeros(r, r);
            gemm(Op::N, Op::T, r, t, r, 1.0, h.as_slice(), h.as_slice(), 0.0, hht.as_mut_slice());
            gemm(Op::N, Op::N, f, r, r, 1.0, w.as_slice(), hht.as_slice(), 0.0, denom.as_mut_slice());
        }
    }
    for ((x, n), d) in w.as_mut_slice().iter_mut().zip(numer.as_slice()).zip(denom.as_slice()) {
        *x *= n / d.max(TINY);
    }
}

fn check_nonnegative(v: &Matrix) -> Result<()> {
    if v.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain("NMF input has negative or non-finite entries".into()));
    }
    Ok(())
}

fn converged(history: &[f64], tol: f64) -> bool {
    match history {
        [.., prev, cur] => prev - cur <= tol * prev.abs(),
        _ => false,
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.1..1.0))
}

/// Factorise `V ≈ WH` from a seeded random start. Returns `(W, H, objective
/// after every iteration)`; the first entry is the starting objective.
pub fn factorize(v: &Matrix, rank: usize, cfg: &NmfConfig, seed: u64) -> Result<(Matrix, Matrix, Vec<f64>)> {
    cfg.validate()?;
    check_nonnegative(v)?;
    if rank == 0 {
        return Err(Error::Config("NMF rank must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = random_matrix(v.rows(), rank, &mut rng);
    let mut h = random_matrix(rank, v.cols(), &mut rng);
    let mut history = vec![objective(v, &w, &h, cfg)];
    for _ in 0..cfg.max_iter {
        update_h(v, &w, &mut h, cfg);
        update_w(v, &mut w, &h, cfg);
        history.push(objective(v, &w, &h, cfg));
        if converged(&history, cfg.tol) {
            break;
        }
    }
    Ok((w, h, history))
}

/// Activations for fixed bases. Returns `(H, objective history)`.
pub fn infer_activations(v: &Matrix, w: &Matrix, cfg: &NmfConfig, seed: u64) -> Result<(Matrix, Vec<f64>)> {
    cfg.validate()?;
    check_nonnegative(v)?;
    if v.rows() != w.rows() {
        return Err(Error::Shape(format!("{} data rows against {} basis rows", v.rows(), w.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = random_matrix(w.cols(), v.cols(), &mut rng);
    let mut history = vec![objective(v, w, &h, cfg)];
    for _ in 0..cfg.max_iter {
        update_h(v, w, &mut h, cfg);
        history.push(objective(v, w, &h, cfg));
        if converged(&history, cfg.tol) {
            break;
        }
    }
    Ok((h, history))
}

/// Learn `rank` bases from clean `T × F` magnitude matrices of one source.
pub fn train_bases(
    magnitudes: &[Matrix],
    cfg: &NmfConfig,
    rank: usize,
    context: usize,
    seed: u64,
    source_id: &str,
) -> Result<NmfBases> {
    if context == 0 {
        return Err(Error::Config("context must be at least one frame".into()));
    }
    let stacks: Vec<Matrix> = magnitudes.iter().map(|m| stack_context(m, context)).collect();
    let v = hstack(&stacks)?;
    if v.cols() < rank {
        return Err(Error::Precondition(format!("{} frames for {rank} bases", v.cols())));
    }
    let (mut w, _, history) = factorize(&v, rank, cfg, seed)?;
    log::debug!("{source_id}: NMF objective {:.6e} -> {:.6e} in {} iterations", history[0], history[history.len() - 1], history.len() - 1);
    for c in 0..rank {
        let norm = (0..w.rows()).map(|i| w.get(i, c).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..w.rows() {
                w.set(i, c, w.get(i, c) / norm);
            }
        }
    }
    Ok(NmfBases { basis: w, context, source_id: source_id.into() })
}

fn hstack(parts: &[Matrix]) -> Result<Matrix> {
    let rows = parts.first().map_or(0, Matrix::rows);
    if parts.iter().any(|p| p.rows() != rows) {
        return Err(Error::Shape("stacked inputs differ in height".into()));
    }
    let cols: usize = parts.iter().map(Matrix::cols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        for r in 0..rows {
            out.row_mut(r)[at..at + p.cols()].copy_from_slice(p.row(r));
        }
        at += p.cols();
    }
    Ok(out)
}

/// Wiener-like masks `M_c² / Σ M²` (uniform where every estimate is zero).
pub fn wiener_masks(estimates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = estimates.first().map_or(0, Vec::len);
    let k = estimates.len();
    let mut masks = vec![vec![0.0; n]; k];
    for i in 0..n {
        let total: f64 = estimates.iter().map(|m| m[i] * m[i]).sum();
        for c in 0..k {
            masks[c][i] = if total > 0.0 { estimates[c][i] * estimates[c][i] / total } else { 1.0 / k as f64 };
        }
    }
    masks
}

/// Separate a mixture with one set of bases per source.
pub fn separate_nmf(
    mixture: &Waveform,
    bases: &[NmfBases],
    cfg: &NmfConfig,
    stft_cfg: &StftConfig,
    seed: u64,
) -> Result<SeparationResult> {
    if bases.len() < 2 {
        return Err(Error::Precondition(format!("{} basis sets; need one per source, at least 2", bases.len())));
    }
    for b in bases {
        b.validate()?;
    }
    let context = bases[0].context;
    let x = stft(mixture, stft_cfg)?;
    let bins = x.bins();
    if bases.iter().any(|b| b.context != context || b.bins() != bins) {
        return Err(Error::Shape(format!("bases must all be {bins} bins x {context} frames")));
    }
    let mags = Matrix::from_vec(x.frames(), bins, x.magnitudes())?;
    let v = stack_context(&mags, context);
    let w = hstack(&bases.iter().map(|b| b.basis.clone()).collect::<Vec<_>>())?;
    let (h, _) = infer_activations(&v, &w, cfg, seed)?;

    let centre = (context / 2) * bins;
    let mut offset = 0;
    let mut estimates = Vec::with_capacity(bases.len());
    for b in bases {
        let r = b.rank();
        let hc = Matrix::from_fn(r, h.cols(), |i, t| h.get(offset + i, t));
        offset += r;
        let rec = product(&b.basis, &hc);
        let mut est = vec![0.0; x.frames() * bins];
        for t in 0..x.frames() {
            for f in 0..bins {
                est[t * bins + f] = rec.get(centre + f, t);
            }
        }
        estimates.push(est);
    }
    let masks = wiener_masks(&estimates);
    let waves = resynthesize(&x, &masks, stft_cfg)?;
    let model_id = bases.iter().map(|b| b.source_id.as_str()).collect::<Vec<_>>().join("+");
    Ok(SeparationResult { masks, estimates: waves, method: SeparationMethod::Snmf, model_id, timing_ms: None })
}
