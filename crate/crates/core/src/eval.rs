//! Separation metrics: signal-to-distortion ratio, its improvement over the
//! unprocessed mixture under the best estimate/reference matching, and
//! adjusted Rand index of bin labelings.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


use crate::clustering::MAX_PERMUTATION_K;
use crate::error::{Error, Result};
use crate::linalg::{dot, permutations};

/// Magnitude bound on every reported SDR.
pub const SDR_CAP_DB: f64 = 100.0;
/// Filter length of the filtered metric when none is given.
pub const DEFAULT_FILTER_TAPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdrMode {
    /// Distortion allowance is a single gain.
    #[default]
    ScaleInvariant,
    /// Distortion allowance is a causal FIR filter with this many taps.
    Filtered(usize),
}

impl SdrMode {
    pub fn name(self) -> String {
        match self {
            Self::ScaleInvariant => "scale_invariant".into(),
            Self::Filtered(l) => format!("filtered({l})"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "scale_invariant" {
            return Ok(Self::ScaleInvariant);
        }
        if s == "filtered" {
            return Ok(Self::Filtered(DEFAULT_FILTER_TAPS));
        }
        let taps = s
            .strip_prefix("filtered(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0);
        taps.map(Self::Filtered).ok_or_else(|| Error::Config(format!("unknown SDR mode {s:?}")))
    }
}

fn ratio_db(signal: f64, residual: f64) -> f64 {
    if residual <= 0.0 {
        return SDR_CAP_DB;
    }
    if signal <= 0.0 {
        return -SDR_CAP_DB;
    }
    (10.0 * (signal / residual).log10()).clamp(-SDR_CAP_DB, SDR_CAP_DB)
}

/// Least-squares `L`-tap filter of `reference` approximating `estimate`,
/// from the normal equations. The Gram matrix is the Toeplitz
/// autocorrelation with the tail terms that fall off the end of the signal
/// removed, so the fit is an exact projection. Returns the filtered
/// reference.
fn fitted_target(estimate: &[f64], reference: &[f64], taps: usize) -> Result<Vec<f64>> {
    let n = reference.len();
    let taps = taps.min(n);
    let lagged = |x: &[f64], y: &[f64], lag: usize| -> f64 { dot(&x[lag..], &y[..n - lag]) };
    let auto: Vec<f64> = (0..taps).map(|l| lagged(reference, reference, l)).collect();
    let cross: Vec<f64> = (0..taps).map(|l| lagged(estimate, reference, l)).collect();
    let gram = nalgebra::DMatrix::from_fn(taps, taps, |i, j| {
        let (d, hi) = (i.abs_diff(j), i.max(j));
        let tail: f64 = (n - hi..n - d).map(|m| reference[m + d] * reference[m]).sum();
        auto[d] - tail
    });
    let rhs = nalgebra::DVector::from_vec(cross);
    let h = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Degenerate("reference autocorrelation is singular".into()))?,
    };
    let mut target = vec![0.0; n];
    for (l, &c) in h.iter().enumerate() {
        for (t, &r) in target[l..].iter_mut().zip(reference) {
            *t += c * r;
        }
    }
    Ok(target)
}

/// SDR in dB of `estimate` against `reference`, clamped to ±100 dB.
pub fn sdr(estimate: &[f64], reference: &[f64], mode: SdrMode) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!("estimate has {} samples, reference {}", estimate.len(), reference.len())));
    }
    let rr = dot(reference, reference);
    if rr <= 0.0 {
        return Err(Error::Domain("reference is silent".into()));
    }
    if estimate.iter().all(|&x| x == 0.0) {
        return Ok(-SDR_CAP_DB);
    }
    let target = match mode {
        SdrMode::ScaleInvariant => {
            let alpha = dot(estimate, reference) / rr;
            reference.iter().map(|r| alpha * r).collect()
        }
        SdrMode::Filtered(0) => return Err(Error::Config("filtered SDR needs at least one tap".into())),
        SdrMode::Filtered(taps) => fitted_target(estimate, reference, taps)?,
    };
    let residual: f64 = estimate.iter().zip(&target).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok(ratio_db(dot(&target, &target), residual))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrReport {
    pub per_source_sdr_db: Vec<f64>,
    /// Over using the mixture itself as the estimate.
    pub per_source_sdr_improvement_db: Vec<f64>,
    /// `permutation[j]` is the estimate matched to reference `j`.
    pub permutation: Vec<usize>,
    pub mode: SdrMode,
}

/// SDR and SDR improvement per reference under the estimate assignment that
/// maximises mean SDR.
pub fn sdr_improvement(mixture: &[f64], estimates: &[&[f64]], references: &[&[f64]], mode: SdrMode) -> Result<SdrReport> {
    let k = references.len();
    if estimates.len() != k {
        return Err(Error::Shape(format!("{} estimates for {k} references", estimates.len())));
    }
    if k > MAX_PERMUTATION_K {
        return Err(Error::Unsupported(format!("permutation search over k = {k} > {MAX_PERMUTATION_K}")));
    }
    if k == 0 {
        return Err(Error::Shape("no references".into()));
    }
    // table[e][r]
    let mut table = vec![vec![0.0; k]; k];
    for (e, est) in estimates.iter().enumerate() {
        for (r, reference) in references.iter().enumerate() {
            table[e][r] = sdr(est, reference, mode)?;
        }
    }
    let baseline: Vec<f64> = references.iter().map(|r| sdr(mixture, r, mode)).collect::<Result<_>>()?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(k) {
        let total: f64 = (0..k).map(|j| table[p[j]][j]).sum();
        if best.as_ref().is_none_or(|b| total > b.0) {
            best = Some((total, p));
        }
    }
    let (_, permutation) = best.expect("k >= 1");
    let per_source_sdr_db: Vec<f64> = (0..k).map(|j| table[permutation[j]][j]).collect();
    let per_source_sdr_improvement_db = per_source_sdr_db.iter().zip(&baseline).map(|(s, b)| s - b).collect();
    Ok(SdrReport { per_source_sdr_db, per_source_sdr_improvement_db, permutation, mode })
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings over the bins whose weight is
/// set. Two single-cluster labelings score 1.
pub fn mask_ari(predicted: &[usize], truth: &[usize], weights: Option<&[bool]>) -> Result<f64> {
    if predicted.len() != truth.len() || weights.is_some_and(|w| w.len() != truth.len()) {
        return Err(Error::Shape("labelings and weights differ in length".into()));
    }
    let keep = |i: usize| weights.is_none_or(|w| w[i]);
    let (na, nb) = (0..truth.len()).filter(|&i| keep(i)).fold((0, 0), |(a, b), i| (a.max(predicted[i] + 1), b.max(truth[i] + 1)));
    let mut table = vec![0.0f64; na * nb];
    let mut n = 0.0;
    for i in (0..truth.len()).filter(|&i| keep(i)) {
        table[predicted[i] * nb + truth[i]] += 1.0;
        n += 1.0;
    }
    if n == 0.0 {
        return Err(Error::Domain("no retained bins to score".into()));
    }
    let index: f64 = table.iter().map(|&x| pairs(x)).sum();
    let rows: f64 = table.chunks(nb).map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..nb).map(|j| pairs((0..na).map(|i| table[i * nb + j]).sum())).sum();
    let expected = rows * cols / pairs(n).max(f64::MIN_POSITIVE);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
