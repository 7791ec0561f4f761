//! Embeddings to partitions: k-means, the inner-product spectral reduction
//! and per-segment permutation alignment.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{permutations, Matrix};
use crate::rng::derive_seed;
use crate::signal::Spectrogram;

/// Largest cluster count accepted by the exhaustive permutation searches.
pub const MAX_PERMUTATION_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// k × K.
    pub centroids: Matrix,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative inertia improvement below which Lloyd iterations stop.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusteringStrategy {
    /// One k-means over every segment's embeddings.
    #[default]
    GlobalKmeans,
    /// Independent k-means per segment, aligned afterwards by the oracle.
    SegmentKmeansOracle,
    /// Spectral reduction then k-means per segment, aligned by the oracle.
    SegmentSpectralOracle,
}

impl ClusteringStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::GlobalKmeans => "global_kmeans",
            Self::SegmentKmeansOracle => "segment_kmeans_oracle",
            Self::SegmentSpectralOracle => "segment_spectral_oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "global_kmeans" => Ok(Self::GlobalKmeans),
            "segment_kmeans_oracle" => Ok(Self::SegmentKmeansOracle),
            "segment_spectral_oracle" => Ok(Self::SegmentSpectralOracle),
            _ => Err(Error::Config(format!("unknown clustering strategy {s:?}"))),
        }
    }

    pub fn needs_oracle(self) -> bool {
        !matches!(self, Self::GlobalKmeans)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance-weighted probabilistic seeding (k-means++).
pub fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (d, p) in nearest.iter_mut().zip(points.iter_rows()) {
            *d = d.min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids. Returns the final assignment
/// and the inertia measured after every assignment step.
pub fn lloyd(points: &Matrix, mut centroids: Matrix, max_iter: usize, tol: f64) -> (ClusterAssignment, Vec<f64>) {
    let (n, dim, k) = (points.rows(), points.cols(), centroids.rows());
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        for (i, p) in points.iter_rows().enumerate() {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(p, centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            labels[i] = best;
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();
        let converged = history.last().is_some_and(|&prev: &f64| prev - inertia <= tol * prev);
        history.push(inertia);
        if converged {
            break;
        }

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums.row_mut(labels[i]).iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
                continue;
            }
            // empty cluster: move it onto the point worst served so far
            let far = (0..n).fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
            log::debug!("k-means: cluster {c} empty, reseeding from point {far}");
            centroids.row_mut(c).copy_from_slice(points.row(far));
            dists[far] = 0.0;
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    (ClusterAssignment { labels, centroids, inertia }, history)
}

/// k-means with default restarts and stopping rule.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_with(points, k, seed, &KMeansConfig::default())
}

/// Best of `cfg.restarts` seeded k-means runs by inertia.
pub fn kmeans_with(points: &Matrix, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    if k == 0 || points.rows() < k {
        return Err(Error::Shape(format!("k-means with k = {k} on {} points", points.rows())));
    }
    if !points.is_finite() {
        return Err(Error::Domain("non-finite points passed to k-means".into()));
    }
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let init = kmeans_plus_plus(points, k, &mut rng);
        let (run, _) = lloyd(points, init, cfg.max_iter, cfg.tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowNormalization {
    /// Unit Euclidean norm per row.
    #[default]
    NgL2,
    /// `u_ir / sqrt(Σ_r' u_ir')`, undefined for non-positive row sums.
    SqrtRowSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReduction {
    /// N × m normalised leading left singular vectors.
    pub points: Matrix,
    /// All singular values of `D^{-1/2} V`, non-increasing.
    pub singular_values: Vec<f64>,
}

/// SVD reduction of the inner-product affinity `VVᵀ` without forming it.
pub fn spectral_reduce(v: &Matrix, m: usize, mode: RowNormalization) -> Result<SpectralReduction> {
    let (n, k) = (v.rows(), v.cols());
    if m == 0 || m > k {
        return Err(Error::Shape(format!("reduction to {m} dims from {k}")));
    }
    let mut col_sum = vec![0.0; k];
    for row in v.iter_rows() {
        for (s, x) in col_sum.iter_mut().zip(row) {
            *s += x;
        }
    }
    let mut scaled = nalgebra::DMatrix::<f64>::zeros(n, k);
    for (i, row) in v.iter_rows().enumerate() {
        let degree: f64 = row.iter().zip(&col_sum).map(|(a, b)| a * b).sum();
        if degree == 0.0 {
            return Err(Error::Degenerate(format!("row {i} has zero degree")));
        }
        if degree < 0.0 {
            return Err(Error::Domain(format!("row {i} has negative degree {degree:e}")));
        }
        let s = 1.0 / degree.sqrt();
        for (j, x) in row.iter().enumerate() {
            scaled[(i, j)] = x * s;
        }
    }
    let svd = nalgebra::linalg::SVD::new(scaled, true, false);
    let u = svd.u.as_ref().expect("left vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();

    let mut points = Matrix::zeros(n, m);
    for i in 0..n {
        let row = points.row_mut(i);
        for (r, &c) in order[..m].iter().enumerate() {
            row[r] = u[(i, c)];
        }
        let denom = match mode {
            RowNormalization::NgL2 => {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::Degenerate(format!("reduced row {i} is zero")));
                }
                norm
            }
            RowNormalization::SqrtRowSum => {
                let sum: f64 = row.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::Domain(format!("reduced row {i} sums to {sum:e}")));
                }
                sum.sqrt()
            }
        };
        for x in row.iter_mut() {
            *x /= denom;
        }
    }
    Ok(SpectralReduction { points, singular_values })
}

/// k-means fitted on the `active` rows (all rows when `None` or when fewer
/// than `k` are active); every row is then labelled by its nearest centroid.
pub fn fit_and_assign(points: &Matrix, active: Option<&[bool]>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<Vec<usize>> {
    let keep: Vec<usize> = match active {
        Some(a) if a.len() != points.rows() => {
            return Err(Error::Shape(format!("{} activity flags for {} points", a.len(), points.rows())));
        }
        Some(a) => (0..points.rows()).filter(|&i| a[i]).collect(),
        None => Vec::new(),
    };
    if active.is_none() || keep.len() < k || keep.len() == points.rows() {
        return Ok(kmeans_with(points, k, seed, cfg)?.labels);
    }
    let fit = kmeans_with(&points.select_rows(&keep), k, seed, cfg)?;
    Ok(points
        .iter_rows()
        .map(|p| {
            (0..k)
                .map(|c| (c, sq_dist(p, fit.centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
                .0
        })
        .collect())
}

/// Cluster every bin of an utterance given per-segment embeddings. Returns
/// one label vector per segment; segment strategies leave the label spaces
/// of different segments unaligned. `active` optionally restricts which
/// bins of each segment the centroids are fitted on.
pub fn cluster_utterance(
    segments: &[Matrix],
    active: Option<&[Vec<bool>]>,
    k: usize,
    strategy: ClusteringStrategy,
    seed: u64,
    kmeans_cfg: &KMeansConfig,
) -> Result<Vec<Vec<usize>>> {
    if segments.is_empty() {
        return Err(Error::Precondition("no segments to cluster".into()));
    }
    if active.is_some_and(|a| a.len() != segments.len()) {
        return Err(Error::Shape("activity flags and segments differ in count".into()));
    }
    match strategy {
        ClusteringStrategy::GlobalKmeans => {
            let all = Matrix::vstack(segments)?;
            let flags: Option<Vec<bool>> = active.map(|a| a.concat());
            let labels = fit_and_assign(&all, flags.as_deref(), k, seed, kmeans_cfg)?;
            let mut out = Vec::with_capacity(segments.len());
            let mut at = 0;
            for s in segments {
                out.push(labels[at..at + s.rows()].to_vec());
                at += s.rows();
            }
            Ok(out)
        }
        ClusteringStrategy::SegmentKmeansOracle | ClusteringStrategy::SegmentSpectralOracle => segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let points = if strategy == ClusteringStrategy::SegmentSpectralOracle {
                    spectral_reduce(s, k, RowNormalization::NgL2)?.points
                } else {
                    s.clone()
                };
                let flags = active.map(|a| a[i].as_slice());
                fit_and_assign(&points, flags, k, derive_seed(seed, i as u64), kmeans_cfg)
            })
            .collect(),
    }
}

/// Squared error `Σ_s ‖mask_s ⊙ X − S_s‖²` over one segment when cluster `c`
/// is assigned to source `perm[c]`. `labels` is frame-major from
/// `start_frame`.
pub fn permutation_cost(
    labels: &[usize],
    start_frame: usize,
    perm: &[usize],
    mixture: &Spectrogram,
    references: &[Spectrogram],
) -> f64 {
    let bins = mixture.bins();
    let base = start_frame * bins;
    let mut cost = 0.0;
    for (off, &label) in labels.iter().enumerate() {
        let idx = base + off;
        let x = mixture.values()[idx];
        for (s, r) in references.iter().enumerate() {
            let est = if perm[label] == s { x } else { num_complex::Complex64::new(0.0, 0.0) };
            cost += (est - r.values()[idx]).norm_sqr();
        }
    }
    cost
}

/// Per-segment cluster → source assignment minimising the masked
/// spectrogram error against the references. `perm[c]` is the source for
/// cluster `c`.
pub fn oracle_permutation(
    segment_labels: &[Vec<usize>],
    segment_starts: &[usize],
    k: usize,
    mixture: &Spectrogram,
    references: &[Spectrogram],
) -> Result<Vec<Vec<usize>>> {
    if k > MAX_PERMUTATION_K {
        return Err(Error::Unsupported(format!("oracle permutation over k = {k} > {MAX_PERMUTATION_K}")));
    }
    if references.len() != k {
        return Err(Error::Shape(format!("{} references for k = {k}", references.len())));
    }
    if segment_labels.len() != segment_starts.len() {
        return Err(Error::Shape("segment labels and starts differ in count".into()));
    }
    if references.iter().any(|r| !r.same_shape(mixture)) {
        return Err(Error::Shape("references and mixture spectrograms differ in shape".into()));
    }
    let bins = mixture.bins();
    let perms = permutations(k);
    segment_labels
        .iter()
        .zip(segment_starts)
        .map(|(labels, &start)| {
            if labels.len() % bins != 0 || start * bins + labels.len() > mixture.values().len() {
                return Err(Error::Shape(format!("segment at frame {start} exceeds the mixture")));
            }
            if labels.iter().any(|&l| l >= k) {
                return Err(Error::Shape(format!("segment at frame {start} has a label outside 0..{k}")));
            }
            let mut best = (f64::INFINITY, 0);
            for (i, p) in perms.iter().enumerate() {
                let c = permutation_cost(labels, start, p, mixture, references);
                if c < best.0 {
                    best = (c, i);
                }
            }
            Ok(perms[best.1].clone())
        })
        .collect()
}
