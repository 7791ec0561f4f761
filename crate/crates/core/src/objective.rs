//! Affinity-mismatch training objective
//! `C = Σ_ij w_ij (⟨v_i, v_j⟩ − [y_i = y_j])²` in its O(N²) reference form
//! and its low-rank O(N·K²) form, plus the analytic gradient with respect to
//! the embeddings.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;



use crate::dataset::PartitionLabels;
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, Matrix, Op};

/// Allowed deviation of embedding row norms from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// N × K embeddings whose rows have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        check_unit_rows(&values, None, UNIT_NORM_TOLERANCE)?;
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

impl Deref for EmbeddingMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

fn check_unit_rows(v: &Matrix, keep: Option<&[usize]>, tol: f64) -> Result<()> {
    let check = |n: usize| -> Result<()> {
        let norm = dot(v.row(n), v.row(n)).sqrt();
        if (norm - 1.0).abs() > tol || !norm.is_finite() {
            return Err(Error::Precondition(format!("embedding row {n} has norm {norm}")));
        }
        Ok(())
    };
    match keep {
        Some(rows) => rows.iter().try_for_each(|&n| check(n)),
        None => (0..v.rows()).try_for_each(check),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `w_ij = (d_i d_j)^{-1/2}` with `d` the partition sizes.
    #[default]
    PartitionSize,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub weighting: Weighting,
    /// Drop elements whose silence weight is 0 before evaluating.
    pub exclude_zero_weight_elements: bool,
    /// Unit-norm check on retained rows; `None` evaluates the formula for
    /// arbitrary `V` (used by finite-difference checks).
    pub norm_tolerance: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weighting: Weighting::PartitionSize, exclude_zero_weight_elements: true, norm_tolerance: Some(UNIT_NORM_TOLERANCE) }
    }
}

/// `d_i = |{j : y_j = y_i}|`.
pub fn partition_sizes(y: &PartitionLabels) -> Vec<usize> {
    let mut counts = vec![0usize; y.num_classes()];
    for &c in y.classes() {
        counts[c] += 1;
    }
    y.classes().iter().map(|&c| counts[c]).collect()
}

/// Retained rows and their per-row scale `a_n` (the diagonal of `D^{-1/2}`,
/// or 1 when unweighted).
struct Retained {
    rows: Vec<usize>,
    classes: Vec<usize>,
    scale: Vec<f64>,
    num_classes: usize,
}

fn retain(v: &Matrix, y: &PartitionLabels, cfg: &LossConfig, weights: Option<&[bool]>) -> Result<Retained> {
    if v.rows() != y.len() {
        return Err(Error::Shape(format!("{} embedding rows but {} labels", v.rows(), y.len())));
    }
    let rows: Vec<usize> = match (weights, cfg.exclude_zero_weight_elements) {
        (Some(w), true) => {
            if w.len() != y.len() {
                return Err(Error::Shape(format!("{} weights for {} elements", w.len(), y.len())));
            }
            (0..y.len()).filter(|&n| w[n]).collect()
        }
        _ => (0..y.len()).collect(),
    };
    if let Some(tol) = cfg.norm_tolerance {
        check_unit_rows(v, Some(&rows), tol)?;
    }
    let classes: Vec<usize> = rows.iter().map(|&n| y.class(n)).collect();
    let mut counts = vec![0usize; y.num_classes()];
    for &c in &classes {
        counts[c] += 1;
    }
    let scale = match cfg.weighting {
        Weighting::PartitionSize => classes.iter().map(|&c| 1.0 / (counts[c] as f64).sqrt()).collect(),
        Weighting::Unweighted => vec![1.0; rows.len()],
    };
    Ok(Retained { rows, classes, scale, num_classes: y.num_classes() })
}

/// Reference implementation summing over all N² pairs, self-pairs included.
pub fn loss_naive(v: &Matrix, y: &PartitionLabels, cfg: &LossConfig, weights: Option<&[bool]>) -> Result<f64> {
    let r = retain(v, y, cfg, weights)?;
    let mut total = 0.0;
    for (i, &ni) in r.rows.iter().enumerate() {
        let vi = v.row(ni);
        let mut acc = 0.0;
        for (j, &nj) in r.rows.iter().enumerate() {
            let target = if r.classes[i] == r.classes[j] { 1.0 } else { 0.0 };
            let diff = dot(vi, v.row(nj)) - target;
            acc += r.scale[j] * diff * diff;
        }
        total += r.scale[i] * acc;
    }
    Ok(total)
}

/// Products shared by the low-rank loss and its gradient.
struct LowRank {
    /// `Vᵀ D^{-1/2} V`, K × K.
    vav: Matrix,
    /// Row `c` is `Σ_{n∈c} a_n v_n`, i.e. `(Yᵀ D^{-1/2} V)`, C × K.
    yav: Matrix,
    /// Diagonal of `Yᵀ D^{-1/2} Y` (it is diagonal since `Y` is one-hot).
    yay: Vec<f64>,
}

fn low_rank_products(v: &Matrix, r: &Retained) -> LowRank {
    let k = v.cols();
    // rows scaled by sqrt(a_n) so that VᵀAV = (√A V)ᵀ(√A V)
    let mut scaled = Matrix::zeros(r.rows.len(), k);
    for (i, &n) in r.rows.iter().enumerate() {
        let s = r.scale[i].sqrt();
        for (o, x) in scaled.row_mut(i).iter_mut().zip(v.row(n)) {
            *o = s * x;
        }
    }
    let mut vav = Matrix::zeros(k, k);
    gemm(Op::T, Op::N, k, r.rows.len(), k, 1.0, scaled.as_slice(), scaled.as_slice(), 0.0, vav.as_mut_slice());
    let mut yav = Matrix::zeros(r.num_classes, k);
    let mut yay = vec![0.0; r.num_classes];
    for (i, &n) in r.rows.iter().enumerate() {
        let c = r.classes[i];
        yay[c] += r.scale[i];
        let a = r.scale[i];
        for (o, x) in yav.row_mut(c).iter_mut().zip(v.row(n)) {
            *o += a * x;
        }
    }
    LowRank { vav, yav, yay }
}

fn low_rank_value(p: &LowRank) -> f64 {
    p.vav.frobenius_sq() - 2.0 * p.yav.frobenius_sq() + p.yay.iter().map(|x| x * x).sum::<f64>()
}

/// `‖VᵀD^{-1/2}V‖² − 2‖VᵀD^{-1/2}Y‖² + ‖YᵀD^{-1/2}Y‖²`, never forming an
/// N × N matrix.
pub fn loss_lowrank(v: &Matrix, y: &PartitionLabels, cfg: &LossConfig, weights: Option<&[bool]>) -> Result<f64> {
    let r = retain(v, y, cfg, weights)?;
    Ok(low_rank_value(&low_rank_products(v, &r)))
}

/// `∂C/∂V = 4 D^{-1/2} V (VᵀD^{-1/2}V) − 4 D^{-1/2} Y (YᵀD^{-1/2}V)`, N × K.
/// Rows excluded by the silence weights get a zero gradient.
pub fn loss_gradient(v: &Matrix, y: &PartitionLabels, cfg: &LossConfig, weights: Option<&[bool]>) -> Result<Matrix> {
    loss_and_gradient(v, y, cfg, weights).map(|(_, g)| g)
}

/// Loss and gradient from one pass over the shared low-rank products.
pub fn loss_and_gradient(
    v: &Matrix,
    y: &PartitionLabels,
    cfg: &LossConfig,
    weights: Option<&[bool]>,
) -> Result<(f64, Matrix)> {
    let r = retain(v, y, cfg, weights)?;
    let p = low_rank_products(v, &r);
    let k = v.cols();
    let mut grad = Matrix::zeros(v.rows(), k);
    for (i, &n) in r.rows.iter().enumerate() {
        let vn = v.row(n);
        let u = p.yav.row(r.classes[i]);
        let a4 = 4.0 * r.scale[i];
        let g = grad.row_mut(n);
        for (col, gk) in g.iter_mut().enumerate() {
            // VᵀAV is symmetric, so (v_n M)_k = (M v_n)_k
            *gk = a4 * (dot(p.vav.row(col), vn) - u[col]);
        }
    }
    Ok((low_rank_value(&p), grad))
}
