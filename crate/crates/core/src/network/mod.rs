//! BLSTM embedding network: stacked bidirectional LSTM layers, a
//! feed-forward layer emitting `F·K` values per frame, an element-wise
//! tanh/logistic activation and row-wise unit normalisation.
//!
//! Forward keeps every intermediate needed by [`backward`], which is exact
//! reverse-mode differentiation (BPTT through both directions).

mod lstm;
mod normalize;
mod params;
mod train;

pub use normalize::{FeatureNormalizer, MIN_FEATURE_STD};
pub use params::{init_params, ModelParams, Tensor, INIT_VARIANCE};
pub use train::{evaluate_loss, train_step, OptimizerConfig, OptimizerState};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, Matrix, Op};
use crate::objective::EmbeddingMatrix;
use lstm::{DirectionCache, Direction};

/// Trained parameters together with the input standardisation they were
/// trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub params: ModelParams,
    pub normalizer: FeatureNormalizer,
}

impl EmbeddingModel {
    pub fn new(params: ModelParams, normalizer: FeatureNormalizer) -> Result<Self> {
        if normalizer.dim() != params.spec().input_dim {
            return Err(Error::Shape(format!(
                "normaliser has {} bins, network expects {}",
                normalizer.dim(),
                params.spec().input_dim
            )));
        }
        Ok(Self { params, normalizer })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.params.spec()
    }

    /// Embeddings of raw log-magnitude features.
    pub fn embed(&self, features: &Matrix) -> Result<EmbeddingMatrix> {
        embed(&self.params, &self.normalizer.apply(features)?)
    }
}

/// Element-wise activation in front of the normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    #[default]
    Tanh,
    Logistic,
}

impl OutputActivation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Tanh => x.tanh(),
            OutputActivation::Logistic => lstm::sigmoid(x),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            OutputActivation::Tanh => 1.0 - a * a,
            OutputActivation::Logistic => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Frequency bins per frame, `F`.
    pub input_dim: usize,
    pub blstm_layers: usize,
    pub hidden_per_direction: usize,
    /// `K`.
    pub embedding_dim: usize,
    pub output_activation: OutputActivation,
    pub segment_len: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: 129,
            blstm_layers: 2,
            hidden_per_direction: 64,
            embedding_dim: 20,
            output_activation: OutputActivation::Tanh,
            segment_len: crate::dataset::SEGMENT_FRAMES,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("blstm_layers", self.blstm_layers),
            ("hidden_per_direction", self.hidden_per_direction),
            ("embedding_dim", self.embedding_dim),
            ("segment_len", self.segment_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("network {name} must be at least 1")));
        }
        Ok(())
    }

    /// Input width of BLSTM layer `layer`.
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden_per_direction
        }
    }

    /// Outputs of the feed-forward layer per frame, `F·K`.
    pub fn output_width(&self) -> usize {
        self.input_dim * self.embedding_dim
    }
}

/// Pre-normalisation row norms below this map the row to `e₁`.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Intermediates retained by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    spec: NetworkSpec,
    frames: usize,
    /// Input of each BLSTM layer, `T × in_l`.
    layer_inputs: Vec<Matrix>,
    /// `[forward, backward]` per layer.
    directions: Vec<[DirectionCache; 2]>,
    /// Concatenated top-layer states, `T × 2H`.
    top: Matrix,
    /// Activation outputs, `T × F·K`.
    activations: Matrix,
    /// Norm of each activation K-row (0 marks a degenerate row).
    norms: Vec<f64>,
    embeddings: Matrix,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

fn check_finite(m: &Matrix, layer: usize, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric { layer, detail: format!("{what} contains non-finite values") })
    }
}

fn concat_directions(fwd: &Matrix, bwd: &Matrix) -> Matrix {
    let (t, h) = (fwd.rows(), fwd.cols());
    let mut out = Matrix::zeros(t, 2 * h);
    for r in 0..t {
        let row = out.row_mut(r);
        row[..h].copy_from_slice(fwd.row(r));
        row[h..].copy_from_slice(bwd.row(r));
    }
    out
}

/// Vector-Jacobian product of `z ↦ z/‖z‖` at `v = z/‖z‖`:
/// `(I − vvᵀ) dv / ‖z‖`.
pub(crate) fn normalize_backward(v: &[f64], dv: &[f64], norm: f64, out: &mut [f64]) {
    let proj = dot(v, dv);
    for ((o, &vi), &di) in out.iter_mut().zip(v).zip(dv) {
        *o = (di - vi * proj) / norm;
    }
}

/// Run the network on `T × F` log-magnitude features, producing `(T·F) × K`
/// unit-norm embeddings (frame-major rows).
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<(EmbeddingMatrix, ForwardCache)> {
    let spec = *params.spec();
    if features.cols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "features have {} bins, network expects {}",
            features.cols(),
            spec.input_dim
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Shape("no frames to embed".into()));
    }
    check_finite(features, 0, "input features")?;
    let frames = features.rows();
    let mut layer_inputs = Vec::with_capacity(spec.blstm_layers);
    let mut directions = Vec::with_capacity(spec.blstm_layers);
    let mut input = features.clone();
    for layer in 0..spec.blstm_layers {
        let fwd = lstm::forward_direction(params, layer, Direction::Forward, &input);
        let bwd = lstm::forward_direction(params, layer, Direction::Backward, &input);
        let out = concat_directions(&fwd.hidden, &bwd.hidden);
        check_finite(&out, layer, "BLSTM output")?;
        layer_inputs.push(core::mem::replace(&mut input, out));
        directions.push([fwd, bwd]);
    }
    let top = input;

    let (w, b) = params.output_layer();
    let width = spec.output_width();
    let k = spec.embedding_dim;
    let mut activations = Matrix::zeros(frames, width);
    for r in 0..frames {
        activations.row_mut(r).copy_from_slice(&b.data);
    }
    gemm(Op::N, Op::T, frames, top.cols(), width, 1.0, top.as_slice(), &w.data, 1.0, activations.as_mut_slice());
    let act = spec.output_activation;
    activations.as_mut_slice().iter_mut().for_each(|x| *x = act.apply(*x));
    check_finite(&activations, spec.blstm_layers, "output layer")?;

    let rows = frames * spec.input_dim;
    let mut norms = vec![0.0; rows];
    let mut embeddings = Matrix::zeros(rows, k);
    for (n, chunk) in activations.as_slice().chunks_exact(k).enumerate() {
        let norm = dot(chunk, chunk).sqrt();
        let out = embeddings.row_mut(n);
        if norm < DEGENERATE_NORM {
            out[0] = 1.0;
        } else {
            norms[n] = norm;
            for (o, a) in out.iter_mut().zip(chunk) {
                *o = a / norm;
            }
        }
    }
    let cache = ForwardCache { spec, frames, layer_inputs, directions, top, activations, norms, embeddings };
    let v = EmbeddingMatrix::new(cache.embeddings.clone())?;
    Ok((v, cache))
}

/// Embeddings only, without keeping the cache around.
pub fn embed(params: &ModelParams, features: &Matrix) -> Result<EmbeddingMatrix> {
    forward(params, features).map(|(v, _)| v)
}

/// Gradient of a scalar loss with respect to every parameter, given
/// `∂loss/∂V` for the embeddings produced by the cached forward pass.
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_embeddings: &Matrix) -> Result<ModelParams> {
    let spec = cache.spec;
    if *params.spec() != spec {
        return Err(Error::State("forward cache was produced by a different network".into()));
    }
    if d_embeddings.rows() != cache.embeddings.rows() || d_embeddings.cols() != cache.embeddings.cols() {
        return Err(Error::State(format!(
            "upstream gradient is {}x{}, cached embeddings are {}x{}",
            d_embeddings.rows(),
            d_embeddings.cols(),
            cache.embeddings.rows(),
            cache.embeddings.cols()
        )));
    }
    let mut grads = params.zeros_like();
    let k = spec.embedding_dim;
    let frames = cache.frames;
    let width = spec.output_width();

    // normalisation and activation: dz = act'(a) ⊙ (I − vvᵀ) dv / ‖a‖
    let mut d_pre = Matrix::zeros(frames, width);
    let act = spec.output_activation;
    for n in 0..cache.embeddings.rows() {
        let norm = cache.norms[n];
        if norm == 0.0 {
            continue;
        }
        let a = &cache.activations.as_slice()[n * k..(n + 1) * k];
        let out = &mut d_pre.as_mut_slice()[n * k..(n + 1) * k];
        normalize_backward(cache.embeddings.row(n), d_embeddings.row(n), norm, out);
        for (o, &ai) in out.iter_mut().zip(a) {
            *o *= act.derivative_from_output(ai);
        }
    }

    let two_h = cache.top.cols();
    {
        let (gw, gb) = grads.output_layer_mut();
        gemm(Op::T, Op::N, width, frames, two_h, 1.0, d_pre.as_slice(), cache.top.as_slice(), 0.0, &mut gw.data);
        for r in 0..frames {
            for (g, d) in gb.data.iter_mut().zip(d_pre.row(r)) {
                *g += d;
            }
        }
    }
    let (w_out, _) = params.output_layer();
    let mut d_top = Matrix::zeros(frames, two_h);
    gemm(Op::N, Op::N, frames, width, two_h, 1.0, d_pre.as_slice(), &w_out.data, 0.0, d_top.as_mut_slice());

    let h = spec.hidden_per_direction;
    for layer in (0..spec.blstm_layers).rev() {
        let input = &cache.layer_inputs[layer];
        let mut d_input = Matrix::zeros(frames, input.cols());
        for (dir_idx, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
            let mut d_hidden = Matrix::zeros(frames, h);
            for r in 0..frames {
                d_hidden.row_mut(r).copy_from_slice(&d_top.row(r)[dir_idx * h..(dir_idx + 1) * h]);
            }
            lstm::backward_direction(
                params,
                &mut grads,
                layer,
                dir,
                input,
                &cache.directions[layer][dir_idx],
                &d_hidden,
                &mut d_input,
            );
        }
        d_top = d_input;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests;
