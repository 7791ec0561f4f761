//! One direction of an LSTM layer (input, forget, output gates and a tanh
//! cell candidate; no peepholes) with its BPTT.

use alloc::vec;


use super::ModelParams;
use crate::linalg::{gemm, Matrix, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    /// Time index of processing step `s` out of `frames`.
    #[inline]
    fn time(self, s: usize, frames: usize) -> usize {
        match self {
            Direction::Forward => s,
            Direction::Backward => frames - 1 - s,
        }
    }
}

#[inline]
pub(super) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-time-step state, rows indexed by time (not processing order).
#[derive(Debug, Clone)]
pub(super) struct DirectionCache {
    /// Activated gates `[i, f, g, o]`, `T × 4H`.
    gates: Matrix,
    cells: Matrix,
    tanh_cells: Matrix,
    pub(super) hidden: Matrix,
}

pub(super) fn forward_direction(params: &ModelParams, layer: usize, dir: Direction, input: &Matrix) -> DirectionCache {
    let (w_in, w_rec, bias) = params.lstm(layer, dir.index());
    let h = params.spec().hidden_per_direction;
    let frames = input.rows();
    let mut gates = Matrix::zeros(frames, 4 * h);
    for r in 0..frames {
        gates.row_mut(r).copy_from_slice(&bias.data);
    }
    gemm(Op::N, Op::T, frames, input.cols(), 4 * h, 1.0, input.as_slice(), &w_in.data, 1.0, gates.as_mut_slice());

    let mut cells = Matrix::zeros(frames, h);
    let mut tanh_cells = Matrix::zeros(frames, h);
    let mut hidden = Matrix::zeros(frames, h);
    let mut prev_h = vec![0.0; h];
    let mut prev_c = vec![0.0; h];
    for s in 0..frames {
        let t = dir.time(s, frames);
        let z = gates.row_mut(t);
        // recurrent contribution W_rec · h_prev
        for (zi, wrow) in z.iter_mut().zip(w_rec.data.chunks_exact(h)) {
            *zi += wrow.iter().zip(&prev_h).map(|(w, x)| w * x).sum::<f64>();
        }
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = z[2 * h + j].tanh();
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let (c_row, tc_row, h_row) = (cells.row_mut(t), tanh_cells.row_mut(t), hidden.row_mut(t));
        for j in 0..h {
            let c = z[h + j] * prev_c[j] + z[j] * z[2 * h + j];
            c_row[j] = c;
            tc_row[j] = c.tanh();
            h_row[j] = z[3 * h + j] * tc_row[j];
        }
        prev_c.copy_from_slice(c_row);
        prev_h.copy_from_slice(h_row);
    }
    DirectionCache { gates, cells, tanh_cells, hidden }
}

/// Accumulate parameter gradients into `grads` and the input gradient into
/// `d_input`, given `∂loss/∂h_t` for every time step.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward_direction(
    params: &ModelParams,
    grads: &mut ModelParams,
    layer: usize,
    dir: Direction,
    input: &Matrix,
    cache: &DirectionCache,
    d_hidden: &Matrix,
    d_input: &mut Matrix,
) {
    let (w_in, w_rec, _) = params.lstm(layer, dir.index());
    let h = params.spec().hidden_per_direction;
    let frames = input.rows();
    let mut d_gates = Matrix::zeros(frames, 4 * h);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zero = vec![0.0; h];
    let (_, g_rec, _) = grads.lstm_mut(layer, dir.index());
    for s in (0..frames).rev() {
        let t = dir.time(s, frames);
        let (prev_c, prev_h) = if s == 0 {
            (&zero[..], &zero[..])
        } else {
            let tp = dir.time(s - 1, frames);
            (cache.cells.row(tp), cache.hidden.row(tp))
        };
        let g = cache.gates.row(t);
        let tc = cache.tanh_cells.row(t);
        let dz = d_gates.row_mut(t);
        for j in 0..h {
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let dh = d_hidden.get(t, j) + dh_next[j];
            let dc = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
            dz[j] = dc * cand * i * (1.0 - i);
            dz[h + j] = dc * prev_c[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - cand * cand);
            dz[3 * h + j] = dh * tc[j] * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        // dh_prev = W_recᵀ dz, dW_rec += dz h_prevᵀ
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        for (r, (wrow, grow)) in w_rec.data.chunks_exact(h).zip(g_rec.data.chunks_exact_mut(h)).enumerate() {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            for j in 0..h {
                dh_next[j] += wrow[j] * d;
                grow[j] += d * prev_h[j];
            }
        }
    }
    let (g_in, _, g_bias) = grads.lstm_mut(layer, dir.index());
    gemm(Op::T, Op::N, 4 * h, frames, input.cols(), 1.0, d_gates.as_slice(), input.as_slice(), 1.0, &mut g_in.data);
    for r in 0..frames {
        for (b, d) in g_bias.data.iter_mut().zip(d_gates.row(r)) {
            *b += d;
        }
    }
    gemm(Op::N, Op::N, frames, 4 * h, input.cols(), 1.0, d_gates.as_slice(), &w_in.data, 1.0, d_input.as_mut_slice());
}
