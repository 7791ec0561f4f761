use super::*;
use crate::dataset::{PartitionLabels, SegmentBatch, SegmentOrigin};
use crate::objective::{loss_and_gradient, loss_lowrank, LossConfig};
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_spec(layers: usize) -> NetworkSpec {
    NetworkSpec {
        input_dim: 3,
        blstm_layers: layers,
        hidden_per_direction: 2,
        embedding_dim: 2,
        output_activation: OutputActivation::Tanh,
        segment_len: 5,
    }
}

fn random_features(frames: usize, bins: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(frames, bins, |_, _| rng.random_range(-2.0..1.0))
}

fn random_batch(spec: &NetworkSpec, frames: usize, classes: usize, seed: u64) -> SegmentBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let n = frames * spec.input_dim;
    SegmentBatch {
        features: random_features(frames, spec.input_dim, seed),
        labels: PartitionLabels::new((0..n).map(|_| rng.random_range(0..classes)).collect(), classes).unwrap(),
        weights: (0..n).map(|_| rng.random_bool(0.85)).collect(),
        origin: SegmentOrigin { mixture_id: String::from("t"), start_frame: 0 },
    }
}

#[test]
fn output_shape_and_unit_rows() {
    let spec = NetworkSpec { input_dim: 7, hidden_per_direction: 5, embedding_dim: 4, ..NetworkSpec::default() };
    let params = init_params(&spec, 1).unwrap();
    let (v, _) = forward(&params, &random_features(12, 7, 2)).unwrap();
    assert_eq!((v.rows(), v.cols()), (12 * 7, 4));
    for row in v.iter_rows() {
        assert!((dot(row, row).sqrt() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn logistic_embeddings_are_non_negative() {
    let spec = NetworkSpec { input_dim: 6, hidden_per_direction: 3, embedding_dim: 5, output_activation: OutputActivation::Logistic, ..NetworkSpec::default() };
    let params = init_params(&spec, 3).unwrap();
    let (v, cache) = forward(&params, &random_features(9, 6, 4)).unwrap();
    assert!(cache.activations.as_slice().iter().all(|&a| a > 0.0 && a < 1.0));
    assert!(v.as_slice().iter().all(|&x| x >= 0.0));
}

#[test]
fn feature_width_mismatch_is_a_shape_error() {
    let params = init_params(&tiny_spec(1), 0).unwrap();
    assert!(matches!(forward(&params, &random_features(5, 4, 0)), Err(Error::Shape(_))));
}

/// Swap forward/backward parameters in every layer and permute the columns
/// that consume the concatenated `[fwd, bwd]` states accordingly.
fn mirrored(params: &ModelParams) -> ModelParams {
    let spec = *params.spec();
    let h = spec.hidden_per_direction;
    let mut out = params.clone();
    let swap_halves = |t: &mut Tensor| {
        let cols = t.dims[1];
        for row in t.data.chunks_exact_mut(cols) {
            let (a, b) = row.split_at_mut(h);
            a.swap_with_slice(b);
        }
    };
    for layer in 0..spec.blstm_layers {
        for which in 0..3 {
            let f = params.lstm_index(layer, 0, which);
            let b = params.lstm_index(layer, 1, which);
            out.tensors_mut().swap(f, b);
            // names stay with their slot
            let (nf, nb) = (params.tensors()[f].name.clone(), params.tensors()[b].name.clone());
            out.tensors_mut()[f].name = nf;
            out.tensors_mut()[b].name = nb;
        }
        if layer > 0 {
            for dir in 0..2 {
                let i = params.lstm_index(layer, dir, 0);
                swap_halves(&mut out.tensors_mut()[i]);
            }
        }
    }
    let n = out.tensors().len();
    swap_halves(&mut out.tensors_mut()[n - 2]);
    out
}

#[test]
fn time_reversal_with_mirrored_directions_reverses_embeddings() {
    for layers in [1, 2] {
        let spec = NetworkSpec { input_dim: 4, blstm_layers: layers, hidden_per_direction: 3, embedding_dim: 3, output_activation: OutputActivation::Tanh, segment_len: 6 };
        let params = init_params(&spec, 10 + layers as u64).unwrap();
        let x = random_features(6, 4, 5);
        let reversed = Matrix::from_fn(6, 4, |t, f| x.get(5 - t, f));
        let (v, _) = forward(&params, &x).unwrap();
        let (vr, _) = forward(&mirrored(&params), &reversed).unwrap();
        for t in 0..6 {
            for f in 0..4 {
                for k in 0..3 {
                    let a = v.get(t * 4 + f, k);
                    let b = vr.get((5 - t) * 4 + f, k);
                    assert!((a - b).abs() < 1e-12, "layers {layers}, t {t}");
                }
            }
        }
    }
}

fn objective(params: &ModelParams, batch: &SegmentBatch) -> f64 {
    let (v, _) = forward(params, &batch.features).unwrap();
    loss_lowrank(&v, &batch.labels, &LossConfig::default(), Some(&batch.weights)).unwrap()
}

#[test]
fn backward_matches_central_differences_for_every_tensor() {
    for layers in [1, 2] {
        let spec = tiny_spec(layers);
        let params = init_params(&spec, 20 + layers as u64).unwrap();
        let batch = random_batch(&spec, 5, 2, 7);
        let (v, cache) = forward(&params, &batch.features).unwrap();
        let (_, dv) = loss_and_gradient(&v, &batch.labels, &LossConfig::default(), Some(&batch.weights)).unwrap();
        let grads = backward(&params, &cache, &dv).unwrap();
        let step = 1e-5;
        for (ti, tensor) in params.tensors().iter().enumerate() {
            let mut worst = 0.0f64;
            for i in 0..tensor.data.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].data[i] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].data[i] -= step;
                let fd = (objective(&plus, &batch) - objective(&minus, &batch)) / (2.0 * step);
                let an = grads.tensors()[ti].data[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst <= 1e-4, "{} (layers {layers}): {worst}", tensor.name);
        }
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let spec = tiny_spec(2);
    let params = init_params(&spec, 4).unwrap();
    let (v, cache) = forward(&params, &random_features(5, 3, 1)).unwrap();
    let grads = backward(&params, &cache, &Matrix::zeros(v.rows(), v.cols())).unwrap();
    assert!(grads.values().all(|&g| g == 0.0));
}

#[test]
fn normalisation_gradient_is_orthogonal_to_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dot(&z, &z).sqrt();
        let v: Vec<f64> = z.iter().map(|x| x / norm).collect();
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut out = [0.0; 6];
        normalize_backward(&v, &u, norm, &mut out);
        assert!(dot(&v, &out).abs() < 1e-14);
    }
    // upstream gradient along the embeddings themselves cannot move the loss
    let spec = tiny_spec(1);
    let params = init_params(&spec, 5).unwrap();
    let (v, cache) = forward(&params, &random_features(5, 3, 2)).unwrap();
    let grads = backward(&params, &cache, &v).unwrap();
    assert!(grads.values().all(|g| g.abs() < 1e-12));
}

#[test]
fn backward_rejects_mismatched_cache() {
    let params = init_params(&tiny_spec(1), 1).unwrap();
    let other = init_params(&tiny_spec(2), 1).unwrap();
    let (v, cache) = forward(&params, &random_features(5, 3, 1)).unwrap();
    assert!(matches!(backward(&other, &cache, &v), Err(Error::State(_))));
    assert!(matches!(backward(&params, &cache, &Matrix::zeros(3, 2)), Err(Error::State(_))));
}

#[test]
fn initialisation_is_seeded_with_expected_variance() {
    let spec = NetworkSpec::default();
    let a = init_params(&spec, 99).unwrap();
    assert_eq!(a, init_params(&spec, 99).unwrap());
    assert_ne!(a, init_params(&spec, 100).unwrap());
    let w = &a.tensor("out.weight").unwrap().data;
    assert!(w.len() >= 100_000);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (w.len() - 1) as f64;
    assert!((var - INIT_VARIANCE).abs() <= 0.05 * INIT_VARIANCE, "{var}");
}

#[test]
fn from_tensors_names_the_offending_layer() {
    let params = init_params(&tiny_spec(2), 1).unwrap();
    let mut tensors = params.clone().into_tensors();
    tensors[4].dims = alloc::vec![8, 5];
    let err = ModelParams::from_tensors(tiny_spec(2), tensors).unwrap_err();
    assert!(matches!(&err, Error::Shape(m) if m.contains("blstm0.bwd.w_rec")), "{err}");
    let wide = NetworkSpec { hidden_per_direction: 3, ..tiny_spec(2) };
    let err = params.check_compatible(&wide).unwrap_err();
    assert!(matches!(&err, Error::Shape(m) if m.contains("blstm0.fwd.w_in")), "{err}");
}

#[test]
fn noise_free_zero_rate_step_is_identity() {
    let spec = tiny_spec(2);
    let mut params = init_params(&spec, 2).unwrap();
    let before = params.clone();
    let batch = random_batch(&spec, 5, 2, 3);
    let cfg = OptimizerConfig { learning_rate: 0.0, weight_noise_std: 0.0, ..OptimizerConfig::default() };
    let mut state = OptimizerState::new(cfg, &params).unwrap();
    let loss = train_step(&mut params, &mut state, &batch, &LossConfig::default()).unwrap();
    assert_eq!(params, before);
    assert_eq!(loss, evaluate_loss(&params, &batch, &LossConfig::default()).unwrap());
}

#[test]
fn noisy_training_is_deterministic_and_keeps_noise_out_of_weights() {
    let spec = tiny_spec(1);
    let batch = random_batch(&spec, 5, 2, 4);
    let run = || {
        let mut params = init_params(&spec, 3).unwrap();
        let cfg = OptimizerConfig { learning_rate: 1e-3, seed: 77, ..OptimizerConfig::default() };
        let mut state = OptimizerState::new(cfg, &params).unwrap();
        let losses: Vec<f64> = (0..5).map(|_| train_step(&mut params, &mut state, &batch, &LossConfig::default()).unwrap()).collect();
        (params, losses)
    };
    let (p1, l1) = run();
    let (p2, l2) = run();
    assert_eq!(p1, p2);
    assert_eq!(l1, l2);
    // with lr 0 the clean weights must come back untouched despite noise
    let mut params = init_params(&spec, 3).unwrap();
    let before = params.clone();
    let cfg = OptimizerConfig { learning_rate: 0.0, seed: 1, ..OptimizerConfig::default() };
    let mut state = OptimizerState::new(cfg, &params).unwrap();
    train_step(&mut params, &mut state, &batch, &LossConfig::default()).unwrap();
    assert_eq!(params, before);
}

#[test]
fn noise_free_descent_on_a_fixed_batch() {
    let spec = NetworkSpec { input_dim: 8, blstm_layers: 2, hidden_per_direction: 4, embedding_dim: 3, output_activation: OutputActivation::Tanh, segment_len: 10 };
    let mut params = init_params(&spec, 6).unwrap();
    let batch = random_batch(&spec, 10, 2, 9);
    let cfg = OptimizerConfig { learning_rate: 1e-3, weight_noise_std: 0.0, ..OptimizerConfig::default() };
    let mut state = OptimizerState::new(cfg, &params).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| train_step(&mut params, &mut state, &batch, &LossConfig::default()).unwrap()).collect();
    let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing as f64 >= 0.95 * 199.0, "{non_increasing}/199, {:?}", &losses[..10]);
    assert!(losses[199] < losses[0]);
}
