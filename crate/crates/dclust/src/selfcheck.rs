//! Numerical oracle suite behind `dclust selfcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dclust_core::clustering::{oracle_permutation, permutation_cost};
use dclust_core::dataset::PartitionLabels;
use dclust_core::eval::{sdr, sdr_improvement, SdrMode};
use dclust_core::linalg::{permutations, Matrix};
use dclust_core::network::{backward, forward, init_params, NetworkSpec};
use dclust_core::objective::{loss_gradient, loss_lowrank, loss_naive, LossConfig, Weighting};
use dclust_core::signal::{istft, stft, StftConfig, Waveform};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst error over all cases, in the check's own unit.
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    /// SNR checks pass when the worst value is at least the tolerance.
    pub fn passed(&self) -> bool {
        if self.name == "stft_round_trip_snr_db" {
            self.max_error >= self.tolerance
        } else {
            self.max_error <= self.tolerance
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckOptions {
    pub seed: u64,
    /// Test hook: perturb analytic gradients so the finite-difference
    /// checks must fail.
    pub corrupt_gradient: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let mut v = Matrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
    for r in 0..n {
        let norm = v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        v.row_mut(r).iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> PartitionLabels {
    // every class present
    let classes = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
    PartitionLabels::new(classes, c).expect("labels in range")
}

fn loss_equivalence(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    let cases = 60;
    for i in 0..cases {
        let n = rng.random_range(10..=200);
        let k = [5, 10, 20, 40, 60][i % 5];
        let c = rng.random_range(2..=4);
        let v = unit_rows(rng, n, k);
        let y = random_labels(rng, n, c);
        let w: Vec<bool> = (0..n).map(|j| j < c || rng.random_bool(0.8)).collect();
        let cfg = LossConfig { weighting: if i % 2 == 0 { Weighting::PartitionSize } else { Weighting::Unweighted }, ..LossConfig::default() };
        let naive = loss_naive(&v, &y, &cfg, Some(&w)).expect("valid instance");
        let low = loss_lowrank(&v, &y, &cfg, Some(&w)).expect("valid instance");
        worst = worst.max((low - naive).abs() / naive.abs().max(1e-12));
    }
    CheckResult { name: "loss_lowrank_vs_naive", max_error: worst, tolerance: 1e-6, cases }
}

fn loss_gradient_fd(rng: &mut ChaCha8Rng, corrupt: bool) -> CheckResult {
    let h = 1e-5;
    let cases = 20;
    let mut worst = 0.0f64;
    let cfg = LossConfig { norm_tolerance: None, ..LossConfig::default() };
    for _ in 0..cases {
        let n = rng.random_range(4..=30);
        let k = rng.random_range(2..=6);
        let v = Matrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        let c = rng.random_range(2..=3);
        let y = random_labels(rng, n, c);
        let mut g = loss_gradient(&v, &y, &cfg, None).expect("valid instance");
        if corrupt {
            g.as_mut_slice()[0] += 1.0;
        }
        for idx in 0..n * k {
            let mut p = v.clone();
            p.as_mut_slice()[idx] += h;
            let mut m = v.clone();
            m.as_mut_slice()[idx] -= h;
            let fd = (loss_naive(&p, &y, &cfg, None).unwrap() - loss_naive(&m, &y, &cfg, None).unwrap()) / (2.0 * h);
            worst = worst.max(rel_err(g.as_slice()[idx], fd));
        }
    }
    CheckResult { name: "loss_gradient_vs_finite_differences", max_error: worst, tolerance: 1e-4, cases }
}

fn network_gradient_fd(rng: &mut ChaCha8Rng, corrupt: bool) -> CheckResult {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for layers in [1, 2] {
        let spec = NetworkSpec { input_dim: 3, blstm_layers: layers, hidden_per_direction: 2, embedding_dim: 2, segment_len: 5, ..NetworkSpec::default() };
        let params = init_params(&spec, rng.random()).expect("valid spec");
        let x = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let up = Matrix::from_fn(15, 2, |_, _| rng.random_range(-1.0..1.0));
        let objective = |p: &dclust_core::network::ModelParams| -> f64 {
            let (v, _) = forward(p, &x).expect("forward");
            v.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = forward(&params, &x).expect("forward");
        let mut grads = backward(&params, &cache, &up).expect("backward");
        if corrupt {
            if let Some(g) = grads.values_mut().next() {
                *g += 1.0;
            }
        }
        let analytic: Vec<f64> = grads.values().copied().collect();
        for (i, a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            *p.values_mut().nth(i).expect("index in range") += h;
            let mut m = params.clone();
            *m.values_mut().nth(i).expect("index in range") -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            worst = worst.max(rel_err(*a, fd));
        }
        cases += 1;
    }
    CheckResult { name: "network_backward_vs_finite_differences", max_error: worst, tolerance: 1e-4, cases }
}

fn stft_round_trip(rng: &mut ChaCha8Rng) -> CheckResult {
    let cfg = StftConfig::default();
    let mut worst = f64::INFINITY;
    let cases = 10;
    for i in 0..cases {
        let len = rng.random_range(1000..6000);
        let samples: Vec<f64> = if i % 2 == 0 {
            (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
        } else {
            let f = rng.random_range(80.0..400.0);
            (0..len).map(|n| (1..8).map(|h| (2.0 * std::f64::consts::PI * f * h as f64 * n as f64 / 8000.0).sin() / h as f64).sum()).collect()
        };
        let w = Waveform::new(samples, 8000).expect("finite samples");
        let back = istft(&stft(&w, &cfg).expect("stft"), &cfg).expect("istft");
        let err: f64 = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.min(10.0 * (w.power() * w.len() as f64 / err.max(1e-300)).log10());
    }
    CheckResult { name: "stft_round_trip_snr_db", max_error: worst, tolerance: 60.0, cases }
}

fn permutation_audit(rng: &mut ChaCha8Rng) -> CheckResult {
    let cfg = StftConfig::default();
    let mut mismatches = 0usize;
    let mut cases = 0usize;
    for k in [2, 3] {
        for _ in 0..5 {
            let len = 64 * 30;
            let refs: Vec<Waveform> = (0..k)
                .map(|_| Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000).expect("finite"))
                .collect();
            let mixture = Waveform::sum(&refs).expect("same length");
            let x = stft(&mixture, &cfg).expect("stft");
            let specs: Vec<_> = refs.iter().map(|r| stft(r, &cfg).expect("stft")).collect();
            let starts = vec![0, 10];
            let labels: Vec<Vec<usize>> = starts.iter().map(|_| (0..10 * x.bins()).map(|_| rng.random_range(0..k)).collect()).collect();
            let chosen = oracle_permutation(&labels, &starts, k, &x, &specs).expect("k within limit");
            for ((seg, &s), perm) in labels.iter().zip(&starts).zip(&chosen) {
                let best = permutations(k)
                    .into_iter()
                    .map(|p| permutation_cost(seg, s, &p, &x, &specs))
                    .fold(f64::INFINITY, f64::min);
                if permutation_cost(seg, s, perm, &x, &specs) > best {
                    mismatches += 1;
                }
                cases += 1;
            }

            let est: Vec<Vec<f64>> = (0..k)
                .map(|j| refs[(j + 1) % k].samples().iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect())
                .collect();
            let est_refs: Vec<&[f64]> = est.iter().map(Vec::as_slice).collect();
            let ref_refs: Vec<&[f64]> = refs.iter().map(Waveform::samples).collect();
            let report = sdr_improvement(mixture.samples(), &est_refs, &ref_refs, SdrMode::ScaleInvariant).expect("valid");
            let total = |p: &[usize]| -> f64 { (0..k).map(|j| sdr(est_refs[p[j]], ref_refs[j], SdrMode::ScaleInvariant).unwrap()).sum() };
            let best = permutations(k).iter().map(|p| total(p)).fold(f64::NEG_INFINITY, f64::max);
            if total(&report.permutation) < best {
                mismatches += 1;
            }
            cases += 1;
        }
    }
    CheckResult { name: "permutation_brute_force_mismatches", max_error: mismatches as f64, tolerance: 0.0, cases }
}

pub fn run(opts: SelfcheckOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    vec![
        loss_equivalence(&mut rng),
        loss_gradient_fd(&mut rng, opts.corrupt_gradient),
        network_gradient_fd(&mut rng, opts.corrupt_gradient),
        stft_round_trip(&mut rng),
        permutation_audit(&mut rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_the_hook_breaks_it() {
        let ok = run(SelfcheckOptions::default());
        assert!(ok.iter().all(CheckResult::passed), "{ok:?}");
        let bad = run(SelfcheckOptions { corrupt_gradient: true, ..Default::default() });
        let failed: Vec<_> = bad.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
        assert_eq!(failed, ["loss_gradient_vs_finite_differences", "network_backward_vs_finite_differences"]);
    }
}
