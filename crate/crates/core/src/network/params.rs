use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::NetworkSpec;
use crate::error::{Error, Result};

/// Variance of the i.i.d. normal initialisation of every weight and bias.
pub const INIT_VARIANCE: f64 = 0.1;

/// Named dense parameter tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: String, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self { name, dims, data: vec![0.0; len] }
    }
}

/// Layer parameters in a fixed order: for each BLSTM layer, the forward then
/// backward direction's `w_in` (4H × in), `w_rec` (4H × H) and `bias` (4H),
/// gate blocks ordered input, forget, cell, output; then the output layer
/// `weight` (F·K × 2H) and `bias` (F·K).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: NetworkSpec,
    tensors: Vec<Tensor>,
}

const DIRECTION_NAMES: [&str; 2] = ["fwd", "bwd"];
const LSTM_TENSORS: [&str; 3] = ["w_in", "w_rec", "bias"];

fn layout(spec: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let h = spec.hidden_per_direction;
    let mut out = Vec::new();
    for layer in 0..spec.blstm_layers {
        let input = spec.layer_input_dim(layer);
        for dir in DIRECTION_NAMES {
            out.push((format!("blstm{layer}.{dir}.w_in"), vec![4 * h, input]));
            out.push((format!("blstm{layer}.{dir}.w_rec"), vec![4 * h, h]));
            out.push((format!("blstm{layer}.{dir}.bias"), vec![4 * h]));
        }
    }
    out.push(("out.weight".into(), vec![spec.output_width(), 2 * h]));
    out.push(("out.bias".into(), vec![spec.output_width()]));
    out
}

impl ModelParams {
    /// All-zero parameters with the layout implied by `spec`.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let tensors = layout(&spec).into_iter().map(|(n, d)| Tensor::zeros(n, d)).collect();
        Ok(Self { spec, tensors })
    }

    /// Adopt externally supplied tensors, checking names and shapes against
    /// the layout; the error names the first offending tensor.
    pub fn from_tensors(spec: NetworkSpec, tensors: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = layout(&spec);
        if tensors.len() != expected.len() {
            return Err(Error::Shape(format!(
                "network needs {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (t, (name, dims)) in tensors.iter().zip(&expected) {
            if &t.name != name {
                return Err(Error::Shape(format!("expected tensor {name}, found {}", t.name)));
            }
            if &t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!("layer {name}: shape {:?}, expected {dims:?}", t.dims)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Precondition(format!("layer {name} has non-finite values")));
            }
        }
        Ok(Self { spec, tensors })
    }

    #[inline]
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    #[inline]
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    #[inline]
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            spec: self.spec,
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.name.clone(), t.dims.clone())).collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Same-named tensor with matching shape in both sets, for warm starts
    /// that differ only in non-shape fields (e.g. activation).
    pub fn check_compatible(&self, other: &NetworkSpec) -> Result<()> {
        let theirs = layout(other);
        for (t, (name, dims)) in self.tensors.iter().zip(&theirs) {
            if &t.name != name || &t.dims != dims {
                return Err(Error::Shape(format!(
                    "layer {}: checkpoint shape {:?}, configuration expects {name} {dims:?}",
                    t.name, t.dims
                )));
            }
        }
        if self.tensors.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, configuration expects {}",
                self.tensors.len(),
                theirs.len()
            )));
        }
        Ok(())
    }

    /// Reinterpret under a spec with identical tensor shapes.
    pub fn with_spec(mut self, spec: NetworkSpec) -> Result<Self> {
        self.check_compatible(&spec)?;
        self.spec = spec;
        Ok(self)
    }

    #[inline]
    pub(super) fn lstm_index(&self, layer: usize, dir: usize, which: usize) -> usize {
        (layer * 2 + dir) * LSTM_TENSORS.len() + which
    }

    pub(super) fn lstm(&self, layer: usize, dir: usize) -> (&Tensor, &Tensor, &Tensor) {
        let i = self.lstm_index(layer, dir, 0);
        (&self.tensors[i], &self.tensors[i + 1], &self.tensors[i + 2])
    }

    pub(super) fn lstm_mut(&mut self, layer: usize, dir: usize) -> (&mut Tensor, &mut Tensor, &mut Tensor) {
        let i = self.lstm_index(layer, dir, 0);
        let [a, b, c] = &mut self.tensors[i..i + 3] else { unreachable!() };
        (a, b, c)
    }

    pub(super) fn output_layer(&self) -> (&Tensor, &Tensor) {
        let n = self.tensors.len();
        (&self.tensors[n - 2], &self.tensors[n - 1])
    }

    pub(super) fn output_layer_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        let n = self.tensors.len();
        let [a, b] = &mut self.tensors[n - 2..] else { unreachable!() };
        (a, b)
    }
}

/// Every weight and bias drawn from `N(0, INIT_VARIANCE)`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(*spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_VARIANCE.sqrt()).expect("valid normal");
    for v in params.values_mut() {
        *v = normal.sample(&mut rng);
    }
    Ok(params)
}
