//! Little-endian tagged binary container shared by checkpoints, NMF bases
//! and feature caches.
//!
//! Layout: magic, `u32` version, `u32` field count, fields as
//! `(u32 name length, name, u8 kind, value)`, `u32` tensor count, tensors as
//! `(u32 name length, name, u32 rank, u64 dims…, f64 values…)`.

use std::path::Path;

use dclust_core::clustering::ClusteringStrategy;
use dclust_core::dataset::{PartitionLabels, SegmentBatch, SegmentOrigin};
use dclust_core::network::{
    EmbeddingModel, FeatureNormalizer, ModelParams, NetworkSpec, OptimizerConfig, OptimizerState, OutputActivation, Tensor,
};
use dclust_core::nmf::NmfBases;
use dclust_core::Matrix;

use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8] = b"DCNET1";
pub const BASES_MAGIC: &[u8] = b"DCNMF1";
pub const FEATURES_MAGIC: &[u8] = b"DCFEAT1";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    U64(u64),
    F64(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub fields: Vec<(String, Value)>,
    pub tensors: Vec<Tensor>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(AppError::format(self.path, format!("truncated at byte {}", self.at)));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| AppError::format(self.path, "name is not UTF-8"))
    }
}

impl Container {
    pub fn field(&self, name: &str) -> Option<&Value> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn push(&mut self, name: &str, value: Value) {
        self.fields.push((name.into(), value));
    }

    pub fn to_bytes(&self, magic: &[u8]) -> Vec<u8> {
        let mut out = magic.to_vec();
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((self.fields.len() as u32).to_le_bytes());
        for (name, value) in &self.fields {
            put_str(&mut out, name);
            match value {
                Value::U64(v) => {
                    out.push(0);
                    out.extend(v.to_le_bytes());
                }
                Value::F64(v) => {
                    out.push(1);
                    out.extend(v.to_le_bytes());
                }
                Value::Str(s) => {
                    out.push(2);
                    put_str(&mut out, s);
                }
            }
        }
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend((t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend((d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        let found = r.take(magic.len()).map_err(|_| AppError::format(path, "file too short for a header"))?;
        if found != magic {
            return Err(AppError::format(
                path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(magic)),
            ));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(AppError::format(path, format!("format version {version}, this build reads {FORMAT_VERSION}")));
        }
        let mut c = Container::default();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let value = match r.u8()? {
                0 => Value::U64(r.u64()?),
                1 => Value::F64(r.f64()?),
                2 => Value::Str(r.string()?),
                k => return Err(AppError::format(path, format!("field {name}: unknown kind {k}"))),
            };
            c.fields.push((name, value));
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = count.filter(|&n| n.saturating_mul(8) <= bytes.len()).ok_or_else(|| AppError::format(path, format!("tensor {name}: implausible shape {dims:?}")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            c.tensors.push(Tensor { name, dims, data });
        }
        if r.at != bytes.len() {
            return Err(AppError::format(path, format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(c)
    }

    pub fn read(path: &Path, magic: &[u8]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::from_bytes(&bytes, magic, path)
    }

    pub fn write(&self, path: &Path, magic: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        // write then rename so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes(magic)).map_err(|e| AppError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
    }

    fn u64(&self, name: &str, path: &Path) -> Result<u64> {
        match self.field(name) {
            Some(Value::U64(v)) => Ok(*v),
            _ => Err(AppError::format(path, format!("missing integer field {name}"))),
        }
    }

    fn f64(&self, name: &str, path: &Path) -> Result<f64> {
        match self.field(name) {
            Some(Value::F64(v)) => Ok(*v),
            _ => Err(AppError::format(path, format!("missing real field {name}"))),
        }
    }

    fn str(&self, name: &str, path: &Path) -> Result<&str> {
        match self.field(name) {
            Some(Value::Str(v)) => Ok(v),
            _ => Err(AppError::format(path, format!("missing text field {name}"))),
        }
    }

    fn take_tensor(&mut self, name: &str, path: &Path) -> Result<Tensor> {
        let i = self.tensors.iter().position(|t| t.name == name).ok_or_else(|| AppError::format(path, format!("missing tensor {name}")))?;
        Ok(self.tensors.remove(i))
    }
}

/// Model plus the training state needed to resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub optimizer: Option<OptimizerState>,
    /// Completed epochs.
    pub epoch: u64,
    pub validation_loss: Option<f64>,
}

const VELOCITY_PREFIX: &str = "velocity.";

fn activation_name(a: OutputActivation) -> &'static str {
    match a {
        OutputActivation::Tanh => "tanh",
        OutputActivation::Logistic => "logistic",
    }
}

pub fn parse_activation(s: &str) -> dclust_core::Result<OutputActivation> {
    match s {
        "tanh" => Ok(OutputActivation::Tanh),
        "logistic" => Ok(OutputActivation::Logistic),
        _ => Err(dclust_core::Error::Config(format!("unknown activation {s:?}"))),
    }
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let spec = self.model.spec();
        let mut c = Container::default();
        c.push("input_dim", Value::U64(spec.input_dim as u64));
        c.push("blstm_layers", Value::U64(spec.blstm_layers as u64));
        c.push("hidden_per_direction", Value::U64(spec.hidden_per_direction as u64));
        c.push("embedding_dim", Value::U64(spec.embedding_dim as u64));
        c.push("output_activation", Value::Str(activation_name(spec.output_activation).into()));
        c.push("segment_len", Value::U64(spec.segment_len as u64));
        c.push("epoch", Value::U64(self.epoch));
        if let Some(v) = self.validation_loss {
            c.push("validation_loss", Value::F64(v));
        }
        c.tensors.extend(self.model.params.tensors().iter().cloned());
        let n = spec.input_dim;
        c.tensors.push(Tensor { name: "input.mean".into(), dims: vec![n], data: self.model.normalizer.mean.clone() });
        c.tensors.push(Tensor { name: "input.scale".into(), dims: vec![n], data: self.model.normalizer.scale.clone() });
        if let Some(opt) = &self.optimizer {
            c.push("step", Value::U64(opt.step));
            c.push("learning_rate", Value::F64(opt.config.learning_rate));
            c.push("momentum", Value::F64(opt.config.momentum));
            c.push("weight_noise_std", Value::F64(opt.config.weight_noise_std));
            c.push("optimizer_seed", Value::U64(opt.config.seed));
            for t in opt.velocity.tensors() {
                c.tensors.push(Tensor { name: format!("{VELOCITY_PREFIX}{}", t.name), ..t.clone() });
            }
        }
        c
    }

    pub fn from_container(mut c: Container, path: &Path) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim: c.u64("input_dim", path)? as usize,
            blstm_layers: c.u64("blstm_layers", path)? as usize,
            hidden_per_direction: c.u64("hidden_per_direction", path)? as usize,
            embedding_dim: c.u64("embedding_dim", path)? as usize,
            output_activation: parse_activation(c.str("output_activation", path)?)?,
            segment_len: c.u64("segment_len", path)? as usize,
        };
        spec.validate()?;
        let epoch = c.u64("epoch", path)?;
        let validation_loss = c.f64("validation_loss", path).ok();
        let mean = c.take_tensor("input.mean", path)?.data;
        let scale = c.take_tensor("input.scale", path)?.data;
        let (velocity, params): (Vec<Tensor>, Vec<Tensor>) = c.tensors.drain(..).partition(|t| t.name.starts_with(VELOCITY_PREFIX));
        let params = ModelParams::from_tensors(spec, params)?;
        let model = EmbeddingModel::new(params, FeatureNormalizer { mean, scale })?;
        let optimizer = if velocity.is_empty() {
            None
        } else {
            let config = OptimizerConfig {
                learning_rate: c.f64("learning_rate", path)?,
                momentum: c.f64("momentum", path)?,
                weight_noise_std: c.f64("weight_noise_std", path)?,
                seed: c.u64("optimizer_seed", path)?,
            };
            let velocity = velocity
                .into_iter()
                .map(|t| Tensor { name: t.name[VELOCITY_PREFIX.len()..].to_string(), ..t })
                .collect();
            Some(OptimizerState { config, velocity: ModelParams::from_tensors(spec, velocity)?, step: c.u64("step", path)? })
        };
        Ok(Self { model, optimizer, epoch, validation_loss })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path, CHECKPOINT_MAGIC)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path, CHECKPOINT_MAGIC)?, path)
    }
}

pub fn save_bases(path: &Path, bases: &NmfBases) -> Result<()> {
    let mut c = Container::default();
    c.push("source_id", Value::Str(bases.source_id.clone()));
    c.push("context", Value::U64(bases.context as u64));
    c.tensors.push(Tensor { name: "basis".into(), dims: vec![bases.basis.rows(), bases.basis.cols()], data: bases.basis.as_slice().to_vec() });
    c.write(path, BASES_MAGIC)
}

pub fn load_bases(path: &Path) -> Result<NmfBases> {
    let mut c = Container::read(path, BASES_MAGIC)?;
    let source_id = c.str("source_id", path)?.to_string();
    let context = c.u64("context", path)? as usize;
    let t = c.take_tensor("basis", path)?;
    if t.dims.len() != 2 {
        return Err(AppError::format(path, format!("basis has rank {}", t.dims.len())));
    }
    let bases = NmfBases { basis: Matrix::from_vec(t.dims[0], t.dims[1], t.data)?, context, source_id };
    bases.validate()?;
    Ok(bases)
}

/// Cached training segments.
pub fn save_segments(path: &Path, segments: &[SegmentBatch]) -> Result<()> {
    let mut c = Container::default();
    c.push("count", Value::U64(segments.len() as u64));
    for (i, s) in segments.iter().enumerate() {
        c.push(&format!("{i}.mixture_id"), Value::Str(s.origin.mixture_id.clone()));
        c.push(&format!("{i}.start_frame"), Value::U64(s.origin.start_frame as u64));
        c.push(&format!("{i}.num_classes"), Value::U64(s.labels.num_classes() as u64));
        let n = s.labels.len();
        c.tensors.push(Tensor { name: format!("{i}.features"), dims: vec![s.frames(), s.bins()], data: s.features.as_slice().to_vec() });
        c.tensors.push(Tensor { name: format!("{i}.labels"), dims: vec![n], data: s.labels.classes().iter().map(|&l| l as f64).collect() });
        c.tensors.push(Tensor { name: format!("{i}.weights"), dims: vec![n], data: s.weights.iter().map(|&w| w as u8 as f64).collect() });
    }
    c.write(path, FEATURES_MAGIC)
}

pub fn load_segments(path: &Path) -> Result<Vec<SegmentBatch>> {
    let mut c = Container::read(path, FEATURES_MAGIC)?;
    let count = c.u64("count", path)? as usize;
    (0..count)
        .map(|i| {
            let f = c.take_tensor(&format!("{i}.features"), path)?;
            if f.dims.len() != 2 {
                return Err(AppError::format(path, format!("segment {i}: features have rank {}", f.dims.len())));
            }
            let labels = c.take_tensor(&format!("{i}.labels"), path)?.data.iter().map(|&l| l as usize).collect();
            let weights = c.take_tensor(&format!("{i}.weights"), path)?.data.iter().map(|&w| w != 0.0).collect();
            Ok(SegmentBatch {
                features: Matrix::from_vec(f.dims[0], f.dims[1], f.data)?,
                labels: PartitionLabels::new(labels, c.u64(&format!("{i}.num_classes"), path)? as usize)?,
                weights,
                origin: SegmentOrigin {
                    mixture_id: c.str(&format!("{i}.mixture_id"), path)?.to_string(),
                    start_frame: c.u64(&format!("{i}.start_frame"), path)? as usize,
                },
            })
        })
        .collect()
}

/// Strategy names as written in reports and accepted on the command line.
pub fn parse_strategy(s: &str) -> Result<ClusteringStrategy> {
    Ok(ClusteringStrategy::parse(s)?)
}
