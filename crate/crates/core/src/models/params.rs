//! Named, seeded parameter storage.
//!
//! Candle's CPU device cannot be seeded, so every parameter is drawn here from
//! a ChaCha stream and wrapped in a [`Var`]. Buffers (batch-norm running
//! statistics) live in the same map but are excluded from optimisation and
//! from the parameter count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};

use crate::error::{Error, Result};

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeSet<String>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, values: Vec<f32>, shape: &[usize], buffer: bool) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Checkpoint(format!("parameter {name} defined twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        if buffer {
            self.buffers.insert(name.to_string());
        }
        Ok(out)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], mean: f32, std: f32) -> Result<Tensor> {
        let dist = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
        let n = shape.iter().product();
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name, values, shape, false)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, values, shape, false)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape, false)
    }

    /// Non-trainable state, e.g. running statistics.
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape, true)?;
        Ok(self.vars[name].clone())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Trainable variables whose name starts with `prefix`, in name order.
    pub fn trainable(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix) && !self.buffers.contains(*k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_params(&self, prefix: &str) -> usize {
        self.trainable(prefix).iter().map(|v| v.elem_count()).sum()
    }

    /// Copies every value out, for checkpointing or weight comparison.
    pub fn snapshot(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let t = v.as_tensor();
                Ok((k.clone(), (t.dims().to_vec(), t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)))
            })
            .collect()
    }

    /// Overwrites values in place. Every stored name must be present with the same shape.
    pub fn restore(&self, values: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for (name, var) in &self.vars {
            let (shape, data) = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if shape.as_slice() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    var.dims()
                )));
            }
            var.set(&Tensor::from_vec(data.clone(), shape.as_slice(), &self.device)?)?;
        }
        Ok(())
    }

    /// Writes all tensors plus string metadata to one safetensors archive.
    pub fn save(&self, path: &Path, metadata: HashMap<String, String>) -> Result<()> {
        let snap = self.snapshot()?;
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = snap
            .into_iter()
            .map(|(k, (shape, data))| {
                let raw = data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (k, shape, raw)
            })
            .collect();
        let views: Vec<(String, TensorView<'_>)> = bytes
            .iter()
            .map(|(k, shape, raw)| {
                TensorView::new(Dtype::F32, shape.clone(), raw)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<_>>()?;
        safetensors::serialize_to_file(views, Some(metadata), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads tensors saved by [`save`](Self::save); returns the metadata.
    pub fn load(&self, path: &Path) -> Result<HashMap<String, String>> {
        let (values, meta) = read_archive(path)?;
        self.restore(&values)?;
        Ok(meta)
    }
}

type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

pub fn read_archive(path: &Path) -> Result<(TensorMap, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(err)?;
    let meta = header.metadata().clone().unwrap_or_default();
    let st = safetensors::SafeTensors::deserialize(&bytes).map_err(err)?;
    let mut values = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::Checkpoint(format!("tensor {name} is not f32")));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        values.insert(name, (view.shape().to_vec(), data));
    }
    Ok((values, meta))
}
