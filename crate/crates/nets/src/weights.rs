//! Parameter files in the safetensors format.
//!
//! Backbone files exported from Keras keep Keras' `HWIO` kernel layout and
//! are tagged `fer.layout = keras-hwio`; files written by this crate store
//! `OIHW` kernels and are tagged `oihw`. Keys are `<layer>/<role>` where
//! role is one of `kernel`, `bias`, `gamma`, `beta`, `moving_mean`,
//! `moving_variance`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor, Var};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::graph::{ParamSpec, ParamStore};

pub const WEIGHTS_ROOT_ENV: &str = "FER_WEIGHTS_ROOT";
pub const LAYOUT_KEY: &str = "fer.layout";
pub const LAYOUT_KERAS: &str = "keras-hwio";
pub const LAYOUT_OIHW: &str = "oihw";

fn st_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::SafeTensors {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn write_tensors(path: &Path, tensors: &BTreeMap<String, Tensor>, metadata: HashMap<String, String>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(tensors.len());
    for (k, t) in tensors {
        let data: Vec<f32> = t.flatten_all()?.to_vec1()?;
        let raw = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        bytes.push((k.clone(), t.dims().to_vec(), raw));
    }
    let views = bytes
        .iter()
        .map(|(k, shape, raw)| {
            Ok((
                k.as_str(),
                TensorView::new(Dtype::F32, shape.clone(), raw).map_err(|e| st_err(path, e))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize_to_file(views, Some(metadata), path).map_err(|e| st_err(path, e))
}

pub fn read_tensors(path: &Path, device: &Device) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&buf).map_err(|e| st_err(path, e))?;
    let st = SafeTensors::deserialize(&buf).map_err(|e| st_err(path, e))?;
    let mut out = BTreeMap::new();
    for name in st.names() {
        let view = st.tensor(name).map_err(|e| st_err(path, e))?;
        let data: Vec<f32> = match view.dtype() {
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
                .collect(),
            other => return Err(st_err(path, format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        out.insert(name.to_string(), Tensor::from_vec(data, view.shape(), device)?);
    }
    Ok((out, meta.metadata().clone().unwrap_or_default()))
}

/// Where pretrained backbone parameters come from.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSource {
    /// Seeded random initialization; for tests and the surrogate.
    Random { seed: u64 },
    /// A single parameter file.
    File(PathBuf),
    /// A directory holding `<backbone>.safetensors` files.
    Root(PathBuf),
}

impl WeightSource {
    /// `Root($FER_WEIGHTS_ROOT)` when the variable is set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(WEIGHTS_ROOT_ENV).map(|v| WeightSource::Root(PathBuf::from(v)))
    }

    pub fn describe(&self) -> String {
        match self {
            WeightSource::Random { seed } => format!("random:{seed}"),
            WeightSource::File(p) => format!("file:{}", p.display()),
            WeightSource::Root(p) => format!("root:{}", p.display()),
        }
    }

    pub fn path_for(&self, backbone: &str) -> Option<PathBuf> {
        match self {
            WeightSource::Random { .. } => None,
            WeightSource::File(p) => Some(p.clone()),
            WeightSource::Root(r) => Some(r.join(format!("{backbone}.safetensors"))),
        }
    }

    /// Parameters for every spec. File sources must provide each key with a
    /// matching shape; extra keys (such as a classification top) are ignored.
    pub fn load(&self, backbone: &str, specs: &[ParamSpec], device: &Device) -> Result<ParamStore> {
        let path = match (self, self.path_for(backbone)) {
            (WeightSource::Random { seed }, _) => return ParamStore::init(specs, *seed, device),
            (_, Some(p)) => p,
            _ => unreachable!(),
        };
        let (tensors, meta) = read_tensors(&path, device)?;
        let keras = meta.get(LAYOUT_KEY).is_none_or(|l| l == LAYOUT_KERAS);
        let mut store = ParamStore::new();
        for spec in specs {
            let t = tensors.get(&spec.key).ok_or_else(|| {
                Error::Weights(format!(
                    "{}: missing `{}` required by {backbone}",
                    path.display(),
                    spec.key
                ))
            })?;
            let t = if keras && spec.role == "kernel" && t.rank() == 4 {
                t.permute((3, 2, 0, 1))?.contiguous()?
            } else {
                t.clone()
            };
            if t.dims() != spec.shape.as_slice() {
                return Err(Error::Weights(format!(
                    "{}: `{}` has shape {:?}, {backbone} expects {:?}",
                    path.display(),
                    spec.key,
                    t.dims(),
                    spec.shape
                )));
            }
            store.insert(spec.key.clone(), Var::from_tensor(&t)?);
        }
        Ok(store)
    }
}

/// Writes `store` in OIHW layout together with `metadata`.
pub fn save_store(path: &Path, store: &ParamStore, mut metadata: HashMap<String, String>) -> Result<()> {
    metadata.insert(LAYOUT_KEY.into(), LAYOUT_OIHW.into());
    let tensors = store.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
    write_tensors(path, &tensors, metadata)
}
