//! Binary checkpoint format.
//!
//! ```text
//! b"DRNCKPT1"
//! u32 version (= 1)
//! u32 byte length, UTF-8 JSON of DrnConfig
//! u32 parameter count
//! per parameter:
//!     u16 name length, UTF-8 name
//!     u8 rank, rank x u32 dims
//!     prod(dims) x f32 values, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Drn, DrnConfig, ModelError, ParamStore};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 8] = b"DRNCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated while reading {context}")]
    Truncated { context: String },
    #[error("invalid config in checkpoint: {0}")]
    Config(String),
    #[error("checkpoint holds {found} parameters, config implies {expected}")]
    CountMismatch { expected: usize, found: usize },
    #[error("parameter #{index} is {found:?}, config implies {expected:?}")]
    NameMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("parameter {name} has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint config {found:?} differs from the model's {expected:?}")]
    ConfigMismatch {
        expected: Box<DrnConfig>,
        found: Box<DrnConfig>,
    },
    #[error("{0} trailing bytes after the last parameter")]
    TrailingBytes(usize),
    #[error("checkpoint field too large: {0}")]
    TooLarge(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes a model; values are stored in single precision.
pub fn encode_checkpoint<T: Scalar>(model: &Drn<T>) -> Result<Vec<u8>, CheckpointError> {
    let config =
        serde_json::to_vec(model.config()).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let params = model.params();
    let mut out = Vec::with_capacity(64 + config.len() + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(config.len(), "config")?.to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&len_u32(params.len(), "parameter count")?.to_le_bytes());
    for p in params.iter() {
        let name = p.name().as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| CheckpointError::TooLarge("parameter name"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.dims().len() as u8);
        for &d in p.dims() {
            out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn len_u32(v: usize, what: &'static str) -> Result<u32, CheckpointError> {
    u32::try_from(v).map_err(|_| CheckpointError::TooLarge(what))
}

pub fn save_checkpoint<T: Scalar>(
    model: &Drn<T>,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(
        &mut self,
        n: usize,
        context: &dyn Fn() -> String,
    ) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated { context: context() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, context: &dyn Fn() -> String) -> Result<u8, CheckpointError> {
        Ok(self.take(1, context)?[0])
    }

    pub(crate) fn u16(&mut self, context: &dyn Fn() -> String) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(
            self.take(2, context)?.try_into().unwrap(),
        ))
    }

    pub(crate) fn u32(&mut self, context: &dyn Fn() -> String) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }

    pub(crate) fn u64(&mut self, context: &dyn Fn() -> String) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }

    pub(crate) fn f64(&mut self, context: &dyn Fn() -> String) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }
}

/// Parses and validates a checkpoint against the layout its own config
/// implies.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(DrnConfig, ParamStore<f32>), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(MAGIC.len(), &|| "magic".into())
        .map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32(&|| "version".into())?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let config_len = r.u32(&|| "config length".into())? as usize;
    let config_bytes = r.take(config_len, &|| "config".into())?;
    let config: DrnConfig =
        serde_json::from_slice(config_bytes).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut model = Drn::<f32>::new(config.clone()).map_err(|e| match e {
        ModelError::InvalidConfig { .. } => CheckpointError::Config(e.to_string()),
        other => CheckpointError::Config(other.to_string()),
    })?;

    let count = r.u32(&|| "parameter count".into())? as usize;
    let expected_count = model.params().len();
    if count != expected_count {
        return Err(CheckpointError::CountMismatch {
            expected: expected_count,
            found: count,
        });
    }
    let store = model.params_mut();
    for index in 0..count {
        let expected_name = store.get(index).name().to_string();
        let ctx_header = || format!("header of parameter #{index} ({expected_name})");
        let name_len = r.u16(&ctx_header)? as usize;
        let name = String::from_utf8_lossy(r.take(name_len, &ctx_header)?).into_owned();
        if name != expected_name {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: expected_name,
                found: name,
            });
        }
        let ctx = || format!("parameter {name}");
        let rank = r.u8(&ctx)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&ctx)? as usize);
        }
        let expected_dims = store.get(index).dims().to_vec();
        if dims != expected_dims {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: expected_dims,
                found: dims,
            });
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4, &ctx)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store
            .set_values(index, &values)
            .expect("length checked against dims");
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    let params = model.params().clone();
    Ok((config, params))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(DrnConfig, ParamStore<f32>), CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

impl<T: Scalar> Drn<T> {
    /// Rebuilds a model from a checkpoint file.
    pub fn from_checkpoint(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let (config, params) = load_checkpoint(path)?;
        let mut model =
            Drn::<T>::new(config).map_err(|e| CheckpointError::Config(e.to_string()))?;
        model
            .replace_params(params.cast())
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        Ok(model)
    }

    /// Loads parameters into this model; the checkpoint's config must equal
    /// this model's.
    pub fn load_params(&mut self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let (config, params) = load_checkpoint(path)?;
        if &config != self.config() {
            return Err(CheckpointError::ConfigMismatch {
                expected: Box::new(self.config().clone()),
                found: Box::new(config),
            });
        }
        self.replace_params(params.cast())
            .map_err(|e| CheckpointError::Config(e.to_string()))
    }
}
