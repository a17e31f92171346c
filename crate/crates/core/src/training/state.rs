//! Optimizer state stored next to a checkpoint so training can resume.
//!
//! ```text
//! b"DRNADAM1"
//! u32 version (= 1)
//! u64 step, f64 beta1, f64 beta2, f64 eps
//! u32 parameter count
//! per parameter:
//!     u16 name length, UTF-8 name
//!     u32 element count
//!     element count x f32 first moment, then the same for the second
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::AdamState;
use crate::model::checkpoint::Reader;
use crate::model::{save_checkpoint, CheckpointError, Drn};
use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"DRNADAM1";
const VERSION: u32 = 1;

/// `<checkpoint>.adam`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".adam");
    PathBuf::from(s)
}

fn encode<T: Scalar>(model: &Drn<T>, adam: &AdamState) -> Result<Vec<u8>, CheckpointError> {
    let params = model.params();
    let mut out = Vec::with_capacity(64 + params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&adam.t.to_le_bytes());
    for h in [adam.beta1, adam.beta2, adam.eps] {
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name().as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| CheckpointError::TooLarge("parameter name"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let n =
            u32::try_from(p.numel()).map_err(|_| CheckpointError::TooLarge("parameter size"))?;
        out.extend_from_slice(&n.to_le_bytes());
        for t in [p.first_moment(), p.second_moment()] {
            for v in t.data() {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_optimizer_state<T: Scalar>(
    model: &Drn<T>,
    adam: &AdamState,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(model, adam)?)?;
    Ok(())
}

/// Writes the checkpoint at `path` and the optimizer state beside it.
pub fn save_training_checkpoint<T: Scalar>(
    model: &Drn<T>,
    adam: &AdamState,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    save_checkpoint(model, path)?;
    save_optimizer_state(model, adam, sidecar_path(path))
}

/// Restores Adam moments into `model` and returns the step counter.
///
/// The parameter list must match the model's by name and size; on any
/// error the model is left untouched.
pub fn load_optimizer_state<T: Scalar>(
    model: &mut Drn<T>,
    path: impl AsRef<Path>,
) -> Result<AdamState, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
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
    let t = r.u64(&|| "step".into())?;
    let beta1 = r.f64(&|| "beta1".into())?;
    let beta2 = r.f64(&|| "beta2".into())?;
    let eps = r.f64(&|| "eps".into())?;
    let count = r.u32(&|| "parameter count".into())? as usize;
    let params = model.params();
    if count != params.len() {
        return Err(CheckpointError::CountMismatch {
            expected: params.len(),
            found: count,
        });
    }
    let mut moments = Vec::with_capacity(count);
    for (index, p) in params.iter().enumerate() {
        let name_len = r.u16(&|| format!("name of parameter #{index}"))? as usize;
        let name =
            String::from_utf8_lossy(r.take(name_len, &|| format!("name of parameter #{index}"))?)
                .into_owned();
        if name != p.name() {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: p.name().to_owned(),
                found: name,
            });
        }
        let n = r.u32(&|| format!("size of {name}"))? as usize;
        if n != p.numel() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: vec![p.numel()],
                found: vec![n],
            });
        }
        let raw = r.take(n * 8, &|| format!("moments of {name}"))?;
        let vals: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        moments.push(vals);
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    let store = model.params_mut();
    for (p, vals) in store.params_mut().iter_mut().zip(moments) {
        let n = p.numel();
        p.m.data_mut().copy_from_slice(&vals[..n]);
        p.v.data_mut().copy_from_slice(&vals[n..]);
    }
    Ok(AdamState {
        t,
        beta1,
        beta2,
        eps,
    })
}
