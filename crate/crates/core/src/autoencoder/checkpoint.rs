//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "HPAE"
//! version      u32
//! config       u32 length + UTF-8 `key=value` lines
//! seed         u64
//! epochs       u64
//! final_loss   f64
//! provenance   u32 length + UTF-8
//! n_arrays     u32
//! n_arrays × { u32 name length, name, u32 element count, count × f32 }
//! ```
//!
//! Arrays appear block by block (`enc0`, `enc1`, …, `dec0`, …): `weight`,
//! then `bias` for the output block, or `bn.gamma`, `bn.beta`,
//! `bn.running_mean`, `bn.running_var` for batch-normalized blocks.
//! Weights are `[out, in*k*k]` for convolutions and `[in, out*k*k]` for
//! transposed convolutions, row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::{AutoencoderConfig, AutoencoderModel, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HPAE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_model(model: &AutoencoderModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let bytes = encode(model);
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AutoencoderModel, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub(crate) fn encode(model: &AutoencoderModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_str(&mut out, &model.config().to_key_values());
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&(model.meta.epochs as u64).to_le_bytes());
    out.extend_from_slice(&model.meta.final_loss.to_le_bytes());
    put_str(&mut out, &model.meta.provenance);
    let arrays = model.stored_arrays();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, values) in arrays {
        put_str(&mut out, &name);
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<AutoencoderModel, ModelError> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let config = AutoencoderConfig::from_key_values(&r.string()?)?;
    let mut model = AutoencoderModel::zeroed(&config).map_err(|e| match e {
        ModelError::InvalidConfig(m) => ModelError::ShapeMismatch(m),
        other => other,
    })?;
    model.meta.seed = r.u64()?;
    model.meta.epochs = r.u64()? as usize;
    model.meta.final_loss = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    model.meta.provenance = r.string()?;

    let expected: Vec<(String, usize)> =
        model.stored_arrays().iter().map(|(n, a)| (n.clone(), a.len())).collect();
    let n_arrays = r.u32()? as usize;
    if n_arrays != expected.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "checkpoint holds {n_arrays} arrays, config implies {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(n_arrays);
    for (want_name, want_len) in &expected {
        let name = r.string()?;
        let len = r.u32()? as usize;
        if &name != want_name || len != *want_len {
            return Err(ModelError::ShapeMismatch(format!(
                "array {name} has {len} values, config expects {want_name} with {want_len}"
            )));
        }
        let raw = r.take(len * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Corrupt(format!("non-finite value in {name}")));
        }
        loaded.push(values);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    for (dst, src) in model.stored_arrays_mut().into_iter().zip(loaded) {
        dst.copy_from_slice(&src);
    }
    Ok(model)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Corrupt(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Corrupt("invalid utf-8".into()))
    }
}
