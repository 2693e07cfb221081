//! Binary model container:
//!
//! ```text
//! magic    8 bytes  "HMAMLMDL"
//! version  u32 LE
//! arch_len u32 LE, followed by the architecture as JSON
//! count    u64 LE, followed by `count` f64 LE parameters
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::model::{Architecture, PredictiveModel};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HMAMLMDL";

pub fn encode_model(model: &PredictiveModel) -> Vec<u8> {
    let arch = serde_json::to_vec(model.architecture()).expect("architecture serializes");
    let mut out = Vec::with_capacity(24 + arch.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(MODEL_FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(arch.len() as u32).unwrap();
    out.extend_from_slice(&arch);
    out.write_u64::<LittleEndian>(model.param_count() as u64).unwrap();
    for &p in model.params() {
        out.write_f64::<LittleEndian>(p).unwrap();
    }
    out
}

/// Decodes one model from the front of `cursor`, leaving it positioned after it.
pub(crate) fn decode_from(cursor: &mut Cursor<&[u8]>, origin: &Path) -> Result<PredictiveModel> {
    let bad = |detail: &str| Error::format(origin, detail);
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = cursor.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(bad(&format!("unsupported model format version {version}")));
    }
    let arch_len = cursor.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let remaining = cursor.get_ref().len() - cursor.position() as usize;
    if arch_len > remaining {
        return Err(bad("truncated architecture descriptor"));
    }
    let mut arch_bytes = vec![0u8; arch_len];
    cursor.read_exact(&mut arch_bytes).map_err(|_| bad("truncated architecture descriptor"))?;
    let arch: Architecture =
        serde_json::from_slice(&arch_bytes).map_err(|e| bad(&format!("architecture descriptor: {e}")))?;
    arch.validate().map_err(|e| bad(&e.to_string()))?;
    let count = cursor.read_u64::<LittleEndian>().map_err(|_| bad("truncated parameter count"))? as usize;
    if count != arch.param_count() {
        return Err(bad(&format!(
            "descriptor expects {} parameters but payload declares {count}",
            arch.param_count()
        )));
    }
    let remaining = cursor.get_ref().len() - cursor.position() as usize;
    if remaining < count * 8 {
        return Err(bad("truncated parameter payload"));
    }
    let mut params = vec![0.0; count];
    cursor
        .read_f64_into::<LittleEndian>(&mut params)
        .map_err(|_| bad("truncated parameter payload"))?;
    PredictiveModel::from_params(arch, params).map_err(|e| bad(&e.to_string()))
}

pub fn decode_model(bytes: &[u8], origin: &Path) -> Result<PredictiveModel> {
    let mut cursor = Cursor::new(bytes);
    let model = decode_from(&mut cursor, origin)?;
    if cursor.position() as usize != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after parameter payload"));
    }
    Ok(model)
}

pub fn save_model(model: &PredictiveModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PredictiveModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
