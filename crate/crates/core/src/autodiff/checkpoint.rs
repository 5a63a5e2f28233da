//! Flat binary checkpoint of named tensors.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   8 bytes  "ACUITYCK"
//! version u32      1
//! count   u32
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim u32, dims u64 × ndim
//!   values f64 × prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{AutodiffError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACUITYCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ParamStore, mut out: W) -> Result<(), AutodiffError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.ndim() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.len() * 8);
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, AutodiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore, AutodiffError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic number".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = read_u32(&mut input)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut input)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push_raw(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), AutodiffError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, AutodiffError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
