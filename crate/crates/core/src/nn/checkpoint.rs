//! Named-tensor container.
//!
//! Layout (all integers little-endian):
//! `"BOPTCKPT"`, `u32` version, `u32` metadata length + UTF-8 metadata,
//! `u32` tensor count, then per tensor: `u32` name length + name, `u8` flags
//! (bit 0: trainable), `u8` dtype (1 = f64), `u32` rank, `u64` dims, payload.

use std::io::{Read, Write};

use super::{NnError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BOPTCKPT";
const DTYPE_F64: u8 = 1;
const MAX_RANK: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata, typically a serialized model configuration.
    pub meta: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ck.meta.len() as u32).to_le_bytes())?;
    w.write_all(ck.meta.as_bytes())?;
    w.write_all(&(ck.tensors.len() as u32).to_le_bytes())?;
    for nt in &ck.tensors {
        w.write_all(&(nt.name.len() as u32).to_le_bytes())?;
        w.write_all(nt.name.as_bytes())?;
        w.write_all(&[u8::from(nt.trainable), DTYPE_F64])?;
        let shape = nt.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(nt.tensor.numel() * 8);
        for x in nt.tensor.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, NnError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated checkpoint"),
        _ => NnError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NnError> {
    if read_exact(&mut r, 8)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let meta = String::from_utf8(read_exact(&mut r, meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_exact(&mut r, name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let hdr = read_exact(&mut r, 2)?;
        if hdr[1] != DTYPE_F64 {
            return Err(bad(format!("tensor {name}: unsupported dtype {}", hdr[1])));
        }
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(bad(format!("tensor {name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(usize::try_from(read_u64(&mut r)?).map_err(|_| bad("dimension overflow"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("tensor {name}: size overflow")))?;
        let bytes = read_exact(&mut r, numel.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.iter().any(|t: &NamedTensor| t.name == name) {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        tensors.push(NamedTensor {
            name,
            trainable: hdr[0] & 1 == 1,
            tensor: Tensor::new(shape, data)?,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { meta, tensors })
}
