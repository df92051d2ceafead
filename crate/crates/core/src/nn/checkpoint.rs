//! Versioned binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "STAGCKPT"                       8 bytes
//! version                          u32
//! config hash                      u32 length + UTF-8
//! config                           u32 length + UTF-8 (JSON)
//! parameter count                  u32
//! per parameter:
//!   name                           u32 length + UTF-8
//!   rank                           u32
//!   dims                           rank × u32
//!   values                         numel × f32
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STAGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint field is not valid UTF-8")]
    Utf8,
    #[error("parameter {0} has an invalid shape")]
    Shape(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config_json: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Copies the stored values into `store`, which must have the same
    /// names and shapes in the same order.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if self.params.len() != store.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{} parameters stored, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for ((name, value), id) in self.params.iter().zip(store.ids().collect::<Vec<_>>()) {
            if store.name(id) != name || store.get(id).shape() != value.shape() {
                return Err(CheckpointError::Mismatch(name.clone()));
            }
            *store.get_mut(id) = value.clone();
        }
        Ok(())
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String, CheckpointError> {
    let len = get_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| CheckpointError::Utf8)
}

pub fn write_checkpoint<W: Write>(w: &mut W, store: &ParamStore, config_hash: &str, config_json: &str) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_str(w, config_hash)?;
    put_str(w, config_json)?;
    put_u32(w, store.len() as u32)?;
    for (name, value) in store.iter() {
        put_str(w, name)?;
        put_u32(w, value.rank() as u32)?;
        for d in value.shape() {
            put_u32(w, *d as u32)?;
        }
        for v in value.data() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config_hash = get_str(r)?;
    let config_json = get_str(r)?;
    let count = get_u32(r)?;
    let mut params = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = get_str(r)?;
        let rank = get_u32(r)? as usize;
        let shape = (0..rank).map(|_| get_u32(r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let value = Tensor::new(shape, data).map_err(|_| CheckpointError::Shape(name.clone()))?;
        params.push((name, value));
    }
    Ok(Checkpoint {
        config_hash,
        config_json,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::matrix(2, 2, vec![0.5, -1.0, 0.25, 3.0]).unwrap()).unwrap();
        s.add("a.bias", Tensor::new(vec![2], vec![0.0, 1.5]).unwrap()).unwrap();
        s
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let s = store();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, "abc", "{}").unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let ck = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.config_hash, "abc");
        let mut t = store();
        t.values_mut()[0].data_mut()[0] = 9.0;
        ck.load_into(&mut t).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store(), "h", "{}").unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(CheckpointError::BadMagic)));
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(CheckpointError::Io(_))));
    }
}
