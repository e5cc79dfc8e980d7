//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "CSEGCKPT"
//! version   u32      1
//! depth     u32      cascade passes
//! channels  u32      unified width
//! count     u32      number of tensors
//! count x { id_len u32, id utf-8, n c h w: 4 x u32, values: n*c*h*w x f64 bits }
//! ```
//!
//! Tensors are stored in identifier order, values row-major, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CascadeConfig, Model, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"CSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_ID_LEN: usize = 1 << 12;

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value does not fit in u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint(mut w: impl Write, model: &Model) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u32(&mut w, model.cfg.depth)?;
    put_u32(&mut w, model.cfg.channels)?;
    put_u32(&mut w, model.params.len())?;
    for (id, t) in model.params.iter() {
        put_u32(&mut w, id.len())?;
        w.write_all(id.as_bytes())?;
        for d in t.shape().dims() {
            put_u32(&mut w, d)?;
        }
        for v in t.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<Model> {
    let mut r = Reader { inner: r };
    if r.bytes(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let cfg = CascadeConfig { depth: r.u32("depth")?, channels: r.u32("channels")? };
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32("identifier length")?;
        if len > MAX_ID_LEN {
            return Err(Error::Checkpoint(format!("identifier length {len} is implausible")));
        }
        let id = String::from_utf8(r.bytes(len, "identifier")?)
            .map_err(|_| Error::Checkpoint("identifier is not utf-8".into()))?;
        let dims = [r.u32("shape")?, r.u32("shape")?, r.u32("shape")?, r.u32("shape")?];
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
            .map_err(|e| Error::Checkpoint(format!("`{id}`: {e}")))?;
        let raw = r.bytes(shape.numel() * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect();
        if tensors.insert(id.clone(), Tensor::from_vec(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate identifier `{id}`")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    let params = ModelParams::from_tensors(&cfg, tensors)
        .map_err(|e| Error::Checkpoint(format!("inconsistent with depth {} / channels {}: {e}", cfg.depth, cfg.channels)))?;
    Ok(Model { cfg, params })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), model).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::init(CascadeConfig { depth: 1, channels: 4 }, 9).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.cfg, model.cfg);
        for ((ia, ta), (ib, tb)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(ia, ib);
            assert_eq!(ta.shape(), tb.shape());
            assert!(ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let model = Model::init(CascadeConfig { depth: 1, channels: 2 }, 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_checkpoint(bad_magic.as_slice()), Err(Error::Checkpoint(_))));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(Error::Checkpoint(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(read_checkpoint(trailing.as_slice()).is_err());

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 7;
        assert!(read_checkpoint(wrong_version.as_slice()).is_err());

        // depth field says 2 but only one pass of tensors is present
        let mut wrong_depth = bytes;
        wrong_depth[12] = 2;
        assert!(read_checkpoint(wrong_depth.as_slice()).is_err());
    }
}
