//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"LNERCKPT" | u32 version | u32 len | JSON metadata
//! u32 count | count × (u32 len | name | u32 rank | rank × u64 dim | f32 data)
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::TagSet;
use crate::encoding::Vocab;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"LNERCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    tags: TagSet,
    char_vocab: Vocab,
    word_vocab: Vocab,
}

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let meta = Metadata {
        config: model.config.clone(),
        tags: model.tags.clone(),
        char_vocab: model.char_vocab.clone(),
        word_vocab: model.word_vocab.clone(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tensors = model.params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for &x in m.as_slice() {
            out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let mut meta: Metadata =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    meta.tags.reindex();
    meta.char_vocab.reindex();
    meta.word_vocab.reindex();

    let count = r.u32()? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("tensor '{name}' has rank {rank}, expected 2")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' is too large")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f64_lossy(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.insert(name, Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
    }

    // A throwaway initialization provides the registry; every tensor is then replaced.
    let mut model = Model::<T>::new(
        meta.config,
        meta.tags,
        meta.char_vocab,
        meta.word_vocab,
        0.0,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let mut missing = None;
    model.params.visit_mut(&mut |name, p| match tensors.remove(name) {
        Some(m) => *p = m,
        None => {
            missing.get_or_insert_with(|| name.to_string());
        }
    });
    if let Some(name) = missing {
        return Err(Error::Checkpoint(format!("tensor '{name}' is missing")));
    }
    if let Some(name) = tensors.keys().min() {
        return Err(Error::Checkpoint(format!("unexpected tensor '{name}'")));
    }
    Model::from_parts(model.config, model.tags, model.char_vocab, model.word_vocab, model.params)
}
