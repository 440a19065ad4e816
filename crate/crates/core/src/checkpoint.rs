//! Binary bi-encoder checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"PRXLCKPT"  u32 version  u8 similarity (0 = dot, 1 = cosine)
//! per tower (mention, then entity):
//!     u64 vocab_size  u64 max_seq_len  u64 hidden_dim  u64 output_dim
//!     f64 word_embeddings[vocab_size × hidden_dim]
//!     f64 position_embeddings[max_seq_len × hidden_dim]
//!     f64 projection[hidden_dim × output_dim]
//!     f64 projection_bias[output_dim]
//! ```

use std::path::Path;

use crate::encoder::{BiEncoder, EncoderParams, SimilarityKind, TowerDims};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"PRXLCKPT";
const VERSION: u32 = 1;

pub fn to_bytes(model: &BiEncoder) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match model.similarity {
        SimilarityKind::Dot => 0,
        SimilarityKind::Cosine => 1,
    });
    for tower in [&model.mention_tower, &model.entity_tower] {
        let d = tower.dims();
        for v in [d.vocab_size, d.max_seq_len, d.hidden_dim, d.output_dim] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for t in [
            tower.word_embeddings.as_slice(),
            tower.position_embeddings.as_slice(),
            tower.projection.as_slice(),
            &tower.projection_bias,
        ] {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} too large")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {rows}×{cols} too large")))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<BiEncoder> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let similarity = match c.take(1)?[0] {
        0 => SimilarityKind::Dot,
        1 => SimilarityKind::Cosine,
        other => return Err(Error::Checkpoint(format!("unknown similarity tag {other}"))),
    };
    let mut towers = Vec::with_capacity(2);
    for _ in 0..2 {
        let dims = TowerDims {
            vocab_size: c.u64()?,
            max_seq_len: c.u64()?,
            hidden_dim: c.u64()?,
            output_dim: c.u64()?,
        };
        let word = c.matrix(dims.vocab_size, dims.hidden_dim)?;
        let pos = c.matrix(dims.max_seq_len, dims.hidden_dim)?;
        let proj = c.matrix(dims.hidden_dim, dims.output_dim)?;
        let bias = c.matrix(1, dims.output_dim)?.as_slice().to_vec();
        let tower = EncoderParams::from_parts(word, pos, proj, bias)
            .map_err(|e| Error::Checkpoint(format!("invalid tower: {e}")))?;
        towers.push(tower);
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let entity = towers.pop().expect("two towers");
    let mention = towers.pop().expect("two towers");
    BiEncoder::new(mention, entity, similarity).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(model: &BiEncoder, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BiEncoder> {
    from_bytes(&std::fs::read(path)?)
}
