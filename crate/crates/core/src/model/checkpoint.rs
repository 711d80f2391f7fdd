//! Binary checkpoint format.
//!
//! ```text
//! PROTOFAIR-CKPT-v1\n
//! u64 LE   config length, then that many bytes of UTF-8 config text
//! u8       model kind (0 = mf, 1 = protomf)
//! u8       filtering flags (bit 0 = user, bit 1 = item)
//! u64 LE x7  N, M, d, L_u, L_i, k_u, k_i
//! f64 LE   U, I, P_u, P_i, W_u, W_i, each row-major
//! ```

use std::fs;
use std::path::Path;

use super::{Filtering, ModelError, ModelKind, PrototypeModel};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: &str = "PROTOFAIR-CKPT-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PrototypeModel,
    /// The training configuration, as text.
    pub config: String,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let d = m.dims();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&(ckpt.config.len() as u64).to_le_bytes());
    out.extend_from_slice(ckpt.config.as_bytes());
    out.push(match m.kind {
        ModelKind::Mf => 0,
        ModelKind::Protomf => 1,
    });
    out.push(u8::from(m.filtering.user) | (u8::from(m.filtering.item) << 1));
    for v in [d.n_users, d.n_items, d.dim, d.user_protos, d.item_protos, m.k_user, m.k_item] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for mat in m.params() {
        for x in mat.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| "size overflow".to_string())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix, String> {
        let n = rows.checked_mul(cols).ok_or("size overflow")?;
        let raw = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(CHECKPOINT_MAGIC.len() + 1).map_err(|_| "not a checkpoint".to_string())?;
    if &magic[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes() || magic[CHECKPOINT_MAGIC.len()] != b'\n' {
        return Err(format!("missing {CHECKPOINT_MAGIC} header"));
    }
    let clen = c.u64()?;
    let config = String::from_utf8(c.take(clen)?.to_vec()).map_err(|_| "config is not UTF-8".to_string())?;
    let kind = match c.u8()? {
        0 => ModelKind::Mf,
        1 => ModelKind::Protomf,
        k => return Err(format!("unknown model kind {k}")),
    };
    let flags = c.u8()?;
    let filtering = Filtering { user: flags & 1 != 0, item: flags & 2 != 0 };
    let [n, m, d, lu, li, ku, ki] = [c.u64()?, c.u64()?, c.u64()?, c.u64()?, c.u64()?, c.u64()?, c.u64()?];
    let model = PrototypeModel {
        kind,
        user_emb: c.matrix(n, d)?,
        item_emb: c.matrix(m, d)?,
        user_protos: c.matrix(lu, d)?,
        item_protos: c.matrix(li, d)?,
        user_proj: c.matrix(li, d)?,
        item_proj: c.matrix(lu, d)?,
        k_user: ku,
        k_item: ki,
        filtering,
    };
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    model.validate().map_err(|e| e.to_string())?;
    Ok(Checkpoint { model, config })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    fs::write(path, encode(ckpt)).map_err(|e| ModelError::Checkpoint { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let err = |message: String| ModelError::Checkpoint { path: path.display().to_string(), message };
    let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
    decode(&bytes).map_err(err)
}
