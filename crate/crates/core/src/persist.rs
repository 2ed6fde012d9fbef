//! Binary model files.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic        8 bytes  "MIMLFST1"
//! version      u32
//! variant      u8       0 full, 1 v1, 2 v2
//! d, m, K, L   u64 each (m == d under v1)
//! C            f64
//! top_r        u64      0 when unset
//! w0           u64 length, then f64 values, row-major m×d (empty under v1)
//! heads        u64 length, then f64 values, [(L+1)][K][m]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{MimlError, Result};
use crate::types::{LabelSpace, Model, Variant};

pub const MAGIC: &[u8; 8] = b"MIMLFST1";
pub const VERSION: u32 = 1;

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * (model.w0.len() + model.heads.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.variant.code());
    for v in [
        model.feature_dim,
        model.embed_dim,
        model.sub_concepts,
        model.label_space.num_labels,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&model.norm_bound.to_le_bytes());
    out.extend_from_slice(&(model.top_r.unwrap_or(0) as u64).to_le_bytes());
    for arr in [&model.w0, &model.heads] {
        out.extend_from_slice(&(arr.len() as u64).to_le_bytes());
        for v in arr.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(MimlError::ModelFormat("truncated file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| MimlError::ModelFormat("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array(&mut self, expected: usize) -> Result<Vec<f64>> {
        let len = self.usize()?;
        if len != expected {
            return Err(MimlError::ModelFormat(format!(
                "parameter array has {len} values, dimensions require {expected}"
            )));
        }
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| MimlError::ModelFormat("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(MimlError::ModelFormat("bad magic header".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(MimlError::ModelFormat(format!("unsupported version {version}")));
    }
    let variant = Variant::from_code(r.take(1)?[0])
        .ok_or_else(|| MimlError::ModelFormat("unknown variant".into()))?;
    let d = r.usize()?;
    let m = r.usize()?;
    let k = r.usize()?;
    let l = r.usize()?;
    let c = r.f64()?;
    let top_r = r.usize()?;
    if d == 0 || m == 0 || k == 0 || l == 0 {
        return Err(MimlError::ModelFormat("zero dimension".into()));
    }
    if !variant.has_shared_space() && m != d {
        return Err(MimlError::ModelFormat(format!("v1 model with m = {m} != d = {d}")));
    }
    let w0_len = if variant.has_shared_space() { m.checked_mul(d) } else { Some(0) };
    let heads_len = (l + 1).checked_mul(k).and_then(|v| v.checked_mul(m));
    let (Some(w0_len), Some(heads_len)) = (w0_len, heads_len) else {
        return Err(MimlError::ModelFormat("size overflow".into()));
    };
    let w0 = r.array(w0_len)?;
    let heads = r.array(heads_len)?;
    if !r.buf.is_empty() {
        return Err(MimlError::ModelFormat(format!("{} trailing bytes", r.buf.len())));
    }
    let mut model = Model::from_parts(variant, d, m, LabelSpace { num_labels: l }, k, c, w0, heads)
        .map_err(|e| MimlError::ModelFormat(e.to_string()))?;
    match (variant, top_r) {
        (Variant::V2TopR, 0) => return Err(MimlError::ModelFormat("top-r model without r".into())),
        (_, 0) => {}
        (_, r) => model.top_r = Some(r),
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_bytes(&fs::read(path)?)
}
