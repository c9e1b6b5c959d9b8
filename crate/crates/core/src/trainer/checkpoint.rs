//! Flat little-endian checkpoint format.
//!
//! ```text
//! "HSMG" | version u32 | K u32 | d u32 | head f64 × K·d
//! embed tag u32: 0 none
//!                1 free   | n u32
//!                2 linear | in_dim u32
//!                3 mlp    | in_dim u32 | hidden u32
//! embed params f64 × (implied by the tag)
//! ```
//!
//! Optimizer velocities are not stored; a loaded model resumes from rest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{EmbedKind, Embedding, ModelState};
use crate::error::{Error, Result};
use crate::geometry::HeadState;
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSMG";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &ModelState) -> Result<()> {
    let head = model.head.weights();
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION as usize)?;
    put_u32(w, head.rows())?;
    put_u32(w, head.cols())?;
    put_f64s(w, head.as_slice())?;
    match &model.embedding {
        None => put_u32(w, 0)?,
        Some(e) => {
            match e.kind() {
                EmbedKind::Fixed => put_u32(w, 0)?,
                EmbedKind::Free => {
                    put_u32(w, 1)?;
                    put_u32(w, e.params().len() / e.out_dim())?;
                }
                EmbedKind::Linear => {
                    put_u32(w, 2)?;
                    put_u32(w, e.in_dim())?;
                }
                EmbedKind::Mlp { hidden } => {
                    put_u32(w, 3)?;
                    put_u32(w, e.in_dim())?;
                    put_u32(w, hidden)?;
                }
            }
            put_f64s(w, e.params())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelState> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let k = get_u32(r)?;
    let d = get_u32(r)?;
    let head = HeadState::from_raw(Matrix::from_vec(k, d, get_f64s(r, k * d)?)?);
    let embedding = match get_u32(r)? {
        0 => None,
        1 => {
            let n = get_u32(r)?;
            Some(Embedding::from_parts(
                EmbedKind::Free,
                d,
                d,
                get_f64s(r, n * d)?,
            )?)
        }
        2 => {
            let in_dim = get_u32(r)?;
            Some(Embedding::from_parts(
                EmbedKind::Linear,
                in_dim,
                d,
                get_f64s(r, d * in_dim)?,
            )?)
        }
        3 => {
            let in_dim = get_u32(r)?;
            let hidden = get_u32(r)?;
            let n = hidden * in_dim + hidden + d * hidden + d;
            Some(Embedding::from_parts(
                EmbedKind::Mlp { hidden },
                in_dim,
                d,
                get_f64s(r, n)?,
            )?)
        }
        tag => return Err(Error::Format(format!("unknown embedding tag {tag}"))),
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(ModelState::new(embedding, head))
}

pub fn save_checkpoint(path: &Path, model: &ModelState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
