//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `HSCKPT01`, u32 format version, u32 length
//! plus UTF-8 JSON model config, u32 parameter count, then per parameter a
//! u16 name length, name bytes, u8 rank, u32 dims and f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Generator, ModelConfig};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HSCKPT01";
pub const FORMAT_VERSION: u32 = 1;

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", path.display(), reason.into()))
}

pub fn write_params<T: Real>(w: &mut impl Write, config_json: &str, store: &ParamStore<T>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(config_json.as_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v.f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub struct RawCheckpoint {
    pub config_json: String,
    pub params: Vec<(String, Tensor<f32>)>,
}

fn take<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_raw(BufReader::new(f), path)
}

/// Parses a checkpoint from any reader; `path` only labels errors.
pub fn parse_raw(mut r: impl Read, path: &Path) -> Result<RawCheckpoint> {
    let eof = |e: std::io::Error| bad(path, format!("truncated ({e})"));
    let magic: [u8; 8] = take(&mut r).map_err(eof)?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut r).map_err(eof)?);
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let clen = u32::from_le_bytes(take(&mut r).map_err(eof)?) as usize;
    let mut cbytes = vec![0u8; clen];
    r.read_exact(&mut cbytes).map_err(eof)?;
    let config_json = String::from_utf8(cbytes).map_err(|_| bad(path, "config is not UTF-8"))?;
    let count = u32::from_le_bytes(take(&mut r).map_err(eof)?) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(take(&mut r).map_err(eof)?) as usize;
        let mut nbytes = vec![0u8; nlen];
        r.read_exact(&mut nbytes).map_err(eof)?;
        let name = String::from_utf8(nbytes).map_err(|_| bad(path, "parameter name is not UTF-8"))?;
        let rank = take::<1>(&mut r).map_err(eof)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut r).map_err(eof)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(eof)?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        params.push((name, Tensor::from_vec(&shape, data)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after parameter table"));
    }
    Ok(RawCheckpoint { config_json, params })
}

/// Overwrites every parameter of `store` from `params`; names and shapes must match exactly.
pub fn load_into<T: Real>(path: &Path, store: &mut ParamStore<T>, params: &[(String, Tensor<f32>)]) -> Result<()> {
    if params.len() != store.len() {
        return Err(bad(path, format!("{} parameters stored, model has {}", params.len(), store.len())));
    }
    for (name, t) in params {
        let id = store.id_of(name).ok_or_else(|| bad(path, format!("unknown parameter {name}")))?;
        let dst = store.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(bad(path, format!("{name}: shape {:?}, model expects {:?}", t.shape(), dst.shape())));
        }
        *dst = t.cast();
    }
    Ok(())
}

pub fn save_generator<T: Real>(path: &Path, model: &Generator<T>) -> Result<()> {
    let json = serde_json::to_string(&model.cfg).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_params(&mut w, &json, &model.store).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_generator<T: Real>(path: &Path) -> Result<Generator<T>> {
    let raw = read_raw(path)?;
    let cfg: ModelConfig = serde_json::from_str(&raw.config_json).map_err(|e| bad(path, format!("config: {e}")))?;
    let mut model = Generator::new(&cfg)?;
    load_into(path, &mut model.store, &raw.params)?;
    Ok(model)
}
