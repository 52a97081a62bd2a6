//! Binary checkpoints: magic, format version, the network config as JSON,
//! then every named tensor as little-endian `f64`s. Round trips are bitwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::rdn::{NetworkParams, RDNConfig};
use super::tape::Tensor;
use crate::error::{DgError, Result};

const MAGIC: &[u8; 8] = b"DGNNCKPT";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    put_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read, limit: u64) -> Result<Vec<u8>> {
    let n = get_u64(r)?;
    if n > limit {
        return Err(DgError::Checkpoint(format!("record length {n} exceeds {limit}")));
    }
    let mut b = vec![0u8; n as usize];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn write_checkpoint(w: &mut impl Write, params: &NetworkParams) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_bytes(w, serde_json::to_string(&params.config)?.as_bytes())?;
    put_u64(w, params.tensors.len() as u64)?;
    for (name, t) in params.names.iter().zip(&params.tensors) {
        put_bytes(w, name.as_bytes())?;
        put_u32(w, t.shape.len() as u32)?;
        for &d in &t.shape {
            put_u64(w, d as u64)?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<NetworkParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DgError::Checkpoint("not a checkpoint file".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(DgError::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg = get_bytes(r, 1 << 20)?;
    let config: RDNConfig = serde_json::from_slice(&cfg)?;
    config.validate()?;
    let count = get_u64(r)? as usize;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = String::from_utf8(get_bytes(r, 1 << 12)?)
            .map_err(|_| DgError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u64(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; 8 * n];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    // the stored config must describe exactly the stored tensors
    let expected = NetworkParams::init(config, Default::default())?;
    if expected.names != names || expected.tensors.iter().zip(&tensors).any(|(a, b)| a.shape != b.shape) {
        return Err(DgError::Checkpoint("tensors do not match the stored config".into()));
    }
    Ok(NetworkParams { config, names, tensors })
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
