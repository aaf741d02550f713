//! Checkpoint save/load as flat binary arrays behind a small versioned
//! header. Policy and reward-model weights share the format; the header
//! records which kind a file holds.

use crate::error::{Error, Result};
use crate::policy::{ModelDims, ParamBlock, PolicyParams, Vocab};
use crate::reward::RewardParams;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MRLC";
const FORMAT_VERSION: u32 = 1;

const KIND_POLICY: u8 = 0;
const KIND_REWARD: u8 = 1;

fn write_header<W: Write>(
    w: &mut W,
    kind: u8,
    dims: &ModelDims,
    out_dim: u64,
    version: u64,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    for v in [dims.vocab.size, dims.vocab.eos_id, dims.vocab.pad_id] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [dims.embed_dim as u64, dims.hidden_dim as u64, dims.window as u64, out_dim] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&version.to_le_bytes())?;
    Ok(())
}

fn write_array<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_block<W: Write>(w: &mut W, block: &ParamBlock) -> Result<()> {
    write_array(w, &block.embed)?;
    write_array(w, &block.w1)?;
    write_array(w, &block.b1)?;
    write_array(w, &block.w2)?;
    write_array(w, &block.b2)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_array<R: Read>(r: &mut R, expected: usize) -> Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    if len != expected {
        return Err(Error::Checkpoint(format!("array length {len}, expected {expected}")));
    }
    let mut out = vec![0.0f64; len];
    let mut buf = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(out)
}

struct Header {
    kind: u8,
    dims: ModelDims,
    out_dim: u64,
    version: u64,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let format = read_u32(r)?;
    if format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {format}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let size = read_u32(r)?;
    let eos_id = read_u32(r)?;
    let pad_id = read_u32(r)?;
    let embed_dim = read_u64(r)? as usize;
    let hidden_dim = read_u64(r)? as usize;
    let window = read_u64(r)? as usize;
    let out_dim = read_u64(r)?;
    let version = read_u64(r)?;
    let dims = ModelDims { vocab: Vocab::new(size, eos_id, pad_id)?, embed_dim, hidden_dim, window };
    dims.validate()?;
    Ok(Header { kind: kind[0], dims, out_dim, version })
}

fn read_block<R: Read>(r: &mut R, dims: &ModelDims, out_dim: usize) -> Result<ParamBlock> {
    let shape = ParamBlock::zeros(dims, out_dim);
    Ok(ParamBlock {
        embed: read_array(r, shape.embed.len())?,
        w1: read_array(r, shape.w1.len())?,
        b1: read_array(r, shape.b1.len())?,
        w2: read_array(r, shape.w2.len())?,
        b2: read_array(r, shape.b2.len())?,
    })
}

pub fn save_policy(path: &Path, params: &PolicyParams) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, KIND_POLICY, &params.dims, params.out_dim() as u64, params.version)?;
    write_block(&mut w, &params.block)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut r)?;
    if header.kind != KIND_POLICY {
        return Err(Error::Checkpoint("checkpoint holds a reward model, not a policy".into()));
    }
    if header.out_dim != header.dims.vocab.size as u64 {
        return Err(Error::Checkpoint("policy head width != vocab size".into()));
    }
    let block = read_block(&mut r, &header.dims, header.out_dim as usize)?;
    Ok(PolicyParams { dims: header.dims, block, version: header.version })
}

pub fn save_reward(path: &Path, params: &RewardParams) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, KIND_REWARD, &params.dims, 1, params.version)?;
    write_block(&mut w, &params.block)
}

pub fn load_reward(path: &Path) -> Result<RewardParams> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut r)?;
    if header.kind != KIND_REWARD {
        return Err(Error::Checkpoint("checkpoint holds a policy, not a reward model".into()));
    }
    let block = read_block(&mut r, &header.dims, 1)?;
    Ok(RewardParams { dims: header.dims, block, version: header.version })
}
