//! Parameter checkpoint container.
//!
//! Layout (little-endian): 4-byte magic | u32 version | u32 group count |
//! per group: u32 name length, UTF-8 name, u32 rank, u32 dims…, f32 values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::{ParamSet, Scalar};
use crate::error::{Error, Result};
use crate::util::create_file;

pub const DQN_MAGIC: &[u8; 4] = b"DQNW";
pub const SDL_MAGIC: &[u8; 4] = b"SDLW";
pub const ENCODER_MAGIC: &[u8; 4] = b"ENCW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointGroup {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_checkpoint<T: Scalar>(magic: &[u8; 4], params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.tensor.data() {
            out.extend_from_slice(&x.as_f32().to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint<T: Scalar>(path: &Path, magic: &[u8; 4], params: &ParamSet<T>) -> Result<()> {
    let mut f = create_file(path)?;
    f.write_all(&encode_checkpoint(magic, params)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.bytes.len() as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], magic: &[u8; 4]) -> Result<Vec<CheckpointGroup>> {
    let mut r = Reader { bytes, pos: 0 };
    let found = r.take(4, "magic")?;
    if found != magic {
        return Err(Error::format(
            0,
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(magic)),
        ));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("group count")?;
    let mut groups = Vec::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(at + 4, "group name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("shape")? as usize);
        }
        let shape_at = r.pos as u64;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(shape_at, format!("group {name:?} shape {shape:?} overflows")))?;
        let raw = r.take(len * 4, "values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        groups.push(CheckpointGroup { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last group"));
    }
    Ok(groups)
}

pub fn read_checkpoint_groups(path: &Path, magic: &[u8; 4]) -> Result<Vec<CheckpointGroup>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, magic)
}

/// Loads a checkpoint into `params`; names, order and shapes must match.
pub fn read_checkpoint<T: Scalar>(path: &Path, magic: &[u8; 4], params: &mut ParamSet<T>) -> Result<()> {
    let groups = read_checkpoint_groups(path, magic)?;
    load_groups(groups, params)
}

pub(crate) fn load_groups<T: Scalar>(groups: Vec<CheckpointGroup>, params: &mut ParamSet<T>) -> Result<()> {
    if groups.len() != params.len() {
        return Err(Error::invalid(format!(
            "checkpoint has {} parameter groups, network has {}",
            groups.len(),
            params.len()
        )));
    }
    for (group, param) in groups.into_iter().zip(params.iter_mut()) {
        if group.name != param.name || group.shape != param.tensor.shape() {
            return Err(Error::invalid(format!(
                "checkpoint group {:?} {:?} does not match parameter {:?} {:?}",
                group.name,
                group.shape,
                param.name,
                param.tensor.shape()
            )));
        }
        for (dst, src) in param.tensor.data_mut().iter_mut().zip(group.data) {
            *dst = T::from_f32(src);
        }
        param.tensor.clear_grad();
    }
    Ok(())
}
