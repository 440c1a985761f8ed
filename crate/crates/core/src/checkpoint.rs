//! Binary checkpoints of parameter groups. Layout is described in
//! `docs/checkpoint-format.md`; all integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{GroupTag, ParamGroup, Tensor};

pub const MAGIC: &[u8; 4] = b"SPKC";
pub const VERSION: u32 = 1;

/// First eight bytes of SHA-256 over `text`, as a little-endian integer.
pub fn config_hash(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub groups: Vec<ParamGroup>,
}

impl Checkpoint {
    /// Removes and returns the group with `tag`.
    pub fn take(&mut self, tag: GroupTag) -> Result<ParamGroup> {
        let i = self
            .groups
            .iter()
            .position(|g| g.tag() == tag)
            .ok_or_else(|| Error::Checkpoint(format!("no `{tag}` group")))?;
        Ok(self.groups.remove(i))
    }
}

pub fn encode(config_hash: u64, groups: &[&ParamGroup]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for g in groups {
        put_str(&mut out, g.tag().as_str());
        out.extend_from_slice(&(g.len() as u32).to_le_bytes());
        for (id, t) in g.iter() {
            put_str(&mut out, id);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
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

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-UTF-8 name".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 32 + 20 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash = r.u64()?;
    let n_groups = r.u32()?;
    let mut groups = Vec::new();
    for _ in 0..n_groups {
        let tag_name = r.string()?;
        let tag = GroupTag::parse(&tag_name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown group `{tag_name}`")))?;
        let mut group = ParamGroup::new(tag);
        for _ in 0..r.u32()? {
            let id = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            group.insert(&id, Tensor::new(shape, values)?);
        }
        groups.push(group);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config_hash,
        groups,
    })
}

pub fn save(path: &Path, config_hash: u64, groups: &[&ParamGroup]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(config_hash, groups))?;
    Ok(())
}

/// Loads a checkpoint; a missing file is reported as [`Error::MissingCheckpoint`]
/// for `stage`, and a different config hash is rejected.
pub fn load(path: &Path, stage: &'static str, expected_hash: u64) -> Result<Checkpoint> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingCheckpoint {
                stage,
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let ck = decode(&bytes)?;
    if ck.config_hash != expected_hash {
        return Err(Error::Checkpoint(format!(
            "{} was written for a different configuration",
            path.display()
        )));
    }
    Ok(ck)
}
