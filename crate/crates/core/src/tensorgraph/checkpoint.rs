//! Binary weight checkpoints.
//!
//! Layout: the magic bytes `ALIKEKIT1`, then one record per tensor until end
//! of file. A record is the name length (u64), the UTF-8 name, the rank
//! (u64), one u64 per extent and the row-major data as f32. All integers and
//! floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{Scalar, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"ALIKEKIT1";

pub fn write_checkpoint<T: Scalar, W: Write>(mut out: W, tensors: &[(&str, &Tensor<T>)]) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.path,
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Reads every tensor record; `path` is only used to label errors.
pub fn read_checkpoint<R: Read>(mut input: R, path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected ALIKEKIT1"));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let at = cur.pos as u64;
        let name_len = cur.u64("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::parse(path, at + 8, "tensor name is not UTF-8"))?
            .to_owned();
        let rank_at = cur.pos as u64;
        let rank = cur.u64("rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::parse(path, rank_at, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::parse(path, rank_at, "extent product overflows"))?;
        let data_at = cur.pos;
        let raw = cur.take(len.saturating_mul(4), "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::parse(path, data_at as u64, e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_f32_data() {
        let a = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.25 - 1.0);
        let b = Tensor::<f32>::scalar(7.5);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a", &a), ("bias.b", &b)]).unwrap();
        assert_eq!(&buf[..9], b"ALIKEKIT1");
        let back = read_checkpoint(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].0, "bias.b");
        assert_eq!(back[1].1.shape(), &[] as &[usize]);
    }

    #[test]
    fn reports_byte_offset_of_truncation() {
        let a = Tensor::<f32>::zeros(&[4]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w", &a)]).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_checkpoint(&buf[..], Path::new("x.ckpt")).unwrap_err();
        let msg = err.to_string();
        // magic 9 + name len 8 + name 1 + rank 8 + extent 8 = 34
        assert!(msg.contains("x.ckpt") && msg.contains("byte 34"), "{msg}");
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_checkpoint(&b"NOTACKPT1"[..], Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("byte 0"));
    }
}
