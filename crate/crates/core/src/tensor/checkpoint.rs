//! Binary checkpoint: `GRNLAB1`, then a little-endian `u32` entry count and
//! per entry `u32` name length, UTF-8 name, `u32` rank, `u64` extents and
//! the `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"GRNLAB1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated checkpoint: {e}"))
}

/// Reads every entry in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not a GRNLAB1 checkpoint".into(),
        ));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::new(shape, values)?));
    }
    Ok(out)
}

/// Restores values into an already-built store; every stored entry must
/// match a parameter of the same name and shape, and vice versa.
pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let entries = read_checkpoint(bytes.as_slice())?;
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entries, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if store.get(id).shape != t.shape {
            return Err(Error::Shape {
                op: "load_checkpoint",
                left: store.get(id).shape.clone(),
                right: t.shape,
            });
        }
        store.get_mut(id).values = t.values;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = ParamStore::new(11);
        s.add("encoder.grn.w", &[3, 2]).unwrap();
        s.add("b", &[3]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        assert!(buf.starts_with(b"GRNLAB1"));
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "encoder.grn.w");
        assert_eq!(back[0].1.values, s.by_name("encoder.grn.w").unwrap().values);
        assert_eq!(back[1].1.shape, vec![3]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"GRNLAB2\0\0\0\0"[..]).is_err());
        let mut s = ParamStore::new(0);
        s.add("w", &[4]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
