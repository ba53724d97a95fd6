//! `FQW1` named-tensor files: magic, `u32` count, then per tensor the name
//! length and bytes, rank, dims and little-endian `f32` data. All integers
//! are little-endian `u32`.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FQW1";

fn put(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_tensors<'a>(
    mut w: impl Write,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    put(&mut w, tensors.len())?;
    for (name, t) in tensors {
        put(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put(&mut w, d)?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an FQW1 tensor file".into()));
    }
    let count = get(&mut r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = get(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = get(&mut r)?;
        if rank > 4 {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| get(&mut r)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        out.push((name, Tensor::new(&dims, data)?));
    }
    Ok(out)
}
