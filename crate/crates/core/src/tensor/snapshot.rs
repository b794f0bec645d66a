//! Binary tensor snapshot format used by golden tests and checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "RFTN" | u32 rank | u32 dims[rank] | f64 payload, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::array::Array;

const MAGIC: &[u8; 4] = b"RFTN";

pub fn write_snapshot(w: &mut impl Write, array: &Array) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(array.shape().len() as u32).to_le_bytes())?;
    for &d in array.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in array.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot(r: &mut impl Read) -> Result<Array> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad snapshot magic {:?}, expected \"RFTN\"",
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut f64buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    Array::from_vec(&shape, data)
}

/// Serialized byte size of a snapshot for the given shape.
pub fn snapshot_len(shape: &[usize]) -> usize {
    4 + 4 + 4 * shape.len() + 8 * shape.iter().product::<usize>()
}
