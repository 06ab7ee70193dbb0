use std::path::Path;

use super::{push_u32, read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::observation::HsiCube;

const MAGIC: &[u8; 4] = b"HSC1";

/// `HSC1`, `W H S` as u32 LE, then band-sequential f32 LE samples.
pub fn encode_hsc(cube: &HsiCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * cube.len());
    out.extend_from_slice(MAGIC);
    for d in [cube.width(), cube.height(), cube.bands()] {
        push_u32(&mut out, d)?;
    }
    for &v in cube.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_hsc(bytes: &[u8], path: &Path) -> Result<HsiCube> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not an HSC1 cube"));
    }
    let (w, h, s) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = w.checked_mul(h).and_then(|v| v.checked_mul(s)).ok_or_else(|| Error::format(path, "dims overflow"))?;
    let data = r.f32s(n)?.into_iter().map(f64::from).collect();
    r.finish()?;
    HsiCube::new(w, h, s, data).map_err(|e| Error::format(r.path(), e.to_string()))
}

pub fn read_hsc(path: &Path) -> Result<HsiCube> {
    decode_hsc(&read_bytes(path)?, path)
}

pub fn write_hsc(path: &Path, cube: &HsiCube) -> Result<()> {
    write_bytes(path, &encode_hsc(cube)?)
}
