use std::path::Path;

use super::{parse_kv, push_u32, read_bytes, render_kv, write_bytes, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"3DTC";

/// Tensor values at the precision of the run that wrote them.
#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact for both widths.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Values::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Values::F64(v) => v.clone(),
        }
    }

    fn width(&self) -> usize {
        match self {
            Values::F32(_) => 4,
            Values::F64(_) => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Values,
}

/// `3DTC`, a length-prefixed `key=value` block, then tensor records in order.
/// A record is name, shape, value width in bytes (4 or 8), then LE values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let text = render_kv(&self.meta);
        push_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        push_u32(&mut out, self.records.len())?;
        for r in &self.records {
            if r.shape.iter().product::<usize>() != r.data.len() {
                return Err(Error::shape(format!("record {} shape {:?} vs {} values", r.name, r.shape, r.data.len())));
            }
            push_u32(&mut out, r.name.len())?;
            out.extend_from_slice(r.name.as_bytes());
            push_u32(&mut out, r.shape.len())?;
            for &d in &r.shape {
                push_u32(&mut out, d)?;
            }
            push_u32(&mut out, r.data.width())?;
            match &r.data {
                Values::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint"));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::format(path, e.to_string()))?;
        let meta = parse_kv(text).map_err(|e| Error::format(path, e.to_string()))?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::format(path, e.to_string()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product();
            let data = match r.u32()? {
                4 => Values::F32(r.f32s(n)?),
                8 => Values::F64(r.f64s(n)?),
                w => return Err(Error::format(path, format!("record {name}: value width {w}"))),
            };
            records.push(Record { name, shape, data });
        }
        r.finish()?;
        Ok(Checkpoint { meta, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_bytes(path)?, path)
    }
}
