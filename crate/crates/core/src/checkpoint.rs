//! Binary parameter checkpoints.
//!
//! Layout: the 5 bytes `GPTR1`, then one record per tensor until end of file:
//!
//! ```text
//! u32 name_len | name (UTF-8) | u32 rank | u32 extent * rank | f32 value * product(extents)
//! ```
//!
//! All integers and floats are little-endian. Layer `x` contributes records
//! `x.weight` and `x.bias`; non-trainable buffers use their own names.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerParams, ParamVisitor, Parameterized};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 5] = b"GPTR1";

pub type Records = Vec<(String, Tensor<f32>)>;

struct Collect<'a>(&'a mut Records);

impl<T: Scalar> ParamVisitor<T> for Collect<'_> {
    fn param(&mut self, name: &str, p: &mut LayerParams<T>) {
        self.0.push((format!("{name}.weight"), p.weight.cast()));
        self.0.push((format!("{name}.bias"), p.bias.cast()));
    }
    fn buffer(&mut self, name: &str, t: &mut Tensor<T>) {
        self.0.push((name.to_string(), t.cast()));
    }
}

pub fn collect<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M) -> Records {
    let mut out = Vec::new();
    model.visit("", &mut Collect(&mut out));
    out
}

pub fn encode(records: &Records) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    for (name, t) in records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Records, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("bad magic".into());
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| e.to_string())?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
        out.push((name, t));
    }
    Ok(out)
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated at byte {} (wanted {n} more)", self.pos)
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M, path: &Path) -> Result<()> {
    std::fs::write(path, encode(&collect(model)))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Records> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|message| Error::Format {
        what: "checkpoint",
        path: path.to_path_buf(),
        message,
    })
}

struct Assign<'a> {
    records: BTreeMap<&'a str, &'a Tensor<f32>>,
    used: usize,
    errors: Vec<String>,
}

impl Assign<'_> {
    fn fill<T: Scalar>(&mut self, name: &str, dst: &mut Tensor<T>) {
        match self.records.get(name) {
            None => self.errors.push(format!("missing {name}")),
            Some(src) if src.shape() != dst.shape() => {
                self.errors.push(format!("{name}: checkpoint {:?}, model {:?}", src.shape(), dst.shape()))
            }
            Some(src) => {
                *dst = src.cast();
                self.used += 1;
            }
        }
    }
}

impl<T: Scalar> ParamVisitor<T> for Assign<'_> {
    fn param(&mut self, name: &str, p: &mut LayerParams<T>) {
        self.fill(&format!("{name}.weight"), &mut p.weight);
        self.fill(&format!("{name}.bias"), &mut p.bias);
    }
    fn buffer(&mut self, name: &str, t: &mut Tensor<T>) {
        self.fill(name, t);
    }
}

/// Copies records into a model whose architecture must match exactly.
pub fn load_into<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M, records: &Records) -> Result<()> {
    let mut a = Assign {
        records: records.iter().map(|(n, t)| (n.as_str(), t)).collect(),
        used: 0,
        errors: Vec::new(),
    };
    model.visit("", &mut a);
    if a.used != records.len() && a.errors.is_empty() {
        a.errors.push(format!("{} unexpected records", records.len() - a.used));
    }
    if a.errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Incompatible(a.errors.join("; ")))
    }
}

pub fn find<'a>(records: &'a Records, name: &str) -> Option<&'a Tensor<f32>> {
    records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}
