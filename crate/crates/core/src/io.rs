//! Binary file formats.
//!
//! | magic      | header                 | payload                                   |
//! |------------|------------------------|-------------------------------------------|
//! | `BRCDCOD1` | u32 N, u32 b           | N rows of `ceil(b/8)` packed bytes         |
//! | `BRCDEMB1` | u32 N, u32 dim         | `N * dim` f32, row-major                   |
//! | `BRCDLAB1` | u32 N                  | N u32 labels                               |
//! | `BRCDSTU1` | u32 arch, u32 dim, u32 hidden, u32 b, u32 P | P f32 parameters      |
//!
//! All integers and floats are little-endian. Codes read from disk get ids
//! `0..N` in file order.

use std::fs;
use std::path::Path;

use crate::codes::{BitCode, CodeMatrix};
use crate::data::EmbeddingMatrix;
use crate::distill::{StudentArch, StudentModel};
use crate::error::{BrcdError, Result};

pub const CODES_MAGIC: &[u8; 8] = b"BRCDCOD1";
pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"BRCDEMB1";
pub const LABELS_MAGIC: &[u8; 8] = b"BRCDLAB1";
pub const STUDENT_MAGIC: &[u8; 8] = b"BRCDSTU1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 8]) -> std::result::Result<Self, String> {
        if buf.len() < 8 || &buf[..8] != magic {
            return Err(format!(
                "expected magic {}",
                String::from_utf8_lossy(magic)
            ));
        }
        Ok(Reader { buf, pos: 8 })
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err("truncated file".to_string()),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| BrcdError::invalid(format!("{what} {n} exceeds u32")))
}

pub fn encode_codes(codes: &CodeMatrix) -> Result<Vec<u8>> {
    let row_bytes = codes.bits().div_ceil(8);
    let mut out = Vec::with_capacity(16 + codes.len() * row_bytes);
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&to_u32(codes.len(), "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(codes.bits(), "code length")?.to_le_bytes());
    for c in codes.rows() {
        out.extend_from_slice(&c.to_bytes());
    }
    Ok(out)
}

pub fn decode_codes(buf: &[u8]) -> std::result::Result<CodeMatrix, String> {
    let mut r = Reader::new(buf, CODES_MAGIC)?;
    let n = r.u32()? as usize;
    let bits = r.u32()? as usize;
    if n == 0 || bits == 0 {
        return Err("empty code matrix".to_string());
    }
    let row_bytes = bits.div_ceil(8);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let c = BitCode::from_bytes(r.take(row_bytes)?, bits).map_err(|e| e.to_string())?;
        rows.push(c);
    }
    r.finish()?;
    CodeMatrix::from_codes(&rows).map_err(|e| e.to_string())
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + m.values().len() * 4);
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    out.extend_from_slice(&to_u32(m.len(), "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(m.dim(), "dimension")?.to_le_bytes());
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(buf: &[u8]) -> std::result::Result<EmbeddingMatrix, String> {
    let mut r = Reader::new(buf, EMBEDDINGS_MAGIC)?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let count = n.checked_mul(dim).ok_or("size overflow")?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f32()? as f64);
    }
    r.finish()?;
    EmbeddingMatrix::new(dim, values).map_err(|e| e.to_string())
}

pub fn encode_labels(labels: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + labels.len() * 4);
    out.extend_from_slice(LABELS_MAGIC);
    out.extend_from_slice(&to_u32(labels.len(), "label count")?.to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(buf: &[u8]) -> std::result::Result<Vec<u32>, String> {
    let mut r = Reader::new(buf, LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    let labels = (0..n).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(labels)
}

pub fn encode_student(s: &StudentModel) -> Result<Vec<u8>> {
    let (tag, hidden) = match s.arch() {
        StudentArch::Linear => (0u32, 0usize),
        StudentArch::Mlp { hidden } => (1u32, hidden),
    };
    let mut out = Vec::new();
    out.extend_from_slice(STUDENT_MAGIC);
    for v in [
        tag,
        to_u32(s.input_dim(), "input dim")?,
        to_u32(hidden, "hidden width")?,
        to_u32(s.bits(), "code length")?,
        to_u32(s.params().len(), "parameter count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &p in s.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_student(buf: &[u8]) -> std::result::Result<StudentModel, String> {
    let mut r = Reader::new(buf, STUDENT_MAGIC)?;
    let tag = r.u32()?;
    let dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let bits = r.u32()? as usize;
    let count = r.u32()? as usize;
    let arch = match tag {
        0 => StudentArch::Linear,
        1 => StudentArch::Mlp { hidden },
        t => return Err(format!("unknown student architecture tag {t}")),
    };
    let params = (0..count)
        .map(|_| r.f32().map(|v| v as f64))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    r.finish()?;
    StudentModel::from_params(arch, dim, bits, params).map_err(|e| e.to_string())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| BrcdError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| BrcdError::Io { path: path.to_path_buf(), source })
}

fn format_err(path: &Path) -> impl FnOnce(String) -> BrcdError + '_ {
    move |msg| BrcdError::Format { path: path.to_path_buf(), msg }
}

pub fn read_codes(path: &Path) -> Result<CodeMatrix> {
    decode_codes(&read_file(path)?).map_err(format_err(path))
}

pub fn write_codes(path: &Path, codes: &CodeMatrix) -> Result<()> {
    write_file(path, &encode_codes(codes)?)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(&read_file(path)?).map_err(format_err(path))
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    write_file(path, &encode_embeddings(m)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    decode_labels(&read_file(path)?).map_err(format_err(path))
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    write_file(path, &encode_labels(labels)?)
}

pub fn read_student(path: &Path) -> Result<StudentModel> {
    decode_student(&read_file(path)?).map_err(format_err(path))
}

pub fn write_student(path: &Path, s: &StudentModel) -> Result<()> {
    write_file(path, &encode_student(s)?)
}
