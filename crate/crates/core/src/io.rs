//! Little-endian binary sidecars.
//!
//! * `GDF1`: u32 rows, u32 cols, f32 row-major matrix.
//! * `GDS1`: u32 dim, f32 mean[dim], f32 std[dim].
//! * `GDP1`: u32 tensor count, then per tensor u32 name length, UTF-8 name,
//!   u32 rank, u32 dims[rank], f32 data.
//! * `GNS1`: noise schedule, u32 steps, f32 beta[steps], f32 alpha_bar[steps].

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"GDF1";
pub const STATS_MAGIC: &[u8; 4] = b"GDS1";
pub const PARAMS_MAGIC: &[u8; 4] = b"GDP1";
pub const SCHEDULE_MAGIC: &[u8; 4] = b"GNS1";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for &v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> std::result::Result<Self, String> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(format!("expected magic {}", String::from_utf8_lossy(magic)));
        }
        Ok(Reader { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("length overflow")?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + m.len() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    put_u32(&mut out, m.nrows() as u32);
    put_u32(&mut out, m.ncols() as u32);
    put_f32s(&mut out, m.iter());
    out
}

pub fn decode_matrix(buf: &[u8]) -> std::result::Result<Array2<f64>, String> {
    let mut r = Reader::new(buf, MATRIX_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows.checked_mul(cols).ok_or("size overflow")?)?;
    r.finish()?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized buffer"))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_file(path, &encode_matrix(m))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    decode_matrix(&read_file(path)?).map_err(|m| Error::format(path, m))
}

pub fn encode_vector_pair(magic: &[u8; 4], a: &Array1<f64>, b: &Array1<f64>) -> Vec<u8> {
    assert_eq!(a.len(), b.len());
    let mut out = Vec::with_capacity(8 + a.len() * 8);
    out.extend_from_slice(magic);
    put_u32(&mut out, a.len() as u32);
    put_f32s(&mut out, a.iter());
    put_f32s(&mut out, b.iter());
    out
}

pub fn decode_vector_pair(magic: &[u8; 4], buf: &[u8]) -> std::result::Result<(Array1<f64>, Array1<f64>), String> {
    let mut r = Reader::new(buf, magic)?;
    let n = r.u32()? as usize;
    let a = r.f32s(n)?;
    let b = r.f32s(n)?;
    r.finish()?;
    Ok((Array1::from(a), Array1::from(b)))
}

pub fn read_vector_pair(magic: &[u8; 4], path: &Path) -> Result<(Array1<f64>, Array1<f64>)> {
    decode_vector_pair(magic, &read_file(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_vector_pair(magic: &[u8; 4], path: &Path, a: &Array1<f64>, b: &Array1<f64>) -> Result<()> {
    write_file(path, &encode_vector_pair(magic, a, b))
}

pub fn encode_tensors(tensors: &[(String, ArrayD<f64>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.ndim() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.iter());
    }
    out
}

pub fn decode_tensors(buf: &[u8]) -> std::result::Result<Vec<(String, ArrayD<f64>)>, String> {
    let mut r = Reader::new(buf, PARAMS_MAGIC)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<_, _>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("size overflow")?;
        let data = r.f32s(n)?;
        out.push((name, ArrayD::from_shape_vec(IxDyn(&dims), data).expect("sized buffer")));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_tensors(path: &Path, tensors: &[(String, ArrayD<f64>)]) -> Result<()> {
    write_file(path, &encode_tensors(tensors))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    decode_tensors(&read_file(path)?).map_err(|m| Error::format(path, m))
}
