//! PMX1 binary matrices: magic `PMX1`, u64-LE rows, u64-LE cols, then
//! rows·cols f64-LE values in row-major order. No padding, no checksum.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"PMX1";
const HEADER_LEN: usize = 20;

pub fn encode_matrix(a: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * a.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(a.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(a.cols() as u64).to_le_bytes());
    for v in a.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8], source: &str) -> Result<Matrix> {
    let fail = |offset: usize, message: String| Error::Format {
        path: source.to_string(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 {
        return Err(fail(bytes.len(), "truncated magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
    let rows = read_u64(4);
    let cols = read_u64(12);
    if rows == 0 {
        return Err(fail(4, "row count is zero".into()));
    }
    if cols == 0 {
        return Err(fail(12, "column count is zero".into()));
    }
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(4, format!("dimension overflow: {rows}x{cols}")))?;
    if bytes.len() < payload {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: expected {payload} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > payload {
        return Err(fail(payload, format!("{} trailing bytes", bytes.len() - payload)));
    }
    let mut data = Vec::with_capacity((payload - HEADER_LEN) / 8);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 8 * i, "non-finite value".into()));
        }
        data.push(v);
    }
    Matrix::new(rows as usize, cols as usize, data)
}

pub fn save_matrix(a: &Matrix, path: &Path) -> Result<()> {
    std::fs::write(path, encode_matrix(a)).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, &path.display().to_string())
}
