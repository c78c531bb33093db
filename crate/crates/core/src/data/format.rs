//! Binary tensor files.
//!
//! Layout, all little-endian: `b"ACTF"`, `u16` version, `u16` rank,
//! `rank × u32` extents, then `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"ACTF";
pub const VERSION: u16 = 1;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

/// Serializes `x` at 32-bit precision.
pub fn encode_tensor<T: Scalar>(x: &Tensor<T>) -> Result<Vec<u8>> {
    let dims = x.dims();
    let rank = u16::try_from(dims.len())
        .map_err(|_| Error::Input(format!("rank {} does not fit the file header", dims.len())))?;
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * x.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in dims {
        if d == 0 {
            return Err(Error::Input(format!("zero extent in {dims:?}")));
        }
        let d = u32::try_from(d).map_err(|_| Error::Input(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (i, &v) in x.data().iter().enumerate() {
        let v = v.as_f32();
        if !v.is_finite() {
            return Err(Error::Input(format!(
                "element {i} is not representable as a finite f32"
            )));
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(
                self.bytes.len(),
                format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a complete tensor file image; trailing bytes are rejected.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic, expected \"ACTF\""));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format_err(
            4,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let rank = r.u16("rank")? as usize;
    if rank == 0 {
        return Err(format_err(6, "rank 0: dims must not be empty"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let at = r.pos;
        let d = r.u32("dims")? as usize;
        if d == 0 {
            return Err(format_err(at, "zero extent"));
        }
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| format_err(at, "element count overflows"))?;
        dims.push(d);
    }
    let payload_at = r.pos;
    let expected = numel
        .checked_mul(4)
        .ok_or_else(|| format_err(payload_at, "payload size overflows"))?;
    let available = bytes.len() - payload_at;
    if available < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {available} of {expected} bytes"),
        ));
    }
    if available > expected {
        return Err(format_err(
            payload_at + expected,
            format!("{} trailing bytes after payload", available - expected),
        ));
    }
    let mut data = Vec::with_capacity(numel);
    for (i, c) in bytes[payload_at..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(format_err(payload_at + 4 * i, "non-finite value"));
        }
        data.push(T::of_f32(v));
    }
    Tensor::new(dims, data)
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_tensor<T: Scalar>(path: &Path, x: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_tensor(x)?)
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_tensor(&fs::read(path)?)
}
