//! Binary frame cache.
//!
//! Little-endian layout:
//!
//! ```text
//! header:  magic b"SSMF" | version: u32 | m: u32 | n: u32 | s: u32
//! record:  t: u64 | nnz: u64 | nnz x (row: u32 | col: u32 | val: f64)
//! ```
//!
//! Records follow the header back to back until end of file.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::stream::MatrixFrame;

pub const FRAME_CACHE_MAGIC: [u8; 4] = *b"SSMF";
pub const FRAME_CACHE_VERSION: u32 = 1;

/// Dimensions stored in a frame cache header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub m: u32,
    pub n: u32,
    pub s: u32,
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Writes one `(t, nnz, entries)` record.
pub fn write_frame_record<W: Write>(w: &mut W, frame: &MatrixFrame) -> io::Result<()> {
    write_u64(w, frame.t())?;
    write_u64(w, frame.nnz() as u64)?;
    for &(r, c, v) in frame.entries() {
        write_u32(w, r)?;
        write_u32(w, c)?;
        write_f64(w, v)?;
    }
    Ok(())
}

/// Reads one record, or `None` at a clean end of input.
pub fn read_frame_record<R: Read>(r: &mut R, shape: (usize, usize)) -> Result<Option<MatrixFrame>> {
    let mut first = [0u8; 8];
    let mut filled = 0;
    while filled < first.len() {
        match r.read(&mut first[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(Error::Format("truncated frame record".into())),
            n => filled += n,
        }
    }
    let t = u64::from_le_bytes(first);
    let nnz = read_u64(r).map_err(truncated)?;
    let cap = usize::try_from(nnz)
        .ok()
        .filter(|&n| n <= shape.0.saturating_mul(shape.1))
        .ok_or_else(|| Error::Format(format!("frame t={t} claims {nnz} entries")))?;
    let mut entries = Vec::with_capacity(cap);
    for _ in 0..cap {
        let row = read_u32(r).map_err(truncated)?;
        let col = read_u32(r).map_err(truncated)?;
        let val = read_f64(r).map_err(truncated)?;
        entries.push((row, col, val));
    }
    MatrixFrame::from_entries(t, shape, entries).map(Some)
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated frame record".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_frame_cache<W: Write>(mut w: W, header: CacheHeader, frames: &[MatrixFrame]) -> Result<()> {
    w.write_all(&FRAME_CACHE_MAGIC)?;
    write_u32(&mut w, FRAME_CACHE_VERSION)?;
    write_u32(&mut w, header.m)?;
    write_u32(&mut w, header.n)?;
    write_u32(&mut w, header.s)?;
    for f in frames {
        if f.shape() != (header.m as usize, header.n as usize) {
            return Err(Error::ShapeMismatch(format!(
                "frame t={} is {:?}, cache header is {}x{}",
                f.t(),
                f.shape(),
                header.m,
                header.n
            )));
        }
        write_frame_record(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frame_cache<R: Read>(mut r: R) -> Result<(CacheHeader, Vec<MatrixFrame>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("missing frame cache header".into()))?;
    if magic != FRAME_CACHE_MAGIC {
        return Err(Error::Format("not a frame cache (bad magic)".into()));
    }
    let version = read_u32(&mut r).map_err(truncated)?;
    if version != FRAME_CACHE_VERSION {
        return Err(Error::Format(format!("unsupported frame cache version {version}")));
    }
    let header = CacheHeader {
        m: read_u32(&mut r).map_err(truncated)?,
        n: read_u32(&mut r).map_err(truncated)?,
        s: read_u32(&mut r).map_err(truncated)?,
    };
    let shape = (header.m as usize, header.n as usize);
    let mut frames = Vec::new();
    while let Some(f) = read_frame_record(&mut r, shape)? {
        frames.push(f);
    }
    Ok((header, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let f = MatrixFrame::from_entries(7, (2, 3), [(1, 2, 0.5)]).unwrap();
        let mut buf = Vec::new();
        write_frame_cache(&mut buf, CacheHeader { m: 2, n: 3, s: 4 }, &[f]).unwrap();
        let mut expected = b"SSMF".to_vec();
        for v in [1u32, 2, 3, 4] {
            expected.extend(v.to_le_bytes());
        }
        expected.extend(7u64.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(0.5f64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn truncated_record_is_an_error() {
        let f = MatrixFrame::from_entries(0, (2, 2), [(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let mut buf = Vec::new();
        write_frame_cache(&mut buf, CacheHeader { m: 2, n: 2, s: 1 }, &[f]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_frame_cache(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic() {
        assert!(read_frame_cache(&b"NOPE\x01\0\0\0"[..]).is_err());
    }
}
