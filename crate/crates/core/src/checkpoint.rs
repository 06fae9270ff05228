//! Versioned binary container for model parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! n_arrays     u32
//! repeated n_arrays times:
//!   len        u64
//!   values     len x f64 (IEEE-754 binary64, little-endian)
//! ```
//!
//! Floats are stored as raw bits, so a save/load cycle is bit-exact.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("invalid header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

pub fn write<W: Write, H: Serialize>(
    mut w: W,
    magic: &[u8; 8],
    header: &H,
    arrays: &[&[f64]],
) -> Result<(), CheckpointError> {
    let header = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for arr in arrays {
        w.write_all(&(arr.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(arr.len() * 8);
        for v in *arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read<R: Read, H: DeserializeOwned>(
    mut r: R,
    magic: &[u8; 8],
) -> Result<(H, Vec<Vec<f64>>), CheckpointError> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(CheckpointError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: H = serde_json::from_slice(&header)?;
    let n_arrays = read_u32(&mut r)?;
    let mut arrays = Vec::with_capacity(n_arrays as usize);
    for _ in 0..n_arrays {
        let len = read_u64(&mut r)? as usize;
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)?;
        arrays.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    Ok((header, arrays))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_preserves_bits() {
        let a = [1.0, -0.0, f64::MIN_POSITIVE, 1e-300, std::f64::consts::PI];
        let b: [f64; 0] = [];
        let mut buf = Vec::new();
        write(&mut buf, b"TESTMAGC", &"hdr", &[&a, &b]).unwrap();
        let (h, arrays): (String, _) = read(buf.as_slice(), b"TESTMAGC").unwrap();
        assert_eq!(h, "hdr");
        assert_eq!(arrays.len(), 2);
        let bits: Vec<u64> = arrays[0].iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, a.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(arrays[1].is_empty());
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut buf = Vec::new();
        write(&mut buf, b"TESTMAGC", &1u8, &[&[1.0]]).unwrap();
        assert!(matches!(
            read::<_, u8>(buf.as_slice(), b"OTHERMAG"),
            Err(CheckpointError::BadMagic { .. })
        ));
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read::<_, u8>(buf.as_slice(), b"TESTMAGC"),
            Err(CheckpointError::Io(_))
        ));
    }
}
