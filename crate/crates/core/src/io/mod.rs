//! On-disk formats.
//!
//! Cube files (`HSC1`) are little-endian:
//!
//! | bytes | field                      |
//! |-------|----------------------------|
//! | 4     | magic `HSC1`               |
//! | 4     | version (u32, currently 1) |
//! | 12    | B, H, W (u32 each)         |
//! | 1     | dtype (0 = f32)            |
//! | 4·BHW | band-major f32 payload     |

mod kv;
mod run_config;

pub use kv::KeyValues;
pub use run_config::{write_noise_kv, Profile, RunConfig};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::noise::HsiCube;
use crate::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const CUBE_VERSION: u32 = 1;
pub const CUBE_HEADER_LEN: usize = 21;
const DTYPE_F32: u8 = 0;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_cube_to<W: Write>(cube: &HsiCube, mut w: W) -> Result<()> {
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&CUBE_VERSION.to_le_bytes())?;
    for d in cube.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&[DTYPE_F32])?;
    let mut buf = Vec::with_capacity(cube.data().len() * 4);
    for v in cube.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_cube_from<R: Read>(mut r: R) -> Result<HsiCube> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated cube header".into()))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::Format("not a cube file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CUBE_VERSION {
        return Err(Error::Format(format!("unsupported cube version {version}")));
    }
    let (b, h, w) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {}", dtype[0])));
    }
    let n = b
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * 4 {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for {b}×{h}×{w}",
            payload.len(),
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    HsiCube::new(b, h, w, data)
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    write_cube_to(cube, BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    read_cube_from(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let cube = HsiCube::new(2, 1, 3, (0..6).map(|i| i as f32).collect()).unwrap();
        let mut buf = Vec::new();
        write_cube_to(&cube, &mut buf).unwrap();
        assert_eq!(buf.len(), CUBE_HEADER_LEN + 24);
        assert_eq!(&buf[..4], b"HSC1");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(&buf[16..20], &[3, 0, 0, 0]);
        assert_eq!(buf[20], 0);
        assert_eq!(&buf[25..29], &1.0f32.to_le_bytes());
        assert_eq!(read_cube_from(&buf[..]).unwrap(), cube);
    }

    #[test]
    fn rejects_corrupt_files() {
        let cube = HsiCube::zeros(1, 2, 2);
        let mut buf = Vec::new();
        write_cube_to(&cube, &mut buf).unwrap();
        assert!(matches!(read_cube_from(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_cube_from(&bad[..]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[20] = 1;
        assert!(matches!(read_cube_from(&bad[..]), Err(Error::Format(_))));
    }
}
