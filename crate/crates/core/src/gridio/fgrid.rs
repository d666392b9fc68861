use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Grid;
use crate::error::{Error, Result};

pub const FGRID_MAGIC: &[u8; 4] = b"FGRD";
pub const FGRID_VERSION: u32 = 1;
/// magic + version + channels + height + width.
pub const FGRID_HEADER_LEN: usize = 20;

pub fn write_fgrid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_fgrid(&mut w, grid).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_fgrid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_fgrid(&bytes)
}

pub(crate) fn encode_fgrid(w: &mut impl Write, grid: &Grid) -> std::io::Result<()> {
    w.write_all(FGRID_MAGIC)?;
    for v in [
        FGRID_VERSION,
        grid.channels() as u32,
        grid.height() as u32,
        grid.width() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in grid.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn decode_fgrid(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < FGRID_HEADER_LEN {
        return Err(Error::format("FGRID header truncated"));
    }
    if &bytes[..4] != FGRID_MAGIC {
        return Err(Error::format("bad FGRID magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FGRID_VERSION {
        return Err(Error::format(format!("unsupported FGRID version {version}")));
    }
    let (c, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let expected = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::format("FGRID dimensions overflow"))?;
    let payload = &bytes[FGRID_HEADER_LEN..];
    if payload.len() != expected * 4 {
        return Err(Error::shape(format!(
            "FGRID header claims {c}x{h}x{w} ({expected} values) but payload holds {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Grid::from_vec(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_flow_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flow.fgrid");
        write_fgrid(&p, &Grid::zeros(2, 4, 4)).unwrap();
        // 2*4*4 values * 4 bytes
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 20 + 128);
    }

    #[test]
    fn payload_size_mismatch_is_rejected() {
        let mut bytes = Vec::new();
        encode_fgrid(&mut bytes, &Grid::zeros(2, 4, 4)).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(decode_fgrid(&bytes), Err(Error::Shape(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = Vec::new();
        encode_fgrid(&mut bytes, &Grid::zeros(1, 1, 1)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_fgrid(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 2;
        assert!(matches!(decode_fgrid(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn header_is_little_endian() {
        let mut bytes = Vec::new();
        encode_fgrid(&mut bytes, &Grid::filled(3, 1, 2, 1.0)).unwrap();
        assert_eq!(&bytes[..8], b"FGRD\x01\x00\x00\x00");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            c in 1usize..4, h in 1usize..6, w in 1usize..6,
            vals in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO, 144),
        ) {
            let n = c * h * w;
            let g = Grid::from_vec(c, h, w, vals[..n].to_vec()).unwrap();
            let mut bytes = Vec::new();
            encode_fgrid(&mut bytes, &g).unwrap();
            let back = decode_fgrid(&bytes).unwrap();
            prop_assert_eq!(back.shape(), g.shape());
            let a: Vec<u32> = g.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
