//! Binary PGM (P5) input/output and PPM (P6) output, maxval 255.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::Grid;
use crate::error::{Error, Result};

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (width, height, offset) = parse_header(&bytes)?;
    let n = width * height;
    let payload = &bytes[offset..];
    if payload.len() < n {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("PGM payload has {} of {n} bytes", payload.len()),
            ),
        ));
    }
    let data = payload[..n].iter().map(|&b| b as f32 / 255.0).collect();
    Grid::from_vec(1, height, width, data)
}

/// Returns `(width, height, payload_offset)`.
fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("PGM header truncated")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("malformed PGM header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PGM header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PGM header must end with one whitespace byte")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PGM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("PGM has zero size"));
    }
    Ok((width, height, pos))
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel grid as P5, clamping to [0,1] and rounding to the
/// nearest of 256 levels.
pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    if grid.channels() != 1 {
        return Err(Error::shape(format!(
            "PGM needs 1 channel, grid has {}",
            grid.channels()
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.data().iter().map(|&v| quantize(v)));
    write_bytes(path.as_ref(), &out)
}

/// Writes a three-channel grid as P6 with interleaved RGB samples.
pub fn write_ppm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    if grid.channels() != 3 {
        return Err(Error::shape(format!(
            "PPM needs 3 channels, grid has {}",
            grid.channels()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    let n = grid.plane_len();
    let (r, g, b) = (grid.channel(0), grid.channel(1), grid.channel(2));
    out.reserve(3 * n);
    for i in 0..n {
        out.extend([quantize(r[i]), quantize(g[i]), quantize(b[i])]);
    }
    write_bytes(path.as_ref(), &out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
