//! VAEW weight files.
//!
//! ```text
//! "VAEW"                 4 bytes
//! version = 1            u32
//! input_size             u32
//! latent_dim             u32
//! max_flow               f32
//! n_conv = 4             u32
//! conv channels          n_conv × u32
//! tensors                f32 each, in `param_layout` order
//! ```
//!
//! Everything little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Vae, VaeArchitecture, VaeWeights};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"VAEW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_weights(path: impl AsRef<Path>, weights: &VaeWeights) -> Result<()> {
    let path = path.as_ref();
    let a = weights.arch();
    let mut buf = Vec::with_capacity(40 + 4 * weights.param_count());
    buf.extend_from_slice(WEIGHTS_MAGIC);
    for v in [WEIGHTS_VERSION, a.input_size as u32, a.latent_dim as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&a.max_flow.to_le_bytes());
    buf.extend_from_slice(&(a.conv_channels.len() as u32).to_le_bytes());
    for &c in &a.conv_channels {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for p in weights.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::io(
                self.path,
                std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "weights file truncated"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<VaeWeights> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format("bad weights magic"));
    }
    let version = cur.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!("unsupported weights version {version}")));
    }
    let input_size = cur.u32()? as usize;
    let latent_dim = cur.u32()? as usize;
    let max_flow = cur.f32()?;
    let n_conv = cur.u32()? as usize;
    if n_conv != 4 {
        return Err(Error::shape(format!("expected 4 conv layers, file has {n_conv}")));
    }
    let mut conv_channels = [0usize; 4];
    for c in conv_channels.iter_mut() {
        *c = cur.u32()? as usize;
    }
    let arch = VaeArchitecture {
        input_size,
        conv_channels,
        latent_dim,
        max_flow,
    };
    arch.validate()?;
    let n = Vae::<f32>::zeros(arch.clone()).param_count();
    let payload = cur.take(4 * n)?.to_vec();
    if cur.pos != bytes.len() {
        return Err(Error::shape(format!(
            "{} trailing bytes after {n} parameters",
            bytes.len() - cur.pos
        )));
    }
    let params: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("weights contain non-finite values"));
    }
    Ok(Vae::from_params(arch, params).expect("length checked"))
}

/// Loads and checks the stored architecture against `expected`.
pub fn load_weights_expecting(path: impl AsRef<Path>, expected: &VaeArchitecture) -> Result<VaeWeights> {
    let w = load_weights(path)?;
    let a = w.arch();
    if a.input_size != expected.input_size
        || a.latent_dim != expected.latent_dim
        || a.conv_channels != expected.conv_channels
    {
        return Err(Error::shape(format!(
            "weights have input {} latent {} channels {:?}; expected input {} latent {} channels {:?}",
            a.input_size,
            a.latent_dim,
            a.conv_channels,
            expected.input_size,
            expected.latent_dim,
            expected.conv_channels
        )));
    }
    Ok(w)
}
