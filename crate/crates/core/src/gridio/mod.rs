//! Planar `f32` grids and the file formats used to move them around.

mod fgrid;
mod manifest;
mod pnm;

pub use fgrid::{read_fgrid, write_fgrid, FGRID_HEADER_LEN, FGRID_MAGIC, FGRID_VERSION};
pub use manifest::{read_manifest, write_manifest, EpisodeManifest, Label};
pub use pnm::{read_pgm, write_pgm, write_ppm};

use crate::error::{Error, Result};

/// A `channels × height × width` array of finite 32-bit reals, channel-major
/// and row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Grid {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite value at index {i}")));
        }
        Ok(Grid {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a grid from `f(channel, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Grid {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// A copy of channel `c` as a single-channel grid.
    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numeric(format!("{what}: non-finite value at index {i}"))),
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Replicate-padded read from channel `c`.
    #[inline]
    pub fn get_clamped(&self, c: usize, y: isize, x: isize) -> f32 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.get(c, yy, xx)
    }
}

/// Bilinear resampling with pixel-centre alignment: output pixel `j` samples
/// source coordinate `(j + 0.5)·in/out − 0.5`, clamped to the source extent.
/// Downsampling by exactly 2 therefore yields 2×2 block means.
pub fn resize_bilinear(g: &Grid, out_h: usize, out_w: usize) -> Grid {
    let (c, h, w) = g.shape();
    if (h, w) == (out_h, out_w) {
        return g.clone();
    }
    let coord = |j: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let s = ((j as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|j| coord(j, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|j| coord(j, w, out_w)).collect();
    Grid::from_fn(c, out_h, out_w, |ch, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = g.get(ch, y0, x0) * (1.0 - fx) + g.get(ch, y0, x1) * fx;
        let bot = g.get(ch, y1, x0) * (1.0 - fx) + g.get(ch, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}
