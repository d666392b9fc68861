//! Strided 2-D convolution and transposed convolution via im2col/col2im.
//!
//! Weights are row-major: a convolution stores `[out_c][in_c][k][k]`, a
//! transposed convolution stores `[in_c][out_c][k][k]` (it is the adjoint of
//! the convolution mapping `out_c` channels back to `in_c`).

use crate::linalg::{gemm, Mat, Real};

/// Geometry of a convolution from `(in_c, in_h, in_w)` to `(out_c, out_h, out_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h() * self.out_w()
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch_len()
    }
}

/// `cols[(c*k + ky)*k + kx][oy*out_w + ox] = x[c][oy*s - p + ky][ox*s - p + kx]`, zero outside.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * n);
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `cols` into `x` (which is zeroed first).
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    x.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.in_c {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = W·im2col(x) + b`. `cols` receives the im2col matrix for reuse in backprop.
pub fn conv_forward<T: Real>(w: &[T], b: &[T], x: &[T], g: &ConvGeom, cols: &mut Vec<T>, y: &mut [T]) {
    let n = g.out_h() * g.out_w();
    cols.resize(g.patch_len() * n, T::zero());
    im2col(x, g, cols);
    for (c, chunk) in y.chunks_mut(n).enumerate() {
        chunk.iter_mut().for_each(|v| *v = b[c]);
    }
    gemm(
        Mat::new(w, g.out_c, g.patch_len()),
        Mat::new(cols, g.patch_len(), n),
        y,
        T::one(),
    );
}

/// Accumulates `dw`, `db`; writes `dx` when requested.
pub fn conv_backward<T: Real>(
    w: &[T],
    cols: &[T],
    dy: &[T],
    g: &ConvGeom,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n = g.out_h() * g.out_w();
    let pl = g.patch_len();
    for (c, chunk) in dy.chunks(n).enumerate() {
        db[c] += chunk.iter().copied().sum::<T>();
    }
    gemm(Mat::new(dy, g.out_c, n), Mat::new(cols, pl, n).t(), dw, T::one());
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); pl * n];
        gemm(Mat::new(w, g.out_c, pl).t(), Mat::new(dy, g.out_c, n), &mut dcols, T::zero());
        col2im(&dcols, g, dx);
    }
}

/// Transposed convolution mapping `g.out_c` channels at `(out_h, out_w)` up to
/// `g.in_c` channels at `(in_h, in_w)`; `w` is `[g.out_c][g.in_c][k][k]`.
pub fn tconv_forward<T: Real>(w: &[T], b: &[T], x: &[T], g: &ConvGeom, y: &mut [T]) {
    let n = g.out_h() * g.out_w();
    let pl = g.patch_len();
    let mut cols = vec![T::zero(); pl * n];
    gemm(Mat::new(w, g.out_c, pl).t(), Mat::new(x, g.out_c, n), &mut cols, T::zero());
    col2im(&cols, g, y);
    let plane = g.in_h * g.in_w;
    for (c, chunk) in y.chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v += b[c]);
    }
}

/// Backprop through [`tconv_forward`]. `dy` lives on the large grid.
pub fn tconv_backward<T: Real>(
    w: &[T],
    x: &[T],
    dy: &[T],
    g: &ConvGeom,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n = g.out_h() * g.out_w();
    let pl = g.patch_len();
    let plane = g.in_h * g.in_w;
    for (c, chunk) in dy.chunks(plane).enumerate() {
        db[c] += chunk.iter().copied().sum::<T>();
    }
    let mut dcols = vec![T::zero(); pl * n];
    im2col(dy, g, &mut dcols);
    gemm(Mat::new(x, g.out_c, n), Mat::new(&dcols, pl, n).t(), dw, T::one());
    if let Some(dx) = dx {
        gemm(Mat::new(w, g.out_c, pl), Mat::new(&dcols, pl, n), dx, T::zero());
    }
}

/// `y = W·x + b` with `W` `[out][in]`.
pub fn dense_forward<T: Real>(w: &[T], b: &[T], x: &[T], y: &mut [T]) {
    y.copy_from_slice(b);
    gemm(Mat::new(w, b.len(), x.len()), Mat::new(x, x.len(), 1), y, T::one());
}

pub fn dense_backward<T: Real>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let (o, i) = (dy.len(), x.len());
    for (d, g) in db.iter_mut().zip(dy) {
        *d += *g;
    }
    gemm(Mat::new(dy, o, 1), Mat::new(x, 1, i), dw, T::one());
    if let Some(dx) = dx {
        gemm(Mat::new(w, o, i).t(), Mat::new(dy, o, 1), dx, T::one());
    }
}
