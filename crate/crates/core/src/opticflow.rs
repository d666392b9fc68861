//! Dense optic flow by windowed least squares on the brightness-constancy
//! constraint `Ix·u + Iy·v + It = 0` (single-scale Lucas–Kanade).
//!
//! Per pixel the 2×2 normal equations
//!
//! ```text
//! | ΣIx² + λ   ΣIxIy    | |u|     |ΣIxIt|
//! | ΣIxIy      ΣIy² + λ | |v| = − |ΣIyIt|
//! ```
//!
//! are solved over a `(2r+1)²` uniform window. The Tikhonov term `λ` keeps
//! flat and aperture-limited pixels solvable and biases them to zero flow.
//! Borders use replicate padding throughout.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub window_radius: usize,
    pub lambda: f32,
    /// Gaussian pre-smoothing of both frames; 0 disables it.
    pub presmooth_sigma: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            window_radius: 2,
            lambda: 1e-3,
            presmooth_sigma: 1.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::validation("window_radius must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda must be finite and >= 0"));
        }
        if !(self.presmooth_sigma >= 0.0 && self.presmooth_sigma.is_finite()) {
            return Err(Error::validation("presmooth_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Spatial and temporal intensity derivatives of a frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub ix: Grid,
    pub iy: Grid,
    pub it: Grid,
}

fn check_pair(a: &Grid, b: &Grid) -> Result<()> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::shape("optic flow needs single-channel frames"));
    }
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "frame shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.height() == 0 || a.width() == 0 {
        return Err(Error::shape("empty frame"));
    }
    a.ensure_finite("frame_a")?;
    b.ensure_finite("frame_b")
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicate padding. `sigma == 0` copies.
pub fn gaussian_blur(g: &Grid, sigma: f32) -> Grid {
    if sigma <= 0.0 {
        return g.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (c, h, w) = g.shape();
    let mut tmp = Grid::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * g.get_clamped(ch, y as isize, x as isize + i as isize - r);
                }
                tmp.set(ch, y, x, acc);
            }
        }
    }
    let mut out = Grid::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * tmp.get_clamped(ch, y as isize + i as isize - r, x as isize);
                }
                out.set(ch, y, x, acc);
            }
        }
    }
    out
}

/// Central differences of the two-frame average for `ix`/`iy`, plain
/// difference for `it`.
pub fn gradients(frame_a: &Grid, frame_b: &Grid, params: &FlowParams) -> Result<GradientField> {
    check_pair(frame_a, frame_b)?;
    params.validate()?;
    let a = gaussian_blur(frame_a, params.presmooth_sigma);
    let b = gaussian_blur(frame_b, params.presmooth_sigma);
    let (_, h, w) = a.shape();
    let avg = |y: isize, x: isize| 0.5 * (a.get_clamped(0, y, x) + b.get_clamped(0, y, x));
    let ix = Grid::from_fn(1, h, w, |_, y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (avg(y, x + 1) - avg(y, x - 1))
    });
    let iy = Grid::from_fn(1, h, w, |_, y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (avg(y + 1, x) - avg(y - 1, x))
    });
    let it = Grid::from_fn(1, h, w, |_, y, x| b.get(0, y, x) - a.get(0, y, x));
    Ok(GradientField { ix, iy, it })
}

/// Replicate-padded box sum of radius `r`, in f64.
fn box_sum(src: &[f64], h: usize, w: usize, r: usize, exec: Exec) -> Vec<f64> {
    let r = r as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; h * w];
    exec.for_each_row(&mut rows, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dx in -r..=r {
                acc += src[y * w + clamp(x as isize + dx, w)];
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; h * w];
    exec.for_each_row(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dy in -r..=r {
                acc += rows[clamp(y as isize + dy, h) * w + x];
            }
            *o = acc;
        }
    });
    out
}

/// Flow from `frame_a` to `frame_b` in pixels/frame: channel 0 is `u`
/// (along x), channel 1 is `v` (along y).
pub fn lucas_kanade(frame_a: &Grid, frame_b: &Grid, params: &FlowParams) -> Result<Grid> {
    lucas_kanade_with(frame_a, frame_b, params, Exec::default())
}

pub fn lucas_kanade_with(
    frame_a: &Grid,
    frame_b: &Grid,
    params: &FlowParams,
    exec: Exec,
) -> Result<Grid> {
    let g = gradients(frame_a, frame_b, params)?;
    let (_, h, w) = g.ix.shape();
    let n = h * w;
    let (ix, iy, it) = (g.ix.data(), g.iy.data(), g.it.data());
    let product = |p: &[f32], q: &[f32]| -> Vec<f64> {
        p.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).collect()
    };
    let r = params.window_radius;
    let sxx = box_sum(&product(ix, ix), h, w, r, exec);
    let sxy = box_sum(&product(ix, iy), h, w, r, exec);
    let syy = box_sum(&product(iy, iy), h, w, r, exec);
    let sxt = box_sum(&product(ix, it), h, w, r, exec);
    let syt = box_sum(&product(iy, it), h, w, r, exec);
    let lambda = params.lambda as f64;

    let mut out = vec![0.0f32; 2 * n];
    let (us, vs) = out.split_at_mut(n);
    let solve = |i: usize| -> (f32, f32) {
        let (a, b, d) = (sxx[i] + lambda, sxy[i], syy[i] + lambda);
        let (p, q) = (sxt[i], syt[i]);
        let det = a * d - b * b;
        if det.abs() <= f64::MIN_POSITIVE || (p == 0.0 && q == 0.0) {
            return (0.0, 0.0);
        }
        let u = (b * q - d * p) / det;
        let v = (b * p - a * q) / det;
        (u as f32, v as f32)
    };
    let uv = exec.map_range(h, |y| (0..w).map(|x| solve(y * w + x)).collect::<Vec<_>>());
    for (y, row) in uv.into_iter().enumerate() {
        for (x, (u, v)) in row.into_iter().enumerate() {
            us[y * w + x] = u;
            vs[y * w + x] = v;
        }
    }
    let flow = Grid::from_vec(2, h, w, out)?;
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Grid {
        Grid::from_fn(1, h, w, |_, _, x| x as f32 / w as f32)
    }

    #[test]
    fn constant_frames_have_zero_gradients() {
        let f = Grid::filled(1, 8, 8, 0.5);
        let g = gradients(&f, &f, &FlowParams::default()).unwrap();
        for grid in [&g.ix, &g.iy, &g.it] {
            assert!(grid.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_gradient_matches_slope() {
        let w = 16;
        let f = ramp(w, 8);
        let p = FlowParams {
            presmooth_sigma: 0.0,
            ..Default::default()
        };
        let g = gradients(&f, &f, &p).unwrap();
        for y in 0..8 {
            for x in 1..w - 1 {
                assert!((g.ix.get(0, y, x) - 1.0 / w as f32).abs() < 1e-6);
            }
            // replicate padding halves the border difference
            assert!((g.ix.get(0, y, 0) - 0.5 / w as f32).abs() < 1e-6);
        }
        assert!(g.iy.data().iter().all(|&v| v == 0.0));
        assert!(g.it.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn brightness_shift_only_changes_it() {
        let a = Grid::from_fn(1, 12, 12, |_, y, x| ((x * 7 + y * 3) % 11) as f32 / 11.0);
        let b = Grid::from_fn(1, 12, 12, |_, y, x| a.get(0, y, x) + 0.1);
        let p = FlowParams {
            presmooth_sigma: 0.0,
            ..Default::default()
        };
        let g0 = gradients(&a, &a, &p).unwrap();
        let g1 = gradients(&a, &b, &p).unwrap();
        for (u, v) in g0.ix.data().iter().zip(g1.ix.data()) {
            assert!((u - v).abs() < 1e-6);
        }
        for (u, v) in g0.iy.data().iter().zip(g1.iy.data()) {
            assert!((u - v).abs() < 1e-6);
        }
        assert!(g1.it.data().iter().all(|&v| (v - 0.1).abs() < 1e-6));
    }

    #[test]
    fn identical_frames_give_exact_zero_flow() {
        let a = Grid::from_fn(1, 20, 24, |_, y, x| ((x as f32 * 0.7).sin() * (y as f32 * 0.3).cos()) * 0.5 + 0.5);
        let flow = lucas_kanade(&a, &a, &FlowParams::default()).unwrap();
        assert_eq!(flow.shape(), (2, 20, 24));
        assert!(flow.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn textureless_region_gives_zero_flow() {
        let a = Grid::filled(1, 10, 10, 0.3);
        let b = Grid::filled(1, 10, 10, 0.4);
        let flow = lucas_kanade(&a, &b, &FlowParams::default()).unwrap();
        assert!(flow.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_blob_translation() {
        let blob = |cx: f32, cy: f32| {
            Grid::from_fn(1, 48, 48, move |_, y, x| {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                (-(dx * dx + dy * dy) / (2.0 * 5.0 * 5.0)).exp()
            })
        };
        let a = blob(22.0, 24.0);
        let b = blob(23.0, 24.0);
        let flow = lucas_kanade(&a, &b, &FlowParams::default()).unwrap();
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for y in 0..48 {
            for x in 0..48 {
                let (dx, dy) = (x as f32 - 22.5, y as f32 - 24.0);
                if dx * dx + dy * dy <= 36.0 {
                    su += flow.get(0, y, x);
                    sv += flow.get(1, y, x);
                    n += 1.0;
                }
            }
        }
        let (mu, mv) = (su / n, sv / n);
        assert!((mu - 1.0).abs() <= 0.25, "mean u {mu}");
        assert!(mv.abs() <= 0.1, "mean v {mv}");
    }

    #[test]
    fn errors() {
        let a = Grid::zeros(1, 4, 4);
        let b = Grid::zeros(1, 4, 5);
        assert!(matches!(lucas_kanade(&a, &b, &FlowParams::default()), Err(Error::Shape(_))));
        let p = FlowParams {
            window_radius: 0,
            ..Default::default()
        };
        assert!(lucas_kanade(&a, &a, &p).is_err());
        let two = Grid::zeros(2, 4, 4);
        assert!(lucas_kanade(&two, &two, &FlowParams::default()).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a = Grid::from_fn(1, 16, 16, |_, y, x| ((x * y) as f32 * 0.1).sin());
        let b = Grid::from_fn(1, 16, 16, |_, y, x| ((x * y) as f32 * 0.1 + 0.2).sin());
        let p = FlowParams::default();
        assert_eq!(
            lucas_kanade_with(&a, &b, &p, Exec::Sequential).unwrap(),
            lucas_kanade_with(&a, &b, &p, Exec::Parallel).unwrap()
        );
    }
}
