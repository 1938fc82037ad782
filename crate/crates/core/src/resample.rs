//! Bicubic and nearest-neighbour baselines.
//!
//! Two grid conventions are provided:
//! * [`bicubic_upsample_2x`] keeps the known samples: output `(2i, 2j)` sits
//!   exactly on input `(i, j)` (`src = dst / 2`). This matches how the
//!   training data is decimated (every other sample is dropped).
//! * [`bicubic_resize`] aligns pixel centres: `src = (dst + 0.5) * scale - 0.5`.
//!
//! Both use the same Keys kernel, clamp-to-edge borders and clamp results to
//! `[0, 1]`.

use crate::error::{Error, Result};
use crate::lightfield::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicubicKernel {
    pub a: f64,
}

impl Default for BicubicKernel {
    fn default() -> Self {
        Self { a: -0.5 }
    }
}

impl BicubicKernel {
    pub fn weight(&self, x: f64) -> f64 {
        let a = self.a;
        let x = x.abs();
        if x <= 1.0 {
            ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
        } else {
            0.0
        }
    }

    /// Four taps `(index, weight)` around continuous source position `pos`,
    /// with indices clamped into `0..len`.
    fn taps(&self, pos: f64, len: usize) -> [(usize, f64); 4] {
        let base = pos.floor();
        let frac = pos - base;
        let base = base as isize;
        let last = len as isize - 1;
        let mut out = [(0usize, 0.0f64); 4];
        for (k, slot) in out.iter_mut().enumerate() {
            let off = k as isize - 1;
            let idx = (base + off).clamp(0, last) as usize;
            *slot = (idx, self.weight(frac - off as f64));
        }
        out
    }
}

fn separable(
    img: &Image,
    out_h: usize,
    out_w: usize,
    kernel: BicubicKernel,
    map_y: impl Fn(usize) -> f64,
    map_x: impl Fn(usize) -> f64,
) -> Image {
    let (c_n, h, w) = img.shape();
    let ytaps: Vec<_> = (0..out_h).map(|y| kernel.taps(map_y(y), h)).collect();
    let xtaps: Vec<_> = (0..out_w).map(|x| kernel.taps(map_x(x), w)).collect();

    let mut data = Vec::with_capacity(c_n * out_h * out_w);
    let mut rows = vec![0.0; h * out_w];
    for c in 0..c_n {
        let plane = img.plane(c);
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, taps) in xtaps.iter().enumerate() {
                rows[y * out_w + x] = taps.iter().map(|&(i, wt)| src[i] * wt).sum();
            }
        }
        for taps in &ytaps {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, wt)| rows[i * out_w + x] * wt).sum();
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(c_n, out_h, out_w, data).expect("output sized from inputs")
}

/// Doubles both dimensions; output `(2i, 2j)` reproduces input `(i, j)`.
pub fn bicubic_upsample_2x(img: &Image) -> Result<Image> {
    bicubic_upsample_2x_with(img, BicubicKernel::default())
}

pub fn bicubic_upsample_2x_with(img: &Image, kernel: BicubicKernel) -> Result<Image> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::shape(
            "bicubic_upsample_2x",
            "at least 2x2",
            (img.height(), img.width()),
        ));
    }
    let half = |d: usize| d as f64 / 2.0;
    Ok(separable(
        img,
        2 * img.height(),
        2 * img.width(),
        kernel,
        half,
        half,
    ))
}

/// Resizes to `out_h x out_w` with centre-aligned sampling.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    bicubic_resize_with(img, out_h, out_w, BicubicKernel::default())
}

pub fn bicubic_resize_with(
    img: &Image,
    out_h: usize,
    out_w: usize,
    kernel: BicubicKernel,
) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bicubic_resize", "non-zero output size", (out_h, out_w)));
    }
    let sy = img.height() as f64 / out_h as f64;
    let sx = img.width() as f64 / out_w as f64;
    Ok(separable(
        img,
        out_h,
        out_w,
        kernel,
        |y| (y as f64 + 0.5) * sy - 0.5,
        |x| (x as f64 + 0.5) * sx - 0.5,
    ))
}

/// Pixel replication: `out(y, x) = in(y / 2, x / 2)`.
pub fn nearest_upsample_2x(img: &Image) -> Image {
    Image::from_fn(img.channels(), 2 * img.height(), 2 * img.width(), |c, y, x| {
        img.get(c, y / 2, x / 2)
    })
}
