//! Planar RGB images in `[0, 1]`.

use lgvit_tensor::Tensor;

use crate::error::Result;

/// ITU-R 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Three-channel `f32` image stored channel-major (`CHW`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), 3 * width * height, "image buffer size");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn luma(&self, y: usize, x: usize) -> f32 {
        (0..3).map(|c| LUMA[c] * self.at(c, y, x)).sum()
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Bilinear resample of the sub-rectangle `(x0, y0, w, h)` to `out_w × out_h`.
    ///
    /// Sample centres use half-pixel alignment and clamp to the crop.
    pub fn resize_region(&self, (x0, y0, w, h): (usize, usize, usize, usize), out_w: usize, out_h: usize) -> Image {
        let sx = w as f64 / out_w as f64;
        let sy = h as f64 / out_h as f64;
        let taps = |o: usize, scale: f64, len: usize, origin: usize| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (origin + i0, origin + i1, (s - i0 as f64) as f32)
        };
        let xs: Vec<_> = (0..out_w).map(|o| taps(o, sx, w, x0)).collect();
        let ys: Vec<_> = (0..out_h).map(|o| taps(o, sy, h, y0)).collect();
        let mut data = Vec::with_capacity(3 * out_w * out_h);
        for c in 0..3 {
            for &(ya, yb, ty) in &ys {
                for &(xa, xb, tx) in &xs {
                    let top = self.at(c, ya, xa) * (1.0 - tx) + self.at(c, ya, xb) * tx;
                    let bot = self.at(c, yb, xa) * (1.0 - tx) + self.at(c, yb, xb) * tx;
                    data.push(top * (1.0 - ty) + bot * ty);
                }
            }
        }
        Image::new(out_w, out_h, data)
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Image {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        self.resize_region((0, 0, self.width, self.height), out_w, out_h)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    *out.at_mut(c, y, x) = self.at(c, y, self.width - 1 - x);
                }
            }
        }
        out
    }
}

/// Stacks equally sized images into a `[B, 3, H, W]` tensor.
pub fn stack(images: &[Image]) -> Result<Tensor<f32>> {
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        assert!(img.width == w && img.height == h, "stacked images differ in size");
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, &[images.len(), 3, h, w])?)
}
