//! Two-view stochastic augmentation: crop → flip → colour → blur.
//!
//! Every function is a pure function of its inputs and the generator it is
//! handed, so a per-sample seed fully determines the emitted views.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugPolicy {
    /// Crop area as a fraction of the source image.
    pub crop_scale: (f64, f64),
    /// Crop width/height ratio, sampled log-uniformly.
    pub aspect_range: (f64, f64),
    pub output_size: usize,
    pub flip_prob: f64,
    /// Brightness, contrast, saturation, hue.
    pub jitter_strengths: [f64; 4],
    /// Probability that colour jitter runs at all.
    pub jitter_prob: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self::simclr(224)
    }
}

impl AugPolicy {
    pub fn simclr(output_size: usize) -> Self {
        Self {
            crop_scale: (0.08, 1.0),
            aspect_range: (3.0 / 4.0, 4.0 / 3.0),
            output_size,
            flip_prob: 0.5,
            jitter_strengths: [0.8, 0.8, 0.8, 0.2],
            jitter_prob: 0.8,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
        }
    }

    /// Milder policy for 32-pixel micro runs. Full-strength colour jitter
    /// leaves a 2-block encoder on the uniform-loss plateau for the first
    /// few epochs at this size.
    pub fn micro(output_size: usize) -> Self {
        Self {
            crop_scale: (0.35, 1.0),
            jitter_strengths: [0.2, 0.2, 0.2, 0.05],
            grayscale_prob: 0.0,
            ..Self::simclr(output_size)
        }
    }

    /// Full-image resize with no randomness.
    pub fn identity(output_size: usize) -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            aspect_range: (1.0, 1.0),
            output_size,
            flip_prob: 0.0,
            jitter_strengths: [0.0; 4],
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: (0.1, 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("augment.{name} = {p} is not a probability")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("jitter_prob", self.jitter_prob)?;
        prob("grayscale_prob", self.grayscale_prob)?;
        prob("blur_prob", self.blur_prob)?;
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!("augment.crop_scale ({lo}, {hi}) must lie in (0, 1]")));
        }
        let (lo, hi) = self.aspect_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("augment.aspect_range ({lo}, {hi}) is invalid")));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("augment.blur_sigma ({lo}, {hi}) is invalid")));
        }
        if self.output_size == 0 {
            return Err(Error::config("augment.output_size must be positive"));
        }
        if self.jitter_strengths.iter().any(|&s| s < 0.0) || self.jitter_strengths[3] > 0.5 {
            return Err(Error::config("augment jitter strengths must be ≥ 0 (hue ≤ 0.5)"));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Crop rectangle `(x0, y0, w, h)` for a `width × height` source.
///
/// Ten attempts at a rectangle with the sampled area and aspect; failing
/// that, the largest centred crop whose aspect lies inside the range.
pub fn sample_crop<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    policy: &AugPolicy,
) -> (usize, usize, usize, usize) {
    let area = (width * height) as f64;
    let (lr0, lr1) = (policy.aspect_range.0.ln(), policy.aspect_range.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, policy.crop_scale);
        let ratio = uniform(rng, (lr0, lr1)).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let x0 = rng.random_range(0..=width - w);
            let y0 = rng.random_range(0..=height - h);
            return (x0, y0, w, h);
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < policy.aspect_range.0 {
        (width, ((width as f64 / policy.aspect_range.0).round() as usize).clamp(1, height))
    } else if in_ratio > policy.aspect_range.1 {
        (((height as f64 * policy.aspect_range.1).round() as usize).clamp(1, width), height)
    } else {
        (width, height)
    };
    ((width - w) / 2, (height - h) / 2, w, h)
}

pub fn random_resized_crop<R: Rng + ?Sized>(img: &Image, rng: &mut R, policy: &AugPolicy) -> Image {
    let rect = sample_crop(rng, img.width, img.height, policy);
    let s = policy.output_size;
    if rect == (0, 0, img.width, img.height) && s == img.width && s == img.height {
        return img.clone();
    }
    img.resize_region(rect, s, s)
}

fn blend_with(img: &mut Image, factor: f32, other: impl Fn(usize, usize, usize) -> f32) {
    for c in 0..3 {
        for y in 0..img.height {
            for x in 0..img.width {
                let o = other(c, y, x);
                let v = img.at_mut(c, y, x);
                *v = (factor * *v + (1.0 - factor) * o).clamp(0.0, 1.0);
            }
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize) % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn shift_hue(img: &mut Image, shift: f32) {
    for y in 0..img.height {
        for x in 0..img.width {
            let [h, s, v] = rgb_to_hsv([img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)]);
            let rgb = hsv_to_rgb([h + shift, s, v]);
            for (c, val) in rgb.into_iter().enumerate() {
                *img.at_mut(c, y, x) = val.clamp(0.0, 1.0);
            }
        }
    }
}

pub fn to_grayscale(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let l = img.luma(y, x).clamp(0.0, 1.0);
            (0..3).for_each(|c| *out.at_mut(c, y, x) = l);
        }
    }
    out
}

/// Colour jitter in random order, then optional grayscale; output clamped to `[0, 1]`.
///
/// Transforms with zero strength are skipped entirely.
pub fn color_distort<R: Rng + ?Sized>(img: &Image, rng: &mut R, policy: &AugPolicy) -> Image {
    let mut out = img.clone();
    let [sb, sc, ss, sh] = policy.jitter_strengths;
    if rng.random::<f64>() < policy.jitter_prob {
        let mut order = [0usize, 1, 2, 3];
        order.shuffle(rng);
        for op in order {
            let strength = policy.jitter_strengths[op];
            if strength == 0.0 {
                continue;
            }
            match op {
                0 => {
                    let f = uniform(rng, ((1.0 - sb).max(0.0), 1.0 + sb)) as f32;
                    out.data.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
                }
                1 => {
                    let f = uniform(rng, ((1.0 - sc).max(0.0), 1.0 + sc)) as f32;
                    let n = (out.width * out.height) as f64;
                    let mean = (0..out.height)
                        .flat_map(|y| (0..out.width).map(move |x| (y, x)))
                        .map(|(y, x)| out.luma(y, x) as f64)
                        .sum::<f64>()
                        / n;
                    blend_with(&mut out, f, |_, _, _| mean as f32);
                }
                2 => {
                    let f = uniform(rng, ((1.0 - ss).max(0.0), 1.0 + ss)) as f32;
                    let gray = to_grayscale(&out);
                    blend_with(&mut out, f, |c, y, x| gray.at(c, y, x));
                }
                _ => {
                    let shift = uniform(rng, (-sh, sh)) as f32;
                    shift_hue(&mut out, shift);
                }
            }
        }
    }
    if rng.random::<f64>() < policy.grayscale_prob {
        out = to_grayscale(&out);
    }
    out.clamp01();
    out
}

/// Normalised 1-D Gaussian of radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// Mirror index without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

pub fn blur_with_sigma(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width, img.height);
    let mut tmp = img.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                *tmp.at_mut(c, y, x) = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * img.at(c, y, reflect(x as i64 + j as i64 - r, w)))
                    .sum();
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                *out.at_mut(c, y, x) = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * tmp.at(c, reflect(y as i64 + j as i64 - r, h), x))
                    .sum();
            }
        }
    }
    out.clamp01();
    out
}

pub fn gaussian_blur<R: Rng + ?Sized>(img: &Image, rng: &mut R, policy: &AugPolicy) -> Image {
    if rng.random::<f64>() >= policy.blur_prob {
        return img.clone();
    }
    blur_with_sigma(img, uniform(rng, policy.blur_sigma))
}

/// One draw of the full pipeline.
pub fn augment<R: Rng + ?Sized>(img: &Image, rng: &mut R, policy: &AugPolicy) -> Image {
    let mut view = random_resized_crop(img, rng, policy);
    if rng.random::<f64>() < policy.flip_prob {
        view = view.flip_horizontal();
    }
    let view = color_distort(&view, rng, policy);
    gaussian_blur(&view, rng, policy)
}

/// Two independent draws of [`augment`] on the same source.
pub fn make_view_pair<R: Rng + ?Sized>(img: &Image, rng: &mut R, policy: &AugPolicy) -> (Image, Image) {
    let a = augment(img, rng, policy);
    let b = augment(img, rng, policy);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..3 * w * h).map(|_| rng.random::<f32>()).collect())
    }

    #[test]
    fn full_crop_is_plain_resize() {
        let img = noise(16, 16, 0);
        let p = AugPolicy::identity(8);
        let out = random_resized_crop(&img, &mut ChaCha8Rng::seed_from_u64(1), &p);
        assert_eq!(out, img.resize(8, 8));
    }

    #[test]
    fn crops_have_output_size_and_repeat_per_seed() {
        let img = noise(20, 12, 1);
        let p = AugPolicy::simclr(9);
        for seed in 0..50 {
            let out = random_resized_crop(&img, &mut ChaCha8Rng::seed_from_u64(seed), &p);
            assert_eq!((out.width, out.height), (9, 9));
            let a = sample_crop(&mut ChaCha8Rng::seed_from_u64(seed), 20, 12, &p);
            let b = sample_crop(&mut ChaCha8Rng::seed_from_u64(seed), 20, 12, &p);
            assert_eq!(a, b);
            assert!(a.0 + a.2 <= 20 && a.1 + a.3 <= 12);
        }
    }

    #[test]
    fn crop_fallback_is_centred() {
        // a 1-pixel-tall strip can never host a 3/4..4/3 crop of this area
        let p = AugPolicy {
            crop_scale: (0.9, 1.0),
            ..AugPolicy::simclr(4)
        };
        let rect = sample_crop(&mut ChaCha8Rng::seed_from_u64(0), 40, 1, &p);
        assert_eq!(rect, (19, 0, 1, 1));
    }

    #[test]
    fn zero_strength_color_is_identity() {
        let img = noise(6, 5, 2);
        let p = AugPolicy {
            jitter_prob: 1.0,
            ..AugPolicy::identity(6)
        };
        assert_eq!(color_distort(&img, &mut ChaCha8Rng::seed_from_u64(3), &p), img);
    }

    #[test]
    fn forced_grayscale_equalises_channels() {
        let img = noise(6, 5, 3);
        let p = AugPolicy {
            grayscale_prob: 1.0,
            ..AugPolicy::simclr(6)
        };
        let out = color_distort(&img, &mut ChaCha8Rng::seed_from_u64(4), &p);
        assert_eq!(out.plane(0), out.plane(1));
        assert_eq!(out.plane(1), out.plane(2));
    }

    #[test]
    fn color_output_stays_in_unit_range() {
        let p = AugPolicy {
            jitter_prob: 1.0,
            jitter_strengths: [2.0, 2.0, 2.0, 0.5],
            ..AugPolicy::simclr(6)
        };
        for seed in 0..40 {
            let out = color_distort(&noise(6, 6, seed), &mut ChaCha8Rng::seed_from_u64(seed), &p);
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.9, 0.8, 0.1]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_kernel_and_constants() {
        for sigma in [0.1, 0.7, 2.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let flat = Image::filled(5, 4, [0.25, 0.5, 0.75]);
        let out = blur_with_sigma(&flat, 2.0);
        assert!(out.data.iter().zip(&flat.data).all(|(a, b)| (a - b).abs() < 1e-6));
        let p = AugPolicy::identity(5);
        let img = noise(5, 5, 9);
        assert_eq!(gaussian_blur(&img, &mut ChaCha8Rng::seed_from_u64(0), &p), img);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn identity_views_match_resized_source() {
        let img = noise(12, 12, 5);
        let (a, b) = make_view_pair(&img, &mut ChaCha8Rng::seed_from_u64(0), &AugPolicy::identity(8));
        assert_eq!(a, img.resize(8, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn views_differ_across_seeds() {
        let img = noise(16, 16, 6);
        let p = AugPolicy::simclr(8);
        for seed in 0..100 {
            let (a, b) = make_view_pair(&img, &mut ChaCha8Rng::seed_from_u64(seed), &p);
            assert_eq!((a.width, a.height, b.width, b.height), (8, 8, 8, 8));
            assert_ne!(a, b, "seed {seed}");
            assert!(a.data.iter().chain(&b.data).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pipeline_is_pure() {
        let img = noise(16, 16, 7);
        let p = AugPolicy::simclr(8);
        let a = make_view_pair(&img, &mut ChaCha8Rng::seed_from_u64(3), &p);
        let b = make_view_pair(&img, &mut ChaCha8Rng::seed_from_u64(3), &p);
        assert_eq!(a, b);
    }

    #[test]
    fn policy_validation() {
        assert!(AugPolicy::simclr(8).validate().is_ok());
        let bad = AugPolicy {
            flip_prob: 1.5,
            ..AugPolicy::simclr(8)
        };
        assert!(bad.validate().is_err());
        let bad = AugPolicy {
            crop_scale: (0.0, 1.0),
            ..AugPolicy::simclr(8)
        };
        assert!(bad.validate().is_err());
    }
}
