//! Vision Transformer encoder.
//!
//! Images `[B, 3, H, W]` are cut into `p×p` patches, linearly embedded,
//! prefixed with a learnable class token and offset by learned positional
//! embeddings. A stack of pre-norm blocks and a final layer norm produce the
//! [`TokenSequence`] whose row 0 is the global feature and rows `1..=N` are
//! the patch features.

use lgvit_tensor::{Element, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, trunc_normal, LayerNorm, Linear, Module, INIT_STD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub drop_path_rate: f64,
}

impl VitConfig {
    fn preset(image_size: usize, patch_size: usize, embed_dim: usize, depth: usize, num_heads: usize) -> Self {
        Self {
            image_size,
            patch_size,
            embed_dim,
            depth,
            num_heads,
            mlp_ratio: 4.0,
            drop_path_rate: 0.0,
        }
    }

    pub fn micro() -> Self {
        Self::preset(32, 8, 64, 2, 2)
    }

    pub fn mini() -> Self {
        Self::preset(32, 8, 128, 4, 4)
    }

    pub fn tiny() -> Self {
        Self::preset(224, 16, 192, 12, 3)
    }

    pub fn small() -> Self {
        Self::preset(224, 16, 384, 12, 6)
    }

    pub fn base() -> Self {
        Self::preset(224, 16, 768, 12, 12)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "micro" => Self::micro(),
            "mini" => Self::mini(),
            "tiny" => Self::tiny(),
            "small" => Self::small(),
            "base" => Self::base(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.embed_dim == 0 || self.num_heads == 0 {
            return bad(format!("zero-sized encoder dimension in {self:?}"));
        }
        if self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return bad(format!("drop_path_rate {} outside [0, 1)", self.drop_path_rate));
        }
        if !(self.mlp_ratio > 0.0) {
            return bad(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// Encoder output `[B, N+1, d]`; row 0 is the class token.
#[derive(Debug, Clone)]
pub struct TokenSequence<E: Element = f32> {
    pub tokens: Tensor<E>,
}

impl<E: Element> TokenSequence<E> {
    pub fn batch(&self) -> usize {
        self.tokens.dim(0)
    }

    pub fn num_patches(&self) -> usize {
        self.tokens.dim(1) - 1
    }

    pub fn dim(&self) -> usize {
        self.tokens.dim(2)
    }

    /// Global feature `[B, d]`.
    pub fn cls(&self) -> Result<Tensor<E>> {
        let (b, d) = (self.batch(), self.dim());
        Ok(self.tokens.narrow(1, 0, 1)?.reshape(&[b, d])?)
    }

    /// Patch features `[B, N, d]`.
    pub fn patches(&self) -> Result<Tensor<E>> {
        Ok(self.tokens.narrow(1, 1, self.num_patches())?)
    }
}

/// `[B, 3, H, W] → [B, N, 3·p²]`, row-major grid, each patch channel-major.
pub fn patchify<E: Element>(images: &Tensor<E>, patch: usize) -> Result<Tensor<E>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(lgvit_tensor::TensorError::ShapeMismatch {
            op: "patchify",
            detail: format!("expected [B, 3, H, W], got {s:?}"),
        }
        .into());
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(lgvit_tensor::TensorError::ShapeMismatch {
            op: "patchify",
            detail: format!("{h}×{w} image is not divisible into {patch}×{patch} patches"),
        }
        .into());
    }
    let (gh, gw) = (h / patch, w / patch);
    Ok(images
        .reshape(&[b, 3, gh, patch, gw, patch])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b, gh * gw, 3 * patch * patch])?)
}

/// Per-sample residual-branch mask: 0 when dropped, `1/(1-rate)` otherwise.
pub fn drop_path<E: Element>(x: &Tensor<E>, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<E>> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let b = x.dim(0);
    let mask: Vec<E> = (0..b)
        .map(|_| if rng.random::<f64>() < keep { E::lit(1.0 / keep) } else { E::zero() })
        .collect();
    let mut shape = vec![1; x.rank()];
    shape[0] = b;
    Ok(x.mul(&Tensor::from_vec(mask, &shape)?)?)
}

#[derive(Debug, Clone)]
pub struct Attention<E: Element = f32> {
    pub qkv: Linear<E>,
    pub proj: Linear<E>,
    pub num_heads: usize,
}

impl<E: Element> Attention<E> {
    /// Returns the output and the attention weights `[B, heads, T, T]`.
    pub fn forward_with_weights(&self, x: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
        let h = self.num_heads;
        let hd = d / h;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape(&[b, t, 3, h, hd])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i| -> Result<Tensor<E>> { Ok(qkv.narrow(0, i, 1)?.reshape(&[b, h, t, hd])?) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scale = E::lit(1.0 / (hd as f64).sqrt());
        let weights = q.matmul(&k.transpose_last()?)?.mul_scalar(scale).softmax(3)?;
        let mixed = weights.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, t, d])?;
        Ok((self.proj.forward(&mixed)?, weights))
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_with_weights(x)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<E: Element = f32> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
}

impl<E: Element> Mlp<E> {
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

#[derive(Debug, Clone)]
pub struct Block<E: Element = f32> {
    pub norm1: LayerNorm<E>,
    pub attn: Attention<E>,
    pub norm2: LayerNorm<E>,
    pub mlp: Mlp<E>,
    pub drop_path_rate: f64,
}

impl<E: Element> Block<E> {
    fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &VitConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            norm1: LayerNorm::new(d),
            attn: Attention {
                qkv: Linear::new(rng, d, 3 * d),
                proj: Linear::new(rng, d, d),
                num_heads: cfg.num_heads,
            },
            norm2: LayerNorm::new(d),
            mlp: Mlp {
                fc1: Linear::new(rng, d, cfg.mlp_hidden()),
                fc2: Linear::new(rng, cfg.mlp_hidden(), d),
            },
            drop_path_rate: cfg.drop_path_rate,
        }
    }

    /// Drop-path is active only when `rng` is given.
    pub fn forward(&self, x: &Tensor<E>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<E>> {
        let a = self.attn.forward(&self.norm1.forward(x)?)?;
        let x = x.add(&drop_path(&a, self.drop_path_rate, rng.as_deref_mut())?)?;
        let m = self.mlp.forward(&self.norm2.forward(&x)?)?;
        Ok(x.add(&drop_path(&m, self.drop_path_rate, rng)?)?)
    }
}

impl<E: Element> Module<E> for Block<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.attn.qkv.collect_params(&join(prefix, "attn.qkv"), out);
        self.attn.proj.collect_params(&join(prefix, "attn.proj"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.mlp.fc1.collect_params(&join(prefix, "mlp.fc1"), out);
        self.mlp.fc2.collect_params(&join(prefix, "mlp.fc2"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Vit<E: Element = f32> {
    pub config: VitConfig,
    pub patch_embed: Linear<E>,
    /// `[1, 1, d]`
    pub cls_token: Tensor<E>,
    /// `[1, N+1, d]`
    pub pos_embed: Tensor<E>,
    pub blocks: Vec<Block<E>>,
    pub norm: LayerNorm<E>,
}

impl<E: Element> Vit<E> {
    pub fn new<R: Rng + ?Sized>(config: VitConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let patch_embed = Linear::new(rng, config.patch_dim(), d);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let cls = (0..d).map(|_| E::lit(normal.sample(rng))).collect();
        let cls_token = Tensor::param(cls, &[1, 1, d])?;
        let pos_embed = trunc_normal(rng, &[1, config.num_patches() + 1, d], INIT_STD);
        let blocks = (0..config.depth).map(|_| Block::new(rng, &config)).collect();
        Ok(Self {
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm: LayerNorm::new(d),
            config,
        })
    }

    /// Projects patches, prepends the class token and adds positions.
    pub fn embed(&self, patches: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, n) = (patches.dim(0), patches.dim(1));
        let expected = self.pos_embed.dim(1) - 1;
        if n != expected {
            return Err(lgvit_tensor::TensorError::ShapeMismatch {
                op: "embed",
                detail: format!("{n} patches but positional embedding covers {expected}"),
            }
            .into());
        }
        let x = self.patch_embed.forward(patches)?;
        let cls = self.cls_token.add(&Tensor::zeros(&[b, 1, self.config.embed_dim]))?;
        Ok(Tensor::concat(&[cls, x], 1)?.add(&self.pos_embed)?)
    }

    /// Encodes pre-cut patches `[B, N, 3·p²]`.
    pub fn forward_patches(&self, patches: &Tensor<E>, mut rng: Option<&mut ChaCha8Rng>) -> Result<TokenSequence<E>> {
        let mut x = self.embed(patches)?;
        for block in &self.blocks {
            x = block.forward(&x, rng.as_deref_mut())?;
        }
        Ok(TokenSequence {
            tokens: self.norm.forward(&x)?,
        })
    }

    /// Encodes images `[B, 3, H, W]`. Passing `rng` enables drop-path.
    pub fn forward(&self, images: &Tensor<E>, rng: Option<&mut ChaCha8Rng>) -> Result<TokenSequence<E>> {
        let patches = patchify(images, self.config.patch_size)?;
        self.forward_patches(&patches, rng)
    }

    /// Resamples the positional embedding for a new input resolution.
    pub fn resize_to(&mut self, image_size: usize) -> Result<()> {
        let mut config = self.config.clone();
        config.image_size = image_size;
        config.validate()?;
        if config.grid() != self.config.grid() {
            self.pos_embed = interpolate_pos_embed(&self.pos_embed, config.grid())?.into_param();
        }
        self.config = config;
        Ok(())
    }

    pub fn set_drop_path_rate(&mut self, rate: f64) {
        self.config.drop_path_rate = rate;
        for b in &mut self.blocks {
            b.drop_path_rate = rate;
        }
    }
}

impl<E: Element> Module<E> for Vit<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.patch_embed.collect_params(&join(prefix, "patch_embed"), out);
        out.push((join(prefix, "cls_token"), self.cls_token.clone()));
        out.push((join(prefix, "pos_embed"), self.pos_embed.clone()));
        for (k, block) in self.blocks.iter().enumerate() {
            block.collect_params(&join(prefix, &format!("blocks.{k}")), out);
        }
        self.norm.collect_params(&join(prefix, "norm"), out);
    }
}

/// Catmull-Rom cubic convolution weights (`a = -0.5`) for fractional offset `t`.
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let near = |x: f64| ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Taps and weights for resampling `src` samples onto `dst` (half-pixel centres, edge clamp).
fn cubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            let base = x.floor();
            let w = cubic_weights(x - base);
            let clamp = |i: f64| i.clamp(0.0, (src - 1) as f64) as usize;
            let b = base as i64 as f64;
            ([clamp(b - 1.0), clamp(b), clamp(b + 1.0), clamp(b + 2.0)], w)
        })
        .collect()
}

/// Bicubically resamples the patch rows of `[1, 1+g², d]` to a `new_grid²` layout.
///
/// Row 0 is copied as is. The result is a constant tensor.
pub fn interpolate_pos_embed<E: Element>(pos: &Tensor<E>, new_grid: usize) -> Result<Tensor<E>> {
    let s = pos.shape();
    if s.len() != 3 || s[0] != 1 || s[1] < 2 {
        return Err(Error::InvalidGrid(format!("expected [1, 1+g², d], got {s:?}")));
    }
    let (n, d) = (s[1] - 1, s[2]);
    let g = (n as f64).sqrt().round() as usize;
    if g * g != n {
        return Err(Error::InvalidGrid(format!("{n} patch positions do not form a square")));
    }
    if new_grid == 0 {
        return Err(Error::InvalidGrid("target grid is empty".into()));
    }
    let src = pos.data();
    let at = |y: usize, x: usize, c: usize| src[(1 + y * g + x) * d + c].widen();
    let taps = cubic_taps(g, new_grid);

    // rows first: [g, g, d] -> [new, g, d]
    let mut tmp = vec![0.0f64; new_grid * g * d];
    for (oy, (iy, wy)) in taps.iter().enumerate() {
        for x in 0..g {
            for c in 0..d {
                tmp[(oy * g + x) * d + c] = (0..4).map(|k| wy[k] * at(iy[k], x, c)).sum();
            }
        }
    }
    let mut out = Vec::with_capacity((1 + new_grid * new_grid) * d);
    out.extend_from_slice(&src[..d]);
    for oy in 0..new_grid {
        for (ix, wx) in &taps {
            for c in 0..d {
                let v: f64 = (0..4).map(|k| wx[k] * tmp[(oy * g + ix[k]) * d + c]).sum();
                out.push(E::lit(v));
            }
        }
    }
    Ok(Tensor::from_vec(out, &[1, 1 + new_grid * new_grid, d])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images(b: usize, size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * 3 * size * size;
        Tensor::from_vec((0..n).map(|_| rng.random::<f32>()).collect(), &[b, 3, size, size]).unwrap()
    }

    #[test]
    fn patch_counts() {
        let x = Tensor::<f32>::zeros(&[1, 3, 224, 224]);
        assert_eq!(patchify(&x, 16).unwrap().shape(), &[1, 196, 768]);
        let x = Tensor::<f32>::zeros(&[2, 3, 32, 32]);
        assert_eq!(patchify(&x, 16).unwrap().shape(), &[2, 4, 768]);
        let x = Tensor::<f32>::zeros(&[1, 3, 33, 33]);
        assert!(matches!(
            patchify(&x, 16),
            Err(Error::Tensor(lgvit_tensor::TensorError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn patchify_layout_is_row_major_channel_major() {
        // 1×3×4×4 image with value = c*100 + y*10 + x
        let data: Vec<f32> = (0..3)
            .flat_map(|c| (0..4).flat_map(move |y| (0..4).map(move |x| (c * 100 + y * 10 + x) as f32)))
            .collect();
        let img = Tensor::from_vec(data, &[1, 3, 4, 4]).unwrap();
        let p = patchify(&img, 2).unwrap().to_vec();
        // patch 1 is the top-right block: rows 0..2, cols 2..4
        let patch1 = &p[12..24];
        assert_eq!(&patch1[..4], &[2.0, 3.0, 12.0, 13.0]);
        assert_eq!(&patch1[4..8], &[102.0, 103.0, 112.0, 113.0]);
    }

    #[test]
    fn zero_embedding_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut vit = Vit::<f32>::new(VitConfig::micro(), &mut rng).unwrap();
        vit.patch_embed = Linear::zeros(vit.config.patch_dim(), 64);
        vit.cls_token = Tensor::zeros(&[1, 1, 64]).into_param();
        vit.pos_embed = Tensor::zeros(&[1, 17, 64]).into_param();
        let patches = Tensor::zeros(&[2, 16, vit.config.patch_dim()]);
        let t = vit.embed(&patches).unwrap();
        assert_eq!(t.shape(), &[2, 17, 64]);
        assert!(t.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_projection_embeds_patch_plus_position() {
        let cfg = VitConfig {
            image_size: 2,
            patch_size: 1,
            embed_dim: 3,
            depth: 0,
            num_heads: 1,
            mlp_ratio: 1.0,
            drop_path_rate: 0.0,
        };
        let mut vit = Vit::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 3 + i] = 1.0);
        vit.patch_embed.weight = Tensor::param(eye, &[3, 3]).unwrap();
        let patches = Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[1, 4, 3]).unwrap();
        let t = vit.embed(&patches).unwrap().to_vec();
        let pos = vit.pos_embed.to_vec();
        for i in 0..4 {
            for c in 0..3 {
                assert_eq!(t[(1 + i) * 3 + c], (i * 3 + c) as f64 + pos[(1 + i) * 3 + c]);
            }
        }
    }

    #[test]
    fn forward_shape_and_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vit = Vit::<f32>::new(VitConfig::micro(), &mut rng).unwrap();
        let one = images(1, 32, 5).to_vec();
        let both = Tensor::from_vec([one.clone(), one].concat(), &[2, 3, 32, 32]).unwrap();
        let out = vit.forward(&both, None).unwrap();
        assert_eq!(out.tokens.shape(), &[2, 17, 64]);
        let v = out.tokens.to_vec();
        assert_eq!(v[..17 * 64], v[17 * 64..]);
        assert_eq!(out.cls().unwrap().shape(), &[2, 64]);
        assert_eq!(out.patches().unwrap().shape(), &[2, 16, 64]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vit = Vit::<f32>::new(VitConfig::micro(), &mut rng).unwrap();
        let x = vit.embed(&patchify(&images(2, 32, 1), 8).unwrap()).unwrap();
        let (_, w) = vit.blocks[0].attn.forward_with_weights(&x).unwrap();
        assert_eq!(w.shape(), &[2, 2, 17, 17]);
        for row in w.to_vec().chunks(17) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn class_token_loss_reaches_patch_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vit = Vit::<f32>::new(VitConfig::micro(), &mut rng).unwrap();
        let out = vit.forward(&images(2, 32, 2), None).unwrap();
        out.cls().unwrap().square().sum().backward().unwrap();
        let g = vit.patch_embed.weight.grad().unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn drop_path_zero_rate_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vit = Vit::<f32>::new(VitConfig::micro(), &mut rng).unwrap();
        let x = images(2, 32, 3);
        let a = vit.forward(&x, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        let b = vit.forward(&x, None).unwrap();
        assert_eq!(a.tokens.to_vec(), b.tokens.to_vec());
    }

    #[test]
    fn drop_path_expectation_matches_identity() {
        let x = Tensor::<f64>::from_vec(vec![1.0, -2.0, 0.5, 3.0], &[1, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 20_000;
        let mut acc = [0.0f64; 4];
        for _ in 0..draws {
            let y = drop_path(&x, 0.3, Some(&mut rng)).unwrap().to_vec();
            acc.iter_mut().zip(y).for_each(|(a, v)| *a += v);
        }
        for (a, v) in acc.iter().zip(x.to_vec()) {
            let mean = a / draws as f64;
            assert!((mean - v).abs() <= 0.02 * v.abs(), "mean {mean} vs {v}");
        }
    }

    #[test]
    fn pos_embed_identity_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pos: Tensor<f32> = trunc_normal(&mut rng, &[1, 17, 8], 1.0);
        let same = interpolate_pos_embed(&pos, 4).unwrap();
        let (a, b) = (pos.to_vec(), same.to_vec());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pos_embed_resize_shape_and_constants() {
        let pos = Tensor::<f32>::full(&[1, 197, 4], 0.25);
        let big = interpolate_pos_embed(&pos, 32).unwrap();
        assert_eq!(big.shape(), &[1, 1025, 4]);
        assert!(big.to_vec().iter().all(|v| (v - 0.25).abs() < 1e-6));
        let bad = Tensor::<f32>::zeros(&[1, 6, 4]);
        assert!(matches!(interpolate_pos_embed(&bad, 3), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn pos_embed_class_row_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pos: Tensor<f32> = trunc_normal(&mut rng, &[1, 17, 3], 1.0);
        let up = interpolate_pos_embed(&pos, 7).unwrap().to_vec();
        assert_eq!(&up[..3], &pos.to_vec()[..3]);
    }

    #[test]
    fn catmull_rom_reproduces_linear_ramps_inside() {
        // a ramp along x is resampled exactly away from the clamped borders
        let g = 6;
        let mut data = vec![0.0f64];
        for _y in 0..g {
            for x in 0..g {
                data.push(x as f64);
            }
        }
        let pos = Tensor::from_vec(data, &[1, 1 + g * g, 1]).unwrap();
        let up = interpolate_pos_embed(&pos, 12).unwrap().to_vec();
        for oy in 0..12 {
            for ox in 0..12 {
                let sx = (ox as f64 + 0.5) * 0.5 - 0.5;
                let base = sx.floor();
                if base >= 1.0 && base + 2.0 <= (g - 1) as f64 {
                    assert!((up[1 + oy * 12 + ox] - sx).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = VitConfig::micro();
        c.image_size = 30;
        assert!(c.validate().is_err());
        let mut c = VitConfig::micro();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = VitConfig::micro();
        c.drop_path_rate = 1.0;
        assert!(c.validate().is_err());
    }
}
