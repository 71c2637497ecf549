//! Projection head and the contrastive objectives.
//!
//! [`info_nce`] scores one anchor against its positive and a negative set.
//! [`dense_loss`] contrasts the global feature of view A with every patch of
//! view B: each patch is a positive, and the patches of all other images'
//! view B are negatives, giving `(B-1)·N` negatives per anchor.
//! [`vanilla_loss`] is the global-to-global baseline with `B-1` negatives.

use lgvit_tensor::{Element, Tensor, TensorError, L2_NORMALIZE_EPS};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Linear, Module};
use crate::vit::TokenSequence;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Dense,
    Vanilla,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "vanilla" => Ok(Self::Vanilla),
            other => Err(Error::config(format!("unknown loss mode `{other}` (dense | vanilla)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Hidden width of the projection MLP; `None` uses the encoder width.
    pub proj_hidden_dim: Option<usize>,
    pub proj_out_dim: usize,
    /// Also score view B's global feature against view A's patches and average.
    pub symmetric: bool,
    pub mode: LossMode,
    /// L2-normalise projections so similarities are cosines.
    pub normalize: bool,
    /// Use a second projection head for patch tokens.
    pub separate_heads: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            proj_hidden_dim: None,
            proj_out_dim: 128,
            symmetric: false,
            mode: LossMode::Dense,
            normalize: true,
            separate_heads: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if self.proj_out_dim == 0 || self.proj_hidden_dim == Some(0) {
            return Err(Error::config("projection widths must be positive"));
        }
        Ok(())
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

fn shape_mismatch(op: &'static str, detail: String) -> Error {
    TensorError::ShapeMismatch { op, detail }.into()
}

/// Three-layer MLP `linear → gelu → linear → gelu → linear`.
#[derive(Debug, Clone)]
pub struct ProjectionHead<E: Element = f32> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
    pub fc3: Linear<E>,
    pub normalize: bool,
}

impl<E: Element> ProjectionHead<E> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, hidden: usize, out: usize, normalize: bool) -> Self {
        Self {
            fc1: Linear::new(rng, in_dim, hidden),
            fc2: Linear::new(rng, hidden, hidden),
            fc3: Linear::new(rng, hidden, out),
            normalize,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let h = self.fc1.forward(x)?.gelu();
        let h = self.fc2.forward(&h)?.gelu();
        let z = self.fc3.forward(&h)?;
        if self.normalize {
            Ok(z.l2_normalize(L2_NORMALIZE_EPS)?)
        } else {
            Ok(z)
        }
    }
}

impl<E: Element> Module<E> for ProjectionHead<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.fc1.collect_params(&join(prefix, "fc1"), out);
        self.fc2.collect_params(&join(prefix, "fc2"), out);
        self.fc3.collect_params(&join(prefix, "fc3"), out);
    }
}

/// Projected global `[B, p]` and patch `[B, N, p]` features of one view.
#[derive(Debug, Clone)]
pub struct ProjectedFeatures<E: Element = f32> {
    pub global: Tensor<E>,
    pub patches: Tensor<E>,
}

impl<E: Element> ProjectedFeatures<E> {
    pub fn batch(&self) -> usize {
        self.global.dim(0)
    }

    pub fn num_patches(&self) -> usize {
        self.patches.dim(1)
    }

    pub fn dim(&self) -> usize {
        self.global.dim(1)
    }

    fn check_pair(&self, other: &Self, op: &'static str) -> Result<()> {
        let ok = |f: &Self| {
            f.global.rank() == 2
                && f.patches.rank() == 3
                && f.patches.dim(0) == f.global.dim(0)
                && f.patches.dim(2) == f.global.dim(1)
        };
        if !ok(self) || !ok(other) || self.global.shape() != other.global.shape() || self.patches.shape() != other.patches.shape() {
            return Err(shape_mismatch(
                op,
                format!(
                    "views disagree: global {:?}/{:?}, patches {:?}/{:?}",
                    self.global.shape(),
                    other.global.shape(),
                    self.patches.shape(),
                    other.patches.shape()
                ),
            ));
        }
        Ok(())
    }
}

/// Maps encoder tokens into the contrastive space.
#[derive(Debug, Clone)]
pub struct Projector<E: Element = f32> {
    pub head: ProjectionHead<E>,
    /// Present only with `separate_heads`.
    pub patch_head: Option<ProjectionHead<E>>,
}

impl<E: Element> Projector<E> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, embed_dim: usize, cfg: &ContrastiveConfig) -> Result<Self> {
        cfg.validate()?;
        let hidden = cfg.proj_hidden_dim.unwrap_or(embed_dim);
        let head = ProjectionHead::new(rng, embed_dim, hidden, cfg.proj_out_dim, cfg.normalize);
        let patch_head = cfg
            .separate_heads
            .then(|| ProjectionHead::new(rng, embed_dim, hidden, cfg.proj_out_dim, cfg.normalize));
        Ok(Self { head, patch_head })
    }

    pub fn project(&self, tokens: &TokenSequence<E>) -> Result<ProjectedFeatures<E>> {
        let (b, n) = (tokens.batch(), tokens.num_patches());
        match &self.patch_head {
            None => {
                let z = self.head.forward(&tokens.tokens)?;
                let p = z.dim(2);
                Ok(ProjectedFeatures {
                    global: z.narrow(1, 0, 1)?.reshape(&[b, p])?,
                    patches: z.narrow(1, 1, n)?,
                })
            }
            Some(patch_head) => Ok(ProjectedFeatures {
                global: self.head.forward(&tokens.cls()?)?,
                patches: patch_head.forward(&tokens.patches()?)?,
            }),
        }
    }
}

impl<E: Element> Module<E> for Projector<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.head.collect_params(prefix, out);
        if let Some(h) = &self.patch_head {
            h.collect_params(&format!("{prefix}_patch"), out);
        }
    }
}

/// `-log(e^{a·p/τ} / (e^{a·p/τ} + Σ_n e^{a·n/τ}))` for one anchor.
///
/// `anchor` and `positive` are `[p]`; `negatives` is `[K, p]` or absent.
pub fn info_nce<E: Element>(
    anchor: &Tensor<E>,
    positive: &Tensor<E>,
    negatives: Option<&Tensor<E>>,
    tau: f64,
) -> Result<Tensor<E>> {
    check_temperature(tau)?;
    let p = anchor.numel();
    if positive.numel() != p || negatives.is_some_and(|n| n.rank() != 2 || n.dim(1) != p) {
        return Err(shape_mismatch(
            "info_nce",
            format!(
                "anchor {:?}, positive {:?}, negatives {:?}",
                anchor.shape(),
                positive.shape(),
                negatives.map(|n| n.shape().to_vec())
            ),
        ));
    }
    let mut rows = vec![positive.reshape(&[1, p])?];
    rows.extend(negatives.cloned());
    let candidates = Tensor::concat(&rows, 0)?;
    let k1 = candidates.dim(0);
    let logits = candidates
        .matmul(&anchor.reshape(&[p, 1])?)?
        .reshape(&[1, k1])?
        .mul_scalar(E::lit(1.0 / tau));
    Ok(logits.log_softmax(1)?.narrow(1, 0, 1)?.sum().neg())
}

/// Row indices (into a flattened contrast pool) used as negatives for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub indices: Vec<usize>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Negatives of image `anchor`: every view-B patch row `j·N + i` with `j ≠ anchor`.
pub fn build_negative_sets(batch: usize, num_patches: usize, anchor: usize) -> NegativeSet {
    NegativeSet {
        indices: (0..batch)
            .filter(|&j| j != anchor)
            .flat_map(|j| (0..num_patches).map(move |i| j * num_patches + i))
            .collect(),
    }
}

/// Scaled logits `[rows, 1+K]` whose column 0 is the positive.
///
/// Dense mode has one row per (image, patch) with `K = (B-1)·N`; vanilla mode
/// has one row per image with `K = B-1`.
pub fn contrast_logits<E: Element>(
    view_a: &ProjectedFeatures<E>,
    view_b: &ProjectedFeatures<E>,
    mode: LossMode,
    tau: f64,
) -> Result<Tensor<E>> {
    check_temperature(tau)?;
    view_a.check_pair(view_b, "contrast_logits")?;
    let (b, n, p) = (view_a.batch(), view_a.num_patches(), view_a.dim());
    let inv_tau = E::lit(1.0 / tau);
    match mode {
        LossMode::Dense => {
            let pool = view_b.patches.reshape(&[b * n, p])?;
            let sims = view_a.global.matmul(&pool.transpose_last()?)?.mul_scalar(inv_tau);
            let width = 1 + (b - 1) * n;
            let mut idx = Vec::with_capacity(b * n * width);
            for img in 0..b {
                let negs = build_negative_sets(b, n, img);
                for i in 0..n {
                    idx.push(img * b * n + img * n + i);
                    idx.extend(negs.indices.iter().map(|&c| img * b * n + c));
                }
            }
            Ok(sims.gather(idx, &[b * n, width])?)
        }
        LossMode::Vanilla => {
            let sims = view_a.global.matmul(&view_b.global.transpose_last()?)?.mul_scalar(inv_tau);
            let mut idx = Vec::with_capacity(b * b);
            for img in 0..b {
                idx.push(img * b + img);
                idx.extend((0..b).filter(|&j| j != img).map(|j| img * b + j));
            }
            Ok(sims.gather(idx, &[b, b])?)
        }
    }
}

fn one_direction<E: Element>(
    a: &ProjectedFeatures<E>,
    b: &ProjectedFeatures<E>,
    mode: LossMode,
    tau: f64,
) -> Result<Tensor<E>> {
    let logits = contrast_logits(a, b, mode, tau)?;
    // every image contributes the same number of rows, so the flat mean
    // equals the mean over images of the per-image mean
    Ok(logits.log_softmax(1)?.narrow(1, 0, 1)?.mean().neg())
}

fn loss<E: Element>(
    a: &ProjectedFeatures<E>,
    b: &ProjectedFeatures<E>,
    mode: LossMode,
    cfg: &ContrastiveConfig,
) -> Result<Tensor<E>> {
    let forward = one_direction(a, b, mode, cfg.temperature)?;
    if !cfg.symmetric {
        return Ok(forward);
    }
    let backward = one_direction(b, a, mode, cfg.temperature)?;
    Ok(forward.add(&backward)?.mul_scalar(E::lit(0.5)))
}

/// Local-to-global loss: mean over images and patches of [`info_nce`].
pub fn dense_loss<E: Element>(
    view_a: &ProjectedFeatures<E>,
    view_b: &ProjectedFeatures<E>,
    cfg: &ContrastiveConfig,
) -> Result<Tensor<E>> {
    loss(view_a, view_b, LossMode::Dense, cfg)
}

/// Global-to-global InfoNCE with the other images' view B as negatives.
pub fn vanilla_loss<E: Element>(
    view_a: &ProjectedFeatures<E>,
    view_b: &ProjectedFeatures<E>,
    cfg: &ContrastiveConfig,
) -> Result<Tensor<E>> {
    loss(view_a, view_b, LossMode::Vanilla, cfg)
}

/// Dispatches on `cfg.mode`.
pub fn contrastive_loss<E: Element>(
    view_a: &ProjectedFeatures<E>,
    view_b: &ProjectedFeatures<E>,
    cfg: &ContrastiveConfig,
) -> Result<Tensor<E>> {
    loss(view_a, view_b, cfg.mode, cfg)
}
