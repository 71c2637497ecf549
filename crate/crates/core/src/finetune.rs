//! Dense fine-tuning: a linear segmentation head and an up-projection depth
//! head on top of the encoder's patch tokens.

use std::collections::BTreeMap;
use std::fmt;

use lgvit_tensor::{no_grad, ConvTransposeSpec, Element, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::data::{epoch_batches, Sample};
use crate::engine::{PretrainMeta, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::image::{stack, Image};
use crate::metrics::{abs_rel, delta_threshold, depth_mask, miou, rmse, ConfusionAccumulator};
use crate::nn::{join, Linear, Module};
use crate::optim::{poly_lr, AdamW, AdamWHyper};
use crate::rng::{stream_rng, Stream};
use crate::vit::{TokenSequence, Vit, VitConfig};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Seg,
    Depth,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::Depth => "depth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegHeadConfig {
    pub num_classes: usize,
    pub ignore_index: Option<usize>,
}

impl Default for SegHeadConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            ignore_index: Some(255),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthHeadConfig {
    /// Channel count after each 2× stage; `None` halves from the encoder width.
    pub stage_channels: Option<Vec<usize>>,
    pub depth_range: (f64, f64),
    pub smoothness_weight: f64,
}

impl Default for DepthHeadConfig {
    fn default() -> Self {
        Self {
            stage_channels: None,
            depth_range: (0.1, 10.0),
            smoothness_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSchedule {
    pub base_lr: f64,
    pub poly_power: f64,
    pub weight_decay: f64,
    pub drop_path_rate: f64,
    pub layer_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Apply layer-wise decay when fine-tuning depth.
    pub depth_layer_decay: bool,
    /// Random horizontal flips of image and targets.
    pub flip: bool,
}

impl Default for FinetuneSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            poly_power: 0.9,
            weight_decay: 0.005,
            drop_path_rate: 0.1,
            layer_decay: 0.75,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            depth_layer_decay: false,
            flip: true,
        }
    }
}

impl FinetuneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return Err(Error::config(format!("layer_decay {} outside (0, 1]", self.layer_decay)));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::config("poly_power must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("finetune epochs and batch_size must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::config("finetune drop_path_rate outside [0, 1)"));
        }
        Ok(())
    }
}

/// Learning-rate multipliers: head 1, block `k` of `D` gets `γ^(D−k)`,
/// patch and position embeddings `γ^(D+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMultipliers {
    pub blocks: Vec<f64>,
    pub embed: f64,
    pub head: f64,
}

pub fn layer_lr_multipliers(depth: usize, gamma: f64) -> LayerMultipliers {
    LayerMultipliers {
        blocks: (0..depth).map(|k| gamma.powi((depth - k) as i32)).collect(),
        embed: gamma.powi(depth as i32 + 1),
        head: 1.0,
    }
}

impl LayerMultipliers {
    /// Multiplier for a full parameter name. The final encoder norm sits
    /// with the head.
    pub fn for_param(&self, name: &str) -> f64 {
        let Some(rest) = name.strip_prefix(ENCODER_PREFIX) else {
            return self.head;
        };
        if let Some(block) = rest.strip_prefix("blocks.") {
            let k: usize = block.split('.').next().and_then(|s| s.parse().ok()).unwrap_or(0);
            return self.blocks.get(k).copied().unwrap_or(self.head);
        }
        if rest.starts_with("patch_embed") || rest == "cls_token" || rest == "pos_embed" {
            return self.embed;
        }
        self.head
    }
}

fn patch_grid<E: Element>(tokens: &TokenSequence<E>) -> Result<(Tensor<E>, usize)> {
    let (b, n, d) = (tokens.batch(), tokens.num_patches(), tokens.dim());
    let g = (n as f64).sqrt().round() as usize;
    if g * g != n {
        return Err(Error::InvalidGrid(format!("{n} patch tokens")));
    }
    Ok((tokens.patches()?.reshape(&[b, g, g, d])?, g))
}

/// Linear per-patch classifier, bilinearly upsampled to the input size.
#[derive(Debug, Clone)]
pub struct SegModel<E: Element = f32> {
    pub encoder: Vit<E>,
    pub head: Linear<E>,
    pub config: SegHeadConfig,
}

impl<E: Element> SegModel<E> {
    pub fn new<R: Rng + ?Sized>(encoder: Vit<E>, config: SegHeadConfig, rng: &mut R) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(Error::config("segmentation needs at least 2 classes"));
        }
        let head = Linear::new(rng, encoder.config.embed_dim, config.num_classes);
        Ok(Self { encoder, head, config })
    }

    /// Logits `[B, C, H, W]`.
    pub fn forward(&self, images: &Tensor<E>, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<E>> {
        let (h, w) = (images.dim(2), images.dim(3));
        let tokens = self.encoder.forward(images, rng)?;
        self.head_forward(&tokens, h, w)
    }

    pub fn head_forward(&self, tokens: &TokenSequence<E>, h: usize, w: usize) -> Result<Tensor<E>> {
        let (grid, _) = patch_grid(tokens)?;
        let logits = self.head.forward(&grid)?.resize_bilinear_nhwc(h, w)?;
        Ok(logits.permute(&[0, 3, 1, 2])?)
    }

    pub fn loss(&self, logits: &Tensor<E>, targets: &[usize]) -> Result<Tensor<E>> {
        Ok(logits.cross_entropy(targets, self.config.ignore_index)?)
    }
}

impl<E: Element> Module<E> for SegModel<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

/// One 2× up-projection stage: transposed 3×3 stride-2 conv then gelu.
#[derive(Debug, Clone)]
pub struct UpStage<E: Element = f32> {
    /// `[Cin, 3, 3, Cout]`
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct DepthModel<E: Element = f32> {
    pub encoder: Vit<E>,
    pub stages: Vec<UpStage<E>>,
    /// Final 1×1 conv.
    pub out: Linear<E>,
    pub config: DepthHeadConfig,
}

/// Number of 2× stages that undo a `patch`-pixel patch grid.
pub fn up_stages_for(patch: usize) -> Result<usize> {
    if patch.is_power_of_two() && patch >= 2 {
        Ok(patch.trailing_zeros() as usize)
    } else {
        Err(Error::config(format!("depth head needs a power-of-two patch size, got {patch}")))
    }
}

impl<E: Element> DepthModel<E> {
    pub fn new<R: Rng + ?Sized>(encoder: Vit<E>, config: DepthHeadConfig, rng: &mut R) -> Result<Self> {
        let (d_min, d_max) = config.depth_range;
        if !(d_max > d_min && d_min >= 0.0) {
            return Err(Error::config(format!("depth_range ({d_min}, {d_max}) is invalid")));
        }
        let n = up_stages_for(encoder.config.patch_size)?;
        let d = encoder.config.embed_dim;
        let channels = match &config.stage_channels {
            Some(c) if c.len() == n && c.iter().all(|&v| v > 0) => c.clone(),
            Some(c) => {
                return Err(Error::config(format!("stage_channels {c:?} must list {n} positive widths")));
            }
            None => (1..=n).map(|i| (d >> i).max(8)).collect(),
        };
        let k = ConvTransposeSpec::UPSAMPLE_2X.kernel;
        let mut stages = Vec::with_capacity(n);
        let mut cin = d;
        for &cout in &channels {
            // He-style scale for the ~K²/4 taps that reach each output pixel
            let std = (2.0 / (cin as f64 * (k * k) as f64 / 4.0)).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let w = (0..cin * k * k * cout).map(|_| E::lit(normal.sample(rng))).collect();
            stages.push(UpStage {
                weight: Tensor::param(w, &[cin, k, k, cout])?,
                bias: Tensor::zeros(&[cout]).into_param(),
            });
            cin = cout;
        }
        let out = Linear::new(rng, cin, 1);
        Ok(Self {
            encoder,
            stages,
            out,
            config,
        })
    }

    /// Depth `[B, 1, H, W]` in `(d_min, d_max)`.
    pub fn forward(&self, images: &Tensor<E>, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<E>> {
        let tokens = self.encoder.forward(images, rng)?;
        self.head_forward(&tokens)
    }

    pub fn head_forward(&self, tokens: &TokenSequence<E>) -> Result<Tensor<E>> {
        let (mut x, _) = patch_grid(tokens)?;
        for s in &self.stages {
            x = x
                .conv_transpose2d_nhwc(&s.weight, Some(&s.bias), ConvTransposeSpec::UPSAMPLE_2X)?
                .gelu();
        }
        let raw = self.out.forward(&x)?;
        Ok(self.dilated_sigmoid(&raw)?.permute(&[0, 3, 1, 2])?)
    }

    /// `d_min + (d_max − d_min)·σ(x)`.
    pub fn dilated_sigmoid(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (d_min, d_max) = self.config.depth_range;
        Ok(x.sigmoid().mul_scalar(E::lit(d_max - d_min)).add_scalar(E::lit(d_min)))
    }

    pub fn loss(&self, pred: &Tensor<E>, target: &[E], valid: &[bool]) -> Result<Tensor<E>> {
        depth_loss(pred, target, valid, self.config.smoothness_weight)
    }
}

impl<E: Element> Module<E> for DepthModel<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        for (i, s) in self.stages.iter().enumerate() {
            out.push((join(prefix, &format!("head.up.{i}.weight")), s.weight.clone()));
            out.push((join(prefix, &format!("head.up.{i}.bias")), s.bias.clone()));
        }
        self.out.collect_params(&join(prefix, "head.out"), out);
    }
}

/// Reverse Huber over valid pixels with `c = 0.2·max|e|`.
///
/// The threshold depends on the largest residual and is differentiated
/// through as well.
pub fn berhu_loss<E: Element>(pred: &Tensor<E>, target: &[E], valid: &[bool]) -> Result<Tensor<E>> {
    let n = pred.numel();
    if target.len() != n || valid.len() != n {
        return Err(lgvit_tensor::TensorError::ShapeMismatch {
            op: "berhu_loss",
            detail: format!("{n} predictions, {} targets, {} mask entries", target.len(), valid.len()),
        }
        .into());
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let p = pred.data();
    let e: Vec<f64> = (0..n)
        .map(|i| if valid[i] { p[i].widen() - target[i].widen() } else { 0.0 })
        .collect();
    drop(p);
    let (argmax, emax) = e
        .iter()
        .enumerate()
        .filter(|(i, _)| valid[*i])
        .fold((0, -1.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
    let c = 0.2 * emax;
    let term = |ei: f64| {
        let a = ei.abs();
        if a <= c {
            a
        } else {
            (ei * ei + c * c) / (2.0 * c)
        }
    };
    let total: f64 = (0..n).filter(|&i| valid[i]).map(|i| term(e[i])).sum();
    let m = count as f64;
    let mask = valid.to_vec();
    Ok(Tensor::from_op(
        "berhu",
        vec![E::lit(total / m)],
        Vec::new(),
        vec![pred.clone()],
        move |g, _, _| {
            let g = g[0].widen() / m;
            let mut grad = vec![0.0f64; n];
            if c == 0.0 {
                return vec![Some(vec![E::zero(); n])];
            }
            let mut dc = 0.0;
            for i in (0..n).filter(|&i| mask[i]) {
                let ei = e[i];
                if ei.abs() <= c {
                    grad[i] += ei.signum();
                } else {
                    grad[i] += ei / c;
                    dc += 0.5 - ei * ei / (2.0 * c * c);
                }
            }
            grad[argmax] += dc * 0.2 * e[argmax].signum();
            vec![Some(grad.into_iter().map(|v| E::lit(v * g)).collect())]
        },
    ))
}

/// `mean(dx²) + mean(dy²)` of forward differences over the last two axes.
pub fn smoothness_loss<E: Element>(pred: &Tensor<E>) -> Result<Tensor<E>> {
    let r = pred.rank();
    let (h, w) = (pred.dim(r - 2), pred.dim(r - 1));
    if h < 2 || w < 2 {
        return Err(Error::config(format!("smoothness needs at least 2×2, got {h}×{w}")));
    }
    let dx = pred.narrow(r - 1, 1, w - 1)?.sub(&pred.narrow(r - 1, 0, w - 1)?)?;
    let dy = pred.narrow(r - 2, 1, h - 1)?.sub(&pred.narrow(r - 2, 0, h - 1)?)?;
    Ok(dx.square().mean().add(&dy.square().mean())?)
}

pub fn depth_loss<E: Element>(pred: &Tensor<E>, target: &[E], valid: &[bool], lambda: f64) -> Result<Tensor<E>> {
    let b = berhu_loss(pred, target, valid)?;
    if lambda == 0.0 {
        return Ok(b);
    }
    Ok(b.add(&smoothness_loss(pred)?.mul_scalar(E::lit(lambda)))?)
}

/// `{task, metric, value}` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<(String, String, f64)>,
}

impl EvalReport {
    pub fn push(&mut self, task: &str, metric: &str, value: f64) {
        self.records.push((task.to_string(), metric.to_string(), value));
    }

    pub fn get(&self, task: &str, metric: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|(t, m, _)| t == task && m == metric)
            .map(|r| r.2)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            let cols: Vec<&str> = line.split('\t').collect();
            let value = cols.get(2).and_then(|v| v.parse().ok());
            match (cols.len(), value) {
                (3, Some(v)) => out.push(cols[0], cols[1], v),
                _ => return Err(Error::config(format!("malformed report line `{line}`"))),
            }
        }
        Ok(out)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, m, v) in &self.records {
            writeln!(f, "{t}\t{m}\t{v}")?;
        }
        Ok(())
    }
}

/// Either fine-tuned model.
#[derive(Debug, Clone)]
pub enum DenseModel {
    Seg(SegModel<f32>),
    Depth(DepthModel<f32>),
}

impl DenseModel {
    pub fn task(&self) -> Task {
        match self {
            DenseModel::Seg(_) => Task::Seg,
            DenseModel::Depth(_) => Task::Depth,
        }
    }

    pub fn encoder(&self) -> &Vit<f32> {
        match self {
            DenseModel::Seg(m) => &m.encoder,
            DenseModel::Depth(m) => &m.encoder,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<f32>)> {
        match self {
            DenseModel::Seg(m) => m.named_params(""),
            DenseModel::Depth(m) => m.named_params(""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub task: Task,
    /// Encoder architecture; `image_size` is the fine-tuning resolution.
    pub vit: VitConfig,
    pub seg: SegHeadConfig,
    pub depth: DepthHeadConfig,
    pub schedule: FinetuneSchedule,
}

/// JSON metadata stored in fine-tuned checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMeta {
    pub kind: String,
    pub config: FinetuneConfig,
    pub step: usize,
}

/// Builds the dense model, optionally warm-starting the encoder from a
/// pretraining checkpoint (positional embeddings are resampled when the
/// resolution differs).
pub fn build_model(cfg: &FinetuneConfig, pretrained: Option<&Checkpoint>) -> Result<DenseModel> {
    cfg.schedule.validate()?;
    let mut rng = stream_rng(cfg.schedule.seed, Stream::Init, &[]);
    let mut encoder = match pretrained {
        None => Vit::new(cfg.vit.clone(), &mut rng)?,
        Some(ck) => {
            let meta: PretrainMeta = ck.meta().map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
            let src = meta.config.vit;
            let want = &cfg.vit;
            if (src.patch_size, src.embed_dim, src.depth, src.num_heads) != (want.patch_size, want.embed_dim, want.depth, want.num_heads)
                || src.mlp_hidden() != want.mlp_hidden()
            {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "checkpoint encoder {src:?} cannot initialise {want:?}"
                )));
            }
            let mut enc = Vit::new(src, &mut rng)?;
            ck.restore(ENCODER_PREFIX, &enc.named_params(""))?;
            enc.resize_to(want.image_size)?;
            enc
        }
    };
    encoder.set_drop_path_rate(cfg.schedule.drop_path_rate);
    match cfg.task {
        Task::Seg => Ok(DenseModel::Seg(SegModel::new(encoder, cfg.seg.clone(), &mut rng)?)),
        Task::Depth => Ok(DenseModel::Depth(DepthModel::new(encoder, cfg.depth.clone(), &mut rng)?)),
    }
}

fn flip_rows<T: Copy>(values: &[T], width: usize) -> Vec<T> {
    values
        .chunks(width)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

struct Batch {
    images: Tensor<f32>,
    seg: Vec<usize>,
    depth: Vec<f32>,
    valid: Vec<bool>,
}

fn make_batch(samples: &[&Sample], size: usize, task: Task, flips: Option<&[bool]>) -> Result<Batch> {
    let mut images: Vec<Image> = Vec::with_capacity(samples.len());
    let (mut seg, mut depth, mut valid) = (Vec::new(), Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if s.image.width != size || s.image.height != size {
            return Err(Error::config(format!(
                "sample is {}×{} but the model expects {size}×{size}",
                s.image.width, s.image.height
            )));
        }
        let flip = flips.is_some_and(|f| f[i]);
        images.push(if flip { s.image.flip_horizontal() } else { s.image.clone() });
        match task {
            Task::Seg => {
                let m = s.mask.as_ref().ok_or_else(|| Error::config("segmentation sample without a mask"))?;
                let m = if flip { flip_rows(m, size) } else { m.clone() };
                seg.extend(m.iter().map(|&v| v as usize));
            }
            Task::Depth => {
                let d = s.depth.as_ref().ok_or_else(|| Error::config("depth sample without a depth map"))?;
                let d = if flip { flip_rows(d, size) } else { d.clone() };
                valid.extend(depth_mask(&d));
                depth.extend(d);
            }
        }
    }
    Ok(Batch {
        images: stack(&images)?,
        seg,
        depth,
        valid,
    })
}

pub struct FinetuneOutcome {
    pub model: DenseModel,
    pub report: EvalReport,
    pub losses: Vec<f32>,
    pub checkpoint: Checkpoint,
}

/// Trains the whole network with polynomial decay and layer-wise
/// multipliers, then evaluates on `val`.
pub fn finetune(cfg: &FinetuneConfig, pretrained: Option<&Checkpoint>, train: &[Sample], val: &[Sample]) -> Result<FinetuneOutcome> {
    let model = build_model(cfg, pretrained)?;
    let sch = &cfg.schedule;
    let spe = train.len() / sch.batch_size;
    if spe == 0 {
        return Err(Error::EmptyDataset);
    }
    let total = sch.epochs * spe;
    let params = model.named_params();
    let use_layer_decay = cfg.task == Task::Seg || sch.depth_layer_decay;
    let gamma = if use_layer_decay { sch.layer_decay } else { 1.0 };
    let mults = layer_lr_multipliers(cfg.vit.depth, gamma);
    let scale: BTreeMap<String, f64> = params.iter().map(|(n, _)| (n.clone(), mults.for_param(n))).collect();
    let mut opt = AdamW::new(AdamWHyper::with_weight_decay(sch.weight_decay));
    let size = cfg.vit.image_size;
    let mut losses = Vec::with_capacity(total);
    for step in 0..total {
        let epoch = step / spe;
        let batches = epoch_batches(train.len(), sch.batch_size, Some(sch.seed), epoch as u64);
        let idx = &batches[step % spe];
        let samples: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
        let flips: Vec<bool> = (0..samples.len())
            .map(|i| sch.flip && stream_rng(sch.seed, Stream::Flip, &[step as u64, i as u64]).random::<bool>())
            .collect();
        let batch = make_batch(&samples, size, cfg.task, Some(&flips))?;
        let mut dp = stream_rng(sch.seed, Stream::DropPath, &[step as u64]);
        let loss = match &model {
            DenseModel::Seg(m) => {
                let logits = m.forward(&batch.images, Some(&mut dp))?;
                m.loss(&logits, &batch.seg)?
            }
            DenseModel::Depth(m) => {
                let pred = m.forward(&batch.images, Some(&mut dp))?;
                m.loss(&pred, &batch.depth, &batch.valid)?
            }
        };
        loss.backward()?;
        let lr = poly_lr(step, total, sch.base_lr, sch.poly_power);
        opt.step(&params, lr, |n| scale[n])?;
        params.iter().for_each(|(_, p)| p.zero_grad());
        losses.push(loss.item());
    }
    let report = evaluate(&model, val, sch.batch_size)?;
    let meta = FinetuneMeta {
        kind: cfg.task.name().to_string(),
        config: cfg.clone(),
        step: total,
    };
    let tensors = params.iter().map(|(n, t)| NamedTensor::from_tensor(n, t)).collect();
    let checkpoint = Checkpoint::new(&meta, tensors)?;
    Ok(FinetuneOutcome {
        model,
        report,
        losses,
        checkpoint,
    })
}

/// Rebuilds a fine-tuned model from its checkpoint.
pub fn load_finetuned(ck: &Checkpoint) -> Result<DenseModel> {
    let meta: FinetuneMeta = ck.meta().map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    if meta.kind != meta.config.task.name() {
        return Err(Error::IncompatibleCheckpoint(format!("unexpected checkpoint kind `{}`", meta.kind)));
    }
    let model = build_model(&meta.config, None)?;
    ck.restore("", &model.named_params())?;
    Ok(model)
}

/// Scores `samples` without gradient recording.
pub fn evaluate(model: &DenseModel, samples: &[Sample], batch_size: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = model.encoder().config.image_size;
    let task = model.task();
    let mut report = EvalReport::default();
    no_grad(|| -> Result<()> {
        match model {
            DenseModel::Seg(m) => {
                let mut acc = ConfusionAccumulator::new(m.config.num_classes, m.config.ignore_index);
                let mut correct = 0u64;
                for chunk in samples.chunks(batch_size.max(1)) {
                    let refs: Vec<&Sample> = chunk.iter().collect();
                    let batch = make_batch(&refs, size, task, None)?;
                    let logits = m.forward(&batch.images, None)?;
                    let pred = argmax_channels(&logits);
                    acc.update(&pred, &batch.seg);
                    correct += pred
                        .iter()
                        .zip(&batch.seg)
                        .filter(|(p, t)| Some(**t) != m.config.ignore_index && p == t)
                        .count() as u64;
                }
                report.push("seg", "miou", miou(&acc)?);
                report.push("seg", "pixel_acc", correct as f64 / acc.total().max(1) as f64);
            }
            DenseModel::Depth(m) => {
                let (mut preds, mut gts, mut valid) = (Vec::new(), Vec::new(), Vec::new());
                for chunk in samples.chunks(batch_size.max(1)) {
                    let refs: Vec<&Sample> = chunk.iter().collect();
                    let batch = make_batch(&refs, size, task, None)?;
                    preds.extend(m.forward(&batch.images, None)?.to_vec());
                    gts.extend(batch.depth);
                    valid.extend(batch.valid);
                }
                report.push("depth", "abs_rel", abs_rel(&preds, &gts, Some(&valid))?);
                report.push("depth", "rmse", rmse(&preds, &gts, Some(&valid))?);
                report.push("depth", "delta1", delta_threshold(&preds, &gts, Some(&valid), 1)?);
            }
        }
        Ok(())
    })?;
    Ok(report)
}

/// Per-pixel argmax over axis 1 of `[B, C, H, W]`.
pub fn argmax_channels(logits: &Tensor<f32>) -> Vec<usize> {
    let (b, c, h, w) = (logits.dim(0), logits.dim(1), logits.dim(2), logits.dim(3));
    let v = logits.data();
    let hw = h * w;
    let mut out = Vec::with_capacity(b * hw);
    for bi in 0..b {
        for p in 0..hw {
            let mut best = 0;
            for ci in 1..c {
                if v[(bi * c + ci) * hw + p] > v[(bi * c + best) * hw + p] {
                    best = ci;
                }
            }
            out.push(best);
        }
    }
    out
}
