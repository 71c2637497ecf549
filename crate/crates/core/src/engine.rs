//! Self-supervised pretraining loop.
//!
//! A run is a deterministic function of the dataset, the configs and the
//! seed: augmentation and drop-path draw from per-step seed streams, the
//! data order from a per-epoch stream, so a checkpoint needs only the step
//! counter to resume exactly.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lgvit_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::augmentation::{make_view_pair, AugPolicy};
use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::contrastive::{contrastive_loss, ContrastiveConfig, Projector};
use crate::data::epoch_batches;
use crate::error::{Error, Result};
use crate::image::{stack, Image};
use crate::nn::Module;
use crate::optim::{AdamW, AdamWHyper, Moments, WarmupCosine};
use crate::rng::{stream_rng, Stream};
use crate::vit::{Vit, VitConfig};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const PROJ_PREFIX: &str = "proj";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Peak learning rate at `lr_reference_batch`.
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub lr_reference_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            batch_size: 128,
            epochs: 100,
            warmup_fraction: 0.05,
            weight_decay: 0.05,
            seed: 0,
            lr_reference_batch: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.lr_reference_batch == 0 {
            return Err(Error::config("train batch_size, epochs and lr_reference_batch must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("base_lr and weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / self.lr_reference_batch as f64
    }
}

/// Learning rate at 0-based `step` of `total_steps`.
pub fn lr_at_step(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    WarmupCosine::new(cfg.peak_lr(), cfg.warmup_fraction, total_steps).lr(step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub vit: VitConfig,
    pub contrastive: ContrastiveConfig,
    pub augment: AugPolicy,
    pub train: TrainConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        self.contrastive.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        if self.augment.output_size != self.vit.image_size {
            return Err(Error::config(format!(
                "augment.output_size {} differs from model image_size {}",
                self.augment.output_size, self.vit.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimMeta {
    pub t: u64,
    pub hyper: AdamWHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngMeta {
    pub seed: u64,
    pub step: usize,
}

/// JSON metadata stored in pretraining checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMeta {
    pub kind: String,
    pub config: PretrainConfig,
    pub step: usize,
    pub total_steps: usize,
    pub optimizer: OptimMeta,
    pub rng: RngMeta,
}

/// Encoder plus projection head.
#[derive(Debug, Clone)]
pub struct PretrainModel {
    pub encoder: Vit<f32>,
    pub projector: Projector<f32>,
}

impl Module<f32> for PretrainModel {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<f32>)>) {
        let p = |s: &str| format!("{prefix}{s}");
        self.encoder.collect_params(&p("encoder"), out);
        self.projector.collect_params(&p(PROJ_PREFIX), out);
    }
}

/// One row of the per-step metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f32,
    pub wall_ms: u128,
}

impl LogRow {
    pub fn to_tsv(&self) -> String {
        format!("{}\t{}\t{:e}\t{}\t{}", self.step, self.epoch, self.lr, self.loss, self.wall_ms)
    }
}

/// Model, optimizer and position within a run.
pub struct Pretrainer {
    pub config: PretrainConfig,
    pub model: PretrainModel,
    pub optimizer: AdamW,
    /// Completed optimizer steps.
    pub step: usize,
    params: Vec<(String, Tensor<f32>)>,
}

impl Pretrainer {
    pub fn new(config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.train.seed, Stream::Init, &[]);
        let encoder = Vit::new(config.vit.clone(), &mut rng)?;
        let projector = Projector::new(&mut rng, config.vit.embed_dim, &config.contrastive)?;
        let model = PretrainModel { encoder, projector };
        let params = model.named_params("");
        let optimizer = AdamW::new(AdamWHyper::with_weight_decay(config.train.weight_decay));
        Ok(Self {
            config,
            model,
            optimizer,
            step: 0,
            params,
        })
    }

    pub fn params(&self) -> &[(String, Tensor<f32>)] {
        &self.params
    }

    /// Augments, encodes both views, applies the contrastive loss and one
    /// AdamW update. Returns the loss before the update.
    pub fn train_step(&mut self, images: &[Image], total_steps: usize) -> Result<f32> {
        let seed = self.config.train.seed;
        let step = self.step as u64;
        let (mut va, mut vb) = (Vec::with_capacity(images.len()), Vec::with_capacity(images.len()));
        for (i, img) in images.iter().enumerate() {
            let mut rng = stream_rng(seed, Stream::Augment, &[step, i as u64]);
            let (a, b) = make_view_pair(img, &mut rng, &self.config.augment);
            va.push(a);
            vb.push(b);
        }
        let (xa, xb) = (stack(&va)?, stack(&vb)?);
        let mut dp = stream_rng(seed, Stream::DropPath, &[step]);
        let ta = self.model.encoder.forward(&xa, Some(&mut dp))?;
        let tb = self.model.encoder.forward(&xb, Some(&mut dp))?;
        let fa = self.model.projector.project(&ta)?;
        let fb = self.model.projector.project(&tb)?;
        let loss = contrastive_loss(&fa, &fb, &self.config.contrastive)?;
        loss.backward()?;
        let lr = lr_at_step(self.step, total_steps, &self.config.train);
        self.optimizer.step(&self.params, lr, |_| 1.0)?;
        self.params.iter().for_each(|(_, p)| p.zero_grad());
        self.step += 1;
        Ok(loss.item())
    }

    pub fn to_checkpoint(&self, total_steps: usize) -> Result<Checkpoint> {
        let meta = PretrainMeta {
            kind: "pretrain".into(),
            config: self.config.clone(),
            step: self.step,
            total_steps,
            optimizer: OptimMeta {
                t: self.optimizer.t,
                hyper: self.optimizer.hyper,
            },
            rng: RngMeta {
                seed: self.config.train.seed,
                step: self.step,
            },
        };
        let mut tensors: Vec<NamedTensor> = self
            .params
            .iter()
            .map(|(n, t)| NamedTensor::from_tensor(n, t))
            .collect();
        for (name, t) in &self.params {
            if let Some(m) = self.optimizer.state.get(name) {
                for (kind, data) in [("m", &m.m), ("v", &m.v)] {
                    tensors.push(NamedTensor {
                        name: format!("optim.{kind}.{name}"),
                        shape: t.shape().to_vec(),
                        data: data.clone(),
                    });
                }
            }
        }
        Checkpoint::new(&meta, tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: PretrainMeta = ck.meta()?;
        if meta.kind != "pretrain" {
            return Err(Error::IncompatibleCheckpoint(format!("expected a pretraining checkpoint, got `{}`", meta.kind)));
        }
        let mut this = Self::new(meta.config)?;
        ck.restore("", &this.params)?;
        this.optimizer.hyper = meta.optimizer.hyper;
        this.optimizer.t = meta.optimizer.t;
        for (name, _) in &this.params {
            let m = ck.get(&format!("optim.m.{name}"));
            let v = ck.get(&format!("optim.v.{name}"));
            if let (Some(m), Some(v)) = (m, v) {
                this.optimizer.state.insert(
                    name.clone(),
                    Moments {
                        m: m.data.clone(),
                        v: v.data.clone(),
                    },
                );
            }
        }
        this.step = meta.step;
        Ok(this)
    }
}

/// Where and whether to write checkpoints and the metrics log.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub out_dir: Option<PathBuf>,
    /// Stop after this many global steps (for interruption).
    pub max_steps: Option<usize>,
}

pub struct PretrainOutcome {
    pub trainer: Pretrainer,
    pub log: Vec<LogRow>,
    pub total_steps: usize,
}

impl PretrainOutcome {
    /// Mean loss per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.log)
    }
}

pub fn epoch_means(log: &[LogRow]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for row in log {
        if out.len() <= row.epoch {
            out.resize(row.epoch + 1, (0.0, 0));
        }
        out[row.epoch].0 += row.loss as f64;
        out[row.epoch].1 += 1;
    }
    out.into_iter().filter(|e| e.1 > 0).map(|(s, n)| s / n as f64).collect()
}

pub const METRICS_LOG: &str = "metrics.tsv";
pub const METRICS_HEADER: &str = "step\tepoch\tlr\tloss\twall_ms";

fn append_log(dir: &Path, rows: &[LogRow]) -> Result<()> {
    let path = dir.join(METRICS_LOG);
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_tsv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

pub fn steps_per_epoch(num_images: usize, batch: usize) -> usize {
    num_images / batch
}

/// Runs (or resumes) pretraining over in-memory images.
pub fn pretrain(mut trainer: Pretrainer, images: &[Image], output: &RunOutput) -> Result<PretrainOutcome> {
    let train = trainer.config.train.clone();
    let spe = steps_per_epoch(images.len(), train.batch_size);
    if spe == 0 {
        return Err(Error::EmptyDataset);
    }
    let total = train.epochs * spe;
    let stop = output.max_steps.unwrap_or(total).min(total);
    if let Some(dir) = &output.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if train.batch_size == 1 {
        log::warn!("batch size 1 leaves the contrastive loss without negatives");
    }
    let mut log = Vec::new();
    let start = Instant::now();
    while trainer.step < stop {
        let epoch = trainer.step / spe;
        let batches = epoch_batches(images.len(), train.batch_size, Some(train.seed), epoch as u64);
        let mut epoch_rows = Vec::new();
        for idx in &batches[trainer.step % spe..] {
            if trainer.step >= stop {
                break;
            }
            let batch: Vec<Image> = idx.iter().map(|&i| images[i].clone()).collect();
            let lr = lr_at_step(trainer.step, total, &train);
            let loss = trainer.train_step(&batch, total)?;
            if !loss.is_finite() {
                log::warn!("non-finite loss at step {}", trainer.step - 1);
            }
            epoch_rows.push(LogRow {
                step: trainer.step - 1,
                epoch,
                lr,
                loss,
                wall_ms: start.elapsed().as_millis(),
            });
        }
        let finished_epoch = trainer.step % spe == 0;
        if let Some(dir) = &output.out_dir {
            append_log(dir, &epoch_rows)?;
            if finished_epoch {
                trainer
                    .to_checkpoint(total)?
                    .save(dir.join(format!("epoch_{:04}.dckp", trainer.step / spe)))?;
            }
        }
        log::info!(
            "epoch {epoch}: {} steps, mean loss {:.4}",
            epoch_rows.len(),
            epoch_rows.iter().map(|r| r.loss as f64).sum::<f64>() / epoch_rows.len().max(1) as f64
        );
        log.extend(epoch_rows);
    }
    if let Some(dir) = &output.out_dir {
        trainer.to_checkpoint(total)?.save(dir.join("last.dckp"))?;
    }
    Ok(PretrainOutcome {
        trainer,
        log,
        total_steps: total,
    })
}
