//! Optimizer, pretraining loop and checkpoint behaviour.

mod common;

use common::*;
use lgvit_core::checkpoint::Checkpoint;
use lgvit_core::contrastive::dense_loss;
use lgvit_core::engine::{pretrain, Pretrainer, RunOutput, ENCODER_PREFIX, METRICS_LOG};
use lgvit_core::image::{stack, Image};
use lgvit_core::nn::Module;
use lgvit_core::optim::{is_decay_excluded, AdamW, AdamWHyper};
use lgvit_core::Error;
use lgvit_tensor::{no_grad, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn images(count: usize, seed: u64) -> Vec<Image> {
    render(&shapes_spec(count, seed), 0).into_iter().map(|s| s.image).collect()
}

#[test]
fn adam_without_decay_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = uniform(&mut rng, 5, -1.0, 1.0);
    let p = Tensor::param(start.iter().map(|&v| v as f32).collect(), &[5]).unwrap();
    let params = vec![("w".to_string(), p.clone())];
    let mut opt = AdamW::new(AdamWHyper::with_weight_decay(0.0));
    let mut refs: Vec<ScalarAdam> = (0..5).map(|_| ScalarAdam::new()).collect();
    let mut theta: Vec<f64> = p.to_vec().iter().map(|&v| v as f64).collect();
    for step in 0..100 {
        // gradient of a fixed quadratic plus a step-dependent wobble
        let grads: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(i, t)| 2.0 * (t - 0.1 * i as f64) + 0.3 * ((step * (i + 1)) as f64).sin())
            .collect();
        let current: Vec<f64> = p.to_vec().iter().map(|&v| v as f64).collect();
        let g32: Vec<f32> = grads.iter().map(|&g| g as f32).collect();
        p.zero_grad();
        p.mul(&Tensor::from_vec(g32.clone(), &[5]).unwrap()).unwrap().sum().backward().unwrap();
        opt.step(&params, 1e-2, |_| 1.0).unwrap();
        for i in 0..5 {
            theta[i] = refs[i].update(current[i], g32[i] as f64, 1e-2, 0.0);
        }
        let got = p.to_vec();
        for i in 0..5 {
            assert!(
                (got[i] as f64 - theta[i]).abs() < 1e-7,
                "step {step} entry {i}: {} vs {}",
                got[i],
                theta[i]
            );
            // keep the reference on the stored f32 value
            theta[i] = got[i] as f64;
        }
    }
}

#[test]
fn decay_exclusions_are_exactly_biases_norms_and_embeddings() {
    let trainer = Pretrainer::new(micro_pretrain(0, 1)).unwrap();
    let excluded: Vec<&str> = trainer
        .params()
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| is_decay_excluded(n))
        .collect();
    for name in &excluded {
        let last = name.rsplit('.').next().unwrap();
        let is_norm = name.split('.').any(|s| s.starts_with("norm"));
        assert!(
            last == "bias" || is_norm || *name == "encoder.cls_token" || *name == "encoder.pos_embed",
            "{name} should decay"
        );
    }
    for (name, _) in trainer.params() {
        if name.ends_with(".weight") && !name.contains("norm") {
            assert!(!is_decay_excluded(name), "{name} should decay");
        }
    }
    assert!(excluded.contains(&"encoder.cls_token"));
    assert!(excluded.contains(&"encoder.pos_embed"));
    assert!(excluded.contains(&"encoder.norm.weight"));
    assert!(excluded.contains(&"encoder.blocks.0.norm1.bias"));
}

#[test]
fn first_step_loss_is_near_uniform_and_matches_brute_force() {
    // B = 4 images at 32 px with patch 8 gives N = 16 and ln(1 + 3·16)
    let cfg = micro_pretrain(0, 1);
    let trainer = Pretrainer::new(cfg.clone()).unwrap();
    let imgs = images(4, 9);
    let x = stack(&imgs).unwrap();
    let (loss, ga, pb) = no_grad(|| {
        let ta = trainer.model.encoder.forward(&x, None).unwrap();
        let fa = trainer.model.projector.project(&ta).unwrap();
        let fb = fa.clone();
        let loss = dense_loss(&fa, &fb, &cfg.contrastive).unwrap().item() as f64;
        (loss, fa.global.to_vec(), fb.patches.to_vec())
    });
    let p = cfg.contrastive.proj_out_dim;
    let ga: Vec<Vec<f64>> = ga.chunks(p).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let pb: Vec<Vec<Vec<f64>>> = pb
        .chunks(16 * p)
        .map(|img| img.chunks(p).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
        .collect();
    let oracle = brute_dense_loss(&ga, &pb, cfg.contrastive.temperature);
    assert!((loss - oracle).abs() < 1e-4, "{loss} vs {oracle}");
    let uniform = 49f64.ln();
    assert!((loss - uniform).abs() < 0.5, "{loss} vs ln 49 = {uniform}");
}

#[test]
fn losses_stay_finite_across_seeds() {
    let imgs = images(4, 1);
    for seed in 0..100 {
        let mut cfg = micro_pretrain(seed, 1);
        cfg.train.batch_size = 4;
        let mut t = Pretrainer::new(cfg).unwrap();
        let loss = t.train_step(&imgs, 10).unwrap();
        assert!(loss.is_finite(), "seed {seed}: {loss}");
    }
}

#[test]
fn identical_steps_are_bitwise_identical() {
    let imgs = images(8, 2);
    let mut cfg = micro_pretrain(5, 1);
    cfg.train.batch_size = 8;
    cfg.vit.drop_path_rate = 0.1;
    let run = || {
        let mut t = Pretrainer::new(cfg.clone()).unwrap();
        (0..3).map(|_| t.train_step(&imgs, 3).unwrap().to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn small_run(epochs: usize) -> (Vec<Image>, lgvit_core::engine::PretrainConfig) {
    let mut cfg = micro_pretrain(11, epochs);
    cfg.train.batch_size = 8;
    cfg.vit.drop_path_rate = 0.1;
    (images(24, 4), cfg)
}

#[test]
fn resume_reproduces_uninterrupted_run_bitwise() {
    let (imgs, cfg) = small_run(3);
    let full = pretrain(Pretrainer::new(cfg.clone()).unwrap(), &imgs, &RunOutput::default()).unwrap();
    assert_eq!(full.log.len(), 9);

    let dir = tempfile::tempdir().unwrap();
    let first = RunOutput {
        out_dir: Some(dir.path().to_path_buf()),
        max_steps: Some(4),
    };
    let head = pretrain(Pretrainer::new(cfg).unwrap(), &imgs, &first).unwrap();
    assert_eq!(head.trainer.step, 4);
    // the interruption lands mid-epoch, so only last.dckp holds step 4
    let ck = Checkpoint::load(dir.path().join("last.dckp")).unwrap();
    let resumed = Pretrainer::from_checkpoint(&ck).unwrap();
    assert_eq!(resumed.step, 4);
    let tail = pretrain(resumed, &imgs, &RunOutput::default()).unwrap();

    let bits = |rows: &[lgvit_core::engine::LogRow]| rows.iter().map(|r| (r.step, r.loss.to_bits())).collect::<Vec<_>>();
    let mut stitched = bits(&head.log);
    stitched.extend(bits(&tail.log));
    assert_eq!(stitched, bits(&full.log));
    for ((_, a), (_, b)) in tail.trainer.params().iter().zip(full.trainer.params()) {
        assert_eq!(a.to_vec(), b.to_vec());
    }
}

#[test]
fn run_writes_epoch_checkpoints_and_log() {
    let (imgs, cfg) = small_run(2);
    let dir = tempfile::tempdir().unwrap();
    let out = RunOutput {
        out_dir: Some(dir.path().to_path_buf()),
        max_steps: None,
    };
    pretrain(Pretrainer::new(cfg).unwrap(), &imgs, &out).unwrap();
    for f in ["epoch_0001.dckp", "epoch_0002.dckp", "last.dckp", METRICS_LOG] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(dir.path().join(METRICS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let (imgs, cfg) = small_run(1);
    let mut t = Pretrainer::new(cfg).unwrap();
    t.train_step(&imgs[..8], 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.dckp"), dir.path().join("b.dckp"));
    t.to_checkpoint(3).unwrap().save(&a).unwrap();
    let reloaded = Pretrainer::from_checkpoint(&Checkpoint::load(&a).unwrap()).unwrap();
    reloaded.to_checkpoint(3).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn encoder_weights_are_stored_under_encoder_prefix() {
    let t = Pretrainer::new(micro_pretrain(0, 1)).unwrap();
    let ck = t.to_checkpoint(1).unwrap();
    for (name, _) in t.model.encoder.named_params("") {
        assert!(ck.get(&format!("{ENCODER_PREFIX}{name}")).is_some(), "{name}");
    }
}

#[test]
fn too_few_images_is_an_empty_dataset() {
    let cfg = micro_pretrain(0, 1);
    let err = pretrain(Pretrainer::new(cfg).unwrap(), &images(4, 0), &RunOutput::default()).err();
    assert!(matches!(err, Some(Error::EmptyDataset)));
}
