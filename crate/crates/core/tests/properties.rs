//! Property tests for the losses, metrics, schedules and model outputs.

mod common;

use common::*;
use lgvit_core::augmentation::{make_view_pair, AugPolicy};
use lgvit_core::contrastive::{contrast_logits, dense_loss, info_nce, ContrastiveConfig, LossMode};
use lgvit_core::engine::{lr_at_step, TrainConfig};
use lgvit_core::finetune::{berhu_loss, DepthHeadConfig, DepthModel};
use lgvit_core::image::Image;
use lgvit_core::metrics::{abs_rel, delta_threshold, miou, rmse, ConfusionAccumulator};
use lgvit_core::optim::{poly_lr, WarmupCosine};
use lgvit_core::vit::{Vit, VitConfig};
use lgvit_tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_t(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
}

fn nce(a: &[f64], p: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
    let k = negs.len();
    let dim = a.len();
    let n = Tensor::from_vec(negs.concat(), &[k, dim]).unwrap();
    info_nce(&vec_t(a), &vec_t(p), Some(&n), tau).unwrap().item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn info_nce_falls_with_positive_and_rises_with_negatives(
        seed in any::<u64>(),
        k in 1usize..8,
        dim in 2usize..9,
        delta in 0.05f64..0.5,
        tau in 0.1f64..2.0,
        which in any::<prop::sample::Index>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = unit(uniform(&mut rng, dim, -1.0, 1.0));
        let p = uniform(&mut rng, dim, -1.0, 1.0);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| uniform(&mut rng, dim, -1.0, 1.0)).collect();
        let base = nce(&a, &p, &negs, tau);

        // moving along the unit anchor raises the dot product by exactly delta
        let p_up: Vec<f64> = p.iter().zip(&a).map(|(x, y)| x + delta * y).collect();
        prop_assert!(nce(&a, &p_up, &negs, tau) < base);

        let j = which.index(k);
        let mut negs_up = negs.clone();
        negs_up[j] = negs[j].iter().zip(&a).map(|(x, y)| x + delta * y).collect();
        prop_assert!(nce(&a, &p, &negs_up, tau) > base);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn dense_loss_matches_brute_force(
        seed in any::<u64>(),
        b in 1usize..=4,
        n in 1usize..=9,
        p in 2usize..=16,
        tau in 0.05f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ga, pa, gb, pb) = random_views(&mut rng, b, n, p);
        let cfg = ContrastiveConfig { temperature: tau, ..Default::default() };
        let got = dense_loss(&features(&ga, &pa), &features(&gb, &pb), &cfg).unwrap().item();
        let want = brute_dense_loss(&ga, &pb, tau);
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn coincident_similarities_give_log_pool_size(b in 1usize..6, n in 1usize..6, p in 2usize..8) {
        // every feature is the same unit vector, so every logit is 1/τ
        let v = unit(vec![1.0; p]);
        let ga = vec![v.clone(); b];
        let pb = vec![vec![v.clone(); n]; b];
        let got = dense_loss(&features(&ga, &pb), &features(&ga, &pb), &ContrastiveConfig::default())
            .unwrap()
            .item();
        let want = (1.0 + ((b - 1) * n) as f64).ln();
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn negative_counts_follow_mode(b in 1usize..9, n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64((b * 31 + n) as u64);
        let (ga, pa, gb, pb) = random_views(&mut rng, b, n, 4);
        let (fa, fb) = (features(&ga, &pa), features(&gb, &pb));
        let dense = contrast_logits(&fa, &fb, LossMode::Dense, 0.1).unwrap();
        prop_assert_eq!(dense.shape(), &[b * n, 1 + (b - 1) * n]);
        let vanilla = contrast_logits(&fa, &fb, LossMode::Vanilla, 0.1).unwrap();
        prop_assert_eq!(vanilla.shape(), &[b, b]);
    }

    #[test]
    fn berhu_is_continuous_and_monotone(e_max in 0.1f64..20.0, steps in 50usize..200) {
        // pixel 0 fixes c = 0.2·e_max; pixel 1 sweeps |e| over [0, 5c]
        let c = 0.2 * e_max;
        let loss = |e: f64| {
            let pred = Tensor::from_vec(vec![e_max, e], &[2]).unwrap();
            berhu_loss(&pred, &[0.0, 0.0], &[true, true]).unwrap().item()
        };
        let h = 5.0 * c / steps as f64;
        let mut prev = loss(0.0);
        for s in 1..=steps {
            let cur = loss(h * s as f64);
            prop_assert!(cur >= prev - 1e-12, "decreasing at step {s}");
            // the per-pixel slope is at most |e|/c ≤ 5, halved by the mean
            prop_assert!(cur - prev <= 2.5 * h + 1e-9, "jump at step {s}");
            prev = cur;
        }
        // both branches meet at |e| = c
        let at_c = loss(c);
        let just_above = loss(c * (1.0 + 1e-9));
        prop_assert!((at_c - just_above).abs() < 1e-6);
    }

    #[test]
    fn metrics_ignore_pixel_order(seed in any::<u64>(), len in 4usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<usize> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..4)).collect();
        let gt: Vec<usize> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..4)).collect();
        let dp: Vec<f64> = uniform(&mut rng, len, 0.1, 10.0);
        let dg: Vec<f64> = uniform(&mut rng, len, 0.1, 10.0);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let pick = |v: &[usize]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pickf = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();

        let score = |p: &[usize], g: &[usize]| {
            let mut acc = ConfusionAccumulator::new(4, None);
            acc.update(p, g);
            miou(&acc).unwrap()
        };
        prop_assert_eq!(score(&pred, &gt), score(&pick(&pred), &pick(&gt)));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(abs_rel(&dp, &dg, None).unwrap(), abs_rel(&pickf(&dp), &pickf(&dg), None).unwrap()));
        prop_assert!(close(rmse(&dp, &dg, None).unwrap(), rmse(&pickf(&dp), &pickf(&dg), None).unwrap()));
        prop_assert_eq!(
            delta_threshold(&dp, &dg, None, 1).unwrap(),
            delta_threshold(&pickf(&dp), &pickf(&dg), None, 1).unwrap()
        );
    }

    #[test]
    fn miou_ignores_class_names(seed in any::<u64>(), len in 4usize..200, classes in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<usize> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..classes)).collect();
        let gt: Vec<usize> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..classes)).collect();
        let mut relabel: Vec<usize> = (0..classes).collect();
        relabel.shuffle(&mut rng);
        let map = |v: &[usize]| v.iter().map(|&c| relabel[c]).collect::<Vec<_>>();
        let score = |p: &[usize], g: &[usize]| {
            let mut acc = ConfusionAccumulator::new(classes, None);
            acc.update(p, g);
            miou(&acc).unwrap()
        };
        let (a, b) = (score(&pred, &gt), score(&map(&pred), &map(&gt)));
        // the class mean is a float sum, so reordering classes may move the last bit
        prop_assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
    }

    #[test]
    fn accumulator_merge_is_associative_and_commutative(seed in any::<u64>(), len in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shard = |rng: &mut ChaCha8Rng| {
            let mut acc = ConfusionAccumulator::new(3, Some(255));
            let pick = |rng: &mut ChaCha8Rng| [0usize, 1, 2, 255][rand::Rng::random_range(rng, 0..4)];
            let p: Vec<usize> = (0..len).map(|_| rand::Rng::random_range(rng, 0..3)).collect();
            let g: Vec<usize> = (0..len).map(|_| pick(rng)).collect();
            acc.update(&p, &g);
            acc
        };
        let (a, b, c) = (shard(&mut rng), shard(&mut rng), shard(&mut rng));
        let merged = |x: &ConfusionAccumulator, y: &ConfusionAccumulator| {
            let mut m = x.clone();
            m.merge(y);
            m
        };
        let left = merged(&merged(&a, &b), &c);
        let right = merged(&a, &merged(&b, &c));
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(merged(&a, &b), merged(&b, &a));
        prop_assert_eq!(left.total(), a.total() + b.total() + c.total());
    }

    #[test]
    fn warmup_cosine_is_continuous_and_non_negative(
        peak in 1e-6f64..1.0,
        frac in 0.01f64..0.5,
        total in 20usize..5000,
    ) {
        let s = WarmupCosine::new(peak, frac, total);
        let w = s.warmup_steps;
        for step in 0..=total {
            let lr = s.lr(step);
            prop_assert!((0.0..=peak).contains(&lr), "lr {lr} at {step}");
        }
        // at the joint the schedule moves no more than one warmup increment
        if w > 0 {
            let jump = (s.lr(w) - s.lr(w - 1)).abs();
            prop_assert!(jump <= peak / w as f64 + 1e-15);
            prop_assert!(s.lr(w + 1) <= s.lr(w));
        }
    }

    #[test]
    fn scaled_schedule_matches_plain_schedule(batch in 1usize..512, total in 10usize..1000) {
        let cfg = TrainConfig { batch_size: batch, ..Default::default() };
        let plain = WarmupCosine::new(cfg.base_lr * batch as f64 / 128.0, cfg.warmup_fraction, total);
        for step in [0, total / 3, total / 2, total] {
            prop_assert_eq!(lr_at_step(step, total, &cfg), plain.lr(step));
        }
    }

    #[test]
    fn poly_decay_is_monotone(base in 1e-6f64..1.0, power in 0.1f64..3.0, total in 1usize..500) {
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = poly_lr(step, total, base, power);
            prop_assert!(lr >= 0.0 && lr <= prev);
            prev = lr;
        }
        prop_assert_eq!(poly_lr(total, total, base, power), 0.0);
    }

    #[test]
    fn views_stay_in_range_and_repeat(seed in any::<u64>(), w in 8usize..40, h in 8usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..3 * w * h).map(|_| rand::Rng::random(&mut rng)).collect();
        let img = Image::new(w, h, data);
        let policy = AugPolicy::simclr(16);
        let (a, b) = make_view_pair(&img, &mut ChaCha8Rng::seed_from_u64(seed ^ 1), &policy);
        let (a2, b2) = make_view_pair(&img, &mut ChaCha8Rng::seed_from_u64(seed ^ 1), &policy);
        prop_assert_eq!(&a, &a2);
        prop_assert_eq!(&b, &b2);
        for v in a.data.iter().chain(&b.data) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        prop_assert_eq!((a.width, a.height), (16, 16));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn depth_outputs_stay_inside_range(
        seed in any::<u64>(),
        d_min in 0.0f64..5.0,
        span in 0.5f64..50.0,
        batch in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vit = VitConfig { image_size: 16, patch_size: 4, embed_dim: 16, depth: 1, num_heads: 2, ..VitConfig::micro() };
        let encoder = Vit::<f32>::new(vit, &mut rng).unwrap();
        let cfg = DepthHeadConfig { depth_range: (d_min, d_min + span), ..Default::default() };
        let model = DepthModel::new(encoder, cfg, &mut rng).unwrap();
        let x: Vec<f32> = (0..batch * 3 * 16 * 16).map(|_| rand::Rng::random(&mut rng)).collect();
        let out = model.forward(&Tensor::from_vec(x, &[batch, 3, 16, 16]).unwrap(), None).unwrap();
        prop_assert_eq!(out.shape(), &[batch, 1, 16, 16]);
        let (lo, hi) = (d_min as f32, (d_min + span) as f32);
        for &v in out.data().iter() {
            prop_assert!(v > lo && v < hi, "{v} outside ({lo}, {hi})");
        }
    }
}
