use lpkm_core::face::FaceTemplate;
use lpkm_core::losses::stitching_loss;
use lpkm_core::motion::{transform_scaled, KeypointSet};
use lpkm_core::numcore::Mlp;
use lpkm_core::render::{region_mask, render, Region};
use lpkm_core::retarget::{
    apply_stitch, eyes_offset, stitch_input, stitch_offset, EyesRetargetWeights,
    LipRetargetWeights, StitchingWeights,
};
use lpkm_core::trainer::{
    block_means, gen_dataset, gen_split, init_rng, shoulder_consistency,
    train_eyes, train_lip, train_stitching, SyntheticSample, TargetMode, TrainConfig,
    MAX_DRIVING_SCALAR,
};
use lpkm_core::Error;
use sha2::{Digest, Sha256};

fn small(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 8,
        samples: 24,
        held_out: 8,
        image_size: 32,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

fn nop() -> impl FnMut(usize, &Mlp) -> lpkm_core::Result<()> {
    |_, _| Ok(())
}

fn digest(parts: &[String]) -> Vec<u8> {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
    }
    h.finalize().to_vec()
}

#[test]
fn datasets_are_deterministic_and_in_range() {
    let a = gen_dataset(7, 12).unwrap();
    assert_eq!(a, gen_dataset(7, 12).unwrap());
    assert_ne!(a, gen_dataset(8, 12).unwrap());
    for s in &a {
        assert!((0.0..=MAX_DRIVING_SCALAR).contains(&s.driving_eyes));
        assert!((0.0..=MAX_DRIVING_SCALAR).contains(&s.driving_lip));
        assert_eq!(s.source_kp, transform_scaled(&s.canonical, &s.source).unwrap());
        assert_eq!(s.driving_kp, transform_scaled(&s.canonical, &s.driving).unwrap());
    }
    // Samples depend only on their own index.
    let b = gen_dataset(7, 5).unwrap();
    assert_eq!(&a[..5], &b[..]);
    assert!(matches!(gen_dataset(7, 0), Err(Error::EmptyDataset)));
}

#[test]
fn same_seed_gives_bitwise_identical_runs() {
    let cfg = small(6);
    let t = FaceTemplate::default();
    let (train, _) = gen_split(&t, &cfg).unwrap();
    let run = || {
        let init = StitchingWeights::init(&mut init_rng(cfg.seed));
        train_stitching(&cfg, &t, &train, init, &mut nop()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.curve, b.curve);
    let eyes = || {
        let init = EyesRetargetWeights::init(&mut init_rng(cfg.seed));
        train_eyes(&cfg, &t, &train, init, TargetMode::Random, &mut nop()).unwrap()
    };
    let (a, b) = (eyes(), eyes());
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.curve, b.curve);
}

#[test]
fn training_leaves_template_and_data_untouched() {
    let cfg = small(4);
    let t = FaceTemplate::default();
    let (train, held) = gen_split(&t, &cfg).unwrap();
    let state = |t: &FaceTemplate, d: &[SyntheticSample], h: &[SyntheticSample]| {
        digest(&[format!("{t:?}"), format!("{d:?}"), format!("{h:?}"), format!("{cfg:?}")])
    };
    let before = state(&t, &train, &held);
    let mut rng = init_rng(0);
    train_stitching(&cfg, &t, &train, StitchingWeights::init(&mut rng), &mut nop()).unwrap();
    train_eyes(&cfg, &t, &train, EyesRetargetWeights::init(&mut rng), TargetMode::Random, &mut nop()).unwrap();
    train_lip(&cfg, &t, &train, LipRetargetWeights::init(&mut rng), TargetMode::Random, &mut nop()).unwrap();
    assert_eq!(before, state(&t, &train, &held));
    assert_eq!(t, FaceTemplate::default());
}

#[test]
fn zero_steps_returns_the_initialization() {
    let cfg = small(0);
    let t = FaceTemplate::default();
    let (train, _) = gen_split(&t, &cfg).unwrap();
    let init = LipRetargetWeights::init(&mut init_rng(3));
    let mut calls = Vec::new();
    let run = train_lip(&cfg, &t, &train, init.clone(), TargetMode::Random, &mut |s, _| {
        calls.push(s);
        Ok(())
    })
    .unwrap();
    assert_eq!(run.weights, init);
    assert!(run.curve.is_empty());
    assert_eq!(calls, vec![0]);
}

#[test]
fn checkpoints_every_interval_and_at_the_end() {
    let cfg = TrainConfig { checkpoint_every: 2, ..small(5) };
    let t = FaceTemplate::default();
    let (train, _) = gen_split(&t, &cfg).unwrap();
    let mut calls = Vec::new();
    train_stitching(&cfg, &t, &train, StitchingWeights::init(&mut init_rng(0)), &mut |s, _| {
        calls.push(s);
        Ok(())
    })
    .unwrap();
    assert_eq!(calls, vec![2, 4, 5]);
}

/// With one sample and a batch of one, the first logged loss is the
/// objective of the initial network, computed here without the graph.
#[test]
fn logged_loss_is_the_objective_being_minimized() {
    let cfg = TrainConfig { samples: 1, batch: 1, held_out: 0, ..small(1) };
    let t = FaceTemplate::default();
    let (train, _) = gen_split(&t, &cfg).unwrap();
    let s = &train[0];
    let init = StitchingWeights::init(&mut init_rng(5));
    let out = init.mlp().forward(&stitch_input(&s.source_kp, &s.driving_kp)).unwrap();
    let (d, shift) = stitch_offset(&init, &s.source_kp, &s.driving_kp).unwrap();
    let pred = render(&s.image, &s.source_kp, &apply_stitch(&s.driving_kp, &d, shift), cfg.sigma).unwrap();
    let mask = region_mask(&t, Region::NonShoulder, &s.source_kp, 32, 32).unwrap();
    let expect = stitching_loss(&pred, &s.image, &mask, &out, &cfg.weights).unwrap();
    let run = train_stitching(&cfg, &t, &train, init.clone(), &mut nop()).unwrap();
    let got = run.curve[0].terms;
    assert!((got.total - expect.total).abs() < 1e-9 * expect.total);
    assert!((got.consistency - expect.consistency).abs() < 1e-9 * expect.total);
    assert!((got.regularization - expect.regularization).abs() < 1e-9 * expect.total);
    assert_ne!(run.weights, init);
}

#[test]
fn stitching_reduces_held_out_shoulder_error() {
    let cfg = small(800);
    let t = FaceTemplate::default();
    let (train, held) = gen_split(&t, &cfg).unwrap();
    let init = StitchingWeights::init(&mut init_rng(cfg.seed));
    let before = shoulder_consistency(&t, &held, Some(&init), cfg.sigma).unwrap();
    let run = train_stitching(&cfg, &t, &train, init, &mut nop()).unwrap();
    let after = shoulder_consistency(&t, &held, Some(&run.weights), cfg.sigma).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
    let blocks = block_means(&run.curve, 100);
    assert_eq!(blocks.len(), 8);
    assert!(blocks[7] < blocks[0]);

    // A driving pose equal to the source needs less correction than a
    // cross-identity one.
    let l1 = |x_d: &dyn Fn(&SyntheticSample) -> KeypointSet| {
        held.iter()
            .map(|s| {
                let out = run.weights.mlp().forward(&stitch_input(&s.source_kp, &x_d(s))).unwrap();
                out.iter().map(|v| v.abs()).sum::<f64>()
            })
            .sum::<f64>()
    };
    let same_pose = l1(&|s| s.source_kp);
    let cross = l1(&|s| s.driving_kp);
    assert!(same_pose < cross);
}

/// Targets equal to the measured source condition leave little to change.
/// From the zero-offset start only the gap between each eye and the mean of
/// both enters the condition term; from a fully random network the
/// regularizer shrinks the offsets.
#[test]
fn source_targets_keep_offsets_small() {
    let cfg = small(200);
    let t = FaceTemplate::default();
    let (train, held) = gen_split(&t, &cfg).unwrap();
    let mean_l1 = |w: &EyesRetargetWeights| {
        held.iter()
            .map(|s| eyes_offset(w, &s.source_kp, s.eyes, s.eyes.mean()).unwrap().l1())
            .sum::<f64>()
            / held.len() as f64
    };
    let init = EyesRetargetWeights::init(&mut init_rng(cfg.seed));
    let src = train_eyes(&cfg, &t, &train, init.clone(), TargetMode::Source, &mut nop()).unwrap();
    let rnd = train_eyes(&cfg, &t, &train, init, TargetMode::Random, &mut nop()).unwrap();
    assert!(src.curve[0].terms.condition < 0.1 * rnd.curve[0].terms.condition);
    assert!(mean_l1(&src.weights) < mean_l1(&rnd.weights));

    let random = EyesRetargetWeights::random(&mut init_rng(cfg.seed));
    let baseline = mean_l1(&random);
    let shrunk = train_eyes(&cfg, &t, &train, random, TargetMode::Source, &mut nop()).unwrap();
    assert!(mean_l1(&shrunk.weights) < 0.5 * baseline);
}

#[test]
fn divergence_is_a_numeric_failure_after_a_good_checkpoint() {
    let cfg = TrainConfig { lr: 1e300, ..small(10) };
    let t = FaceTemplate::default();
    let (train, _) = gen_split(&t, &cfg).unwrap();
    let mut saved: Vec<(usize, bool)> = Vec::new();
    let err = train_stitching(&cfg, &t, &train, StitchingWeights::init(&mut init_rng(0)), &mut |s, m| {
        saved.push((s, m.params().iter().all(|p| p.is_finite())));
        Ok(())
    })
    .err()
    .expect("training must fail");
    assert!(matches!(err, Error::NumericFailure(_)), "{err}");
    let (step, finite) = *saved.last().unwrap();
    assert!(finite);
    assert!(step < cfg.steps);
}

#[test]
fn rejects_invalid_configs() {
    let t = FaceTemplate::default();
    let train = gen_dataset(0, 2).unwrap();
    for bad in [
        TrainConfig { lr: 0.0, ..small(1) },
        TrainConfig { beta1: 1.0, ..small(1) },
        TrainConfig { batch: 0, ..small(1) },
        TrainConfig { sigma: -1.0, ..small(1) },
    ] {
        let r = train_stitching(&bad, &t, &train, StitchingWeights::zeros(), &mut nop());
        assert!(matches!(r, Err(Error::Config(_))));
    }
    let r = train_stitching(&small(1), &t, &[], StitchingWeights::zeros(), &mut nop());
    assert!(matches!(r, Err(Error::EmptyDataset)));
}
