use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::MotionSequence;
use crate::features::{encode, FeatureSequence, Normalizer, CONTACT, DP, FEATURES, PY, WINDOW};
use crate::kinematics::{forward_kinematics, KinematicTree, Mat3, Pose, Vec3, NUM_SITES};
use crate::numerics::{check_gradients, Graph, Tensor};

fn tree() -> KinematicTree {
    KinematicTree::default_tree()
}

fn toy_motion(n: usize, moving: bool) -> MotionSequence {
    let frames = (0..n)
        .map(|i| {
            let t = i as f64;
            let rotations = (0..24)
                .map(|s| {
                    if moving {
                        Mat3::from_rotvec(Vec3::new(0.1 * (t + s as f64).sin(), 0.05 * t, 0.02 * s as f64))
                    } else {
                        Mat3::rot_y(0.01 * s as f64)
                    }
                })
                .collect();
            let root = if moving { Vec3::new(0.04 * t, 0.93 + 0.01 * t, -0.03 * t * t) } else { Vec3::new(0.2, 0.95, 0.1) };
            Pose { rotations, root_position: root }
        })
        .collect();
    MotionSequence { rate: 20, frames, height: 1.6, mass: 70.0, trial_id: 3 }
}

fn encoded(m: &MotionSequence, contacts: &[[f64; 4]]) -> FeatureSequence {
    let acc = vec![vec![Vec3::new(0.3, -0.1, 0.2); NUM_SITES]; m.len()];
    encode(m, &tree(), &acc, contacts).unwrap()
}

fn as_tensor(seq: &FeatureSequence) -> Tensor<f64> {
    Tensor::new([seq.frames(), FEATURES], seq.data.clone()).unwrap()
}

fn ctx() -> LossContext<f64> {
    LossContext::new(&tree(), Normalizer::default(), LossWeights::default())
}

#[test]
fn cosine_schedule_properties() {
    for steps in [2, 10, 100, 1000] {
        let s = DiffusionSchedule::cosine(steps).unwrap();
        assert_eq!(s.alpha_bar.len(), steps + 1);
        assert!(s.alpha_bar(0) >= 0.999);
        assert!(s.alpha_bar(steps) <= 1e-3);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    }
    let s = DiffusionSchedule::cosine(1000).unwrap();
    assert!((s.alpha_bar(500) - 0.49384359044063775).abs() < 1e-14);
    assert!(DiffusionSchedule::cosine(1).is_err());
}

#[test]
fn noise_endpoints_and_determinism() {
    let s = DiffusionSchedule::cosine(1000).unwrap();
    let x = Tensor::<f64>::from_fn([100_000], |i| ((i % 17) as f64 - 8.0) * 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0 = s.noise(&x, 0, &mut rng).unwrap();
    let bound = (1.0 - s.alpha_bar(0)).sqrt() * 5.0 + 1e-12;
    assert!(z0.max_abs_diff(&x) <= bound);
    let zt = s.noise(&x, 1000, &mut rng).unwrap();
    let n = zt.len() as f64;
    let mean = zt.data().iter().sum::<f64>() / n;
    let var = zt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
    let a = s.noise(&x, 300, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = s.noise(&x, 300, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert!(s.noise(&x, 1001, &mut rng).is_err());
}

fn random_input(frames: usize, seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([frames, FEATURES], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn denoiser_shape_height_and_time_order() {
    let size = ModelSize::new(1, 16, 32).unwrap();
    let p = DenoiserParams::<f64>::init(size, 2).unwrap();
    assert_eq!(p.tensors.len(), param_specs(&size).len());
    assert_eq!(p.count(), DenoiserParams::<f64>::init(size, 99).unwrap().count());
    let z = random_input(WINDOW, 4);
    let out = p.denoise(&z, &[250], &[1.7]).unwrap();
    assert_eq!(out.shape(), &[WINDOW, FEATURES]);
    assert_eq!(out, p.denoise(&z, &[250], &[1.7]).unwrap());
    assert_ne!(out, p.denoise(&z, &[250], &[1.9]).unwrap());
    assert_ne!(out, p.denoise(&z, &[600], &[1.7]).unwrap());

    let mut blind = p.clone();
    blind.zero_height_embedding();
    assert_eq!(blind.denoise(&z, &[250], &[1.5]).unwrap(), blind.denoise(&z, &[250], &[1.9]).unwrap());

    // Reversing the frames must not simply reverse the output.
    let mut rev = Vec::with_capacity(z.len());
    for i in (0..WINDOW).rev() {
        rev.extend_from_slice(&z.data()[i * FEATURES..(i + 1) * FEATURES]);
    }
    let out_rev = p.denoise(&Tensor::new([WINDOW, FEATURES], rev).unwrap(), &[250], &[1.7]).unwrap();
    let mut back = Vec::with_capacity(z.len());
    for i in (0..WINDOW).rev() {
        back.extend_from_slice(&out_rev.data()[i * FEATURES..(i + 1) * FEATURES]);
    }
    assert!(Tensor::new([WINDOW, FEATURES], back).unwrap().max_abs_diff(&out) > 1e-6);

    let mut bad = z.data().to_vec();
    bad[7] = f64::NAN;
    assert!(p.denoise(&Tensor::new([WINDOW, FEATURES], bad).unwrap(), &[1], &[1.7]).is_err());
}

#[test]
fn batched_forward_matches_single() {
    let p = DenoiserParams::<f64>::init(ModelSize::new(2, 16, 24).unwrap(), 8).unwrap();
    let (a, b) = (random_input(WINDOW, 1), random_input(WINDOW, 2));
    let both = Tensor::new([2 * WINDOW, FEATURES], [a.data(), b.data()].concat()).unwrap();
    let out = p.denoise(&both, &[10, 700], &[1.6, 1.8]).unwrap();
    let oa = p.denoise(&a, &[10], &[1.6]).unwrap();
    let ob = p.denoise(&b, &[700], &[1.8]).unwrap();
    let n = WINDOW * FEATURES;
    for i in 0..n {
        assert!((out.data()[i] - oa.data()[i]).abs() < 1e-12);
        assert!((out.data()[n + i] - ob.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn perfect_prediction_of_stationary_trial_costs_nothing() {
    let seq = encoded(&toy_motion(WINDOW, false), &vec![[1.0; 4]; WINDOW]);
    let x = as_tensor(&seq);
    let l = ctx().evaluate(&x, &x, &[seq.height]).unwrap();
    assert_eq!(l, LossBreakdown::default());
}

#[test]
fn slide_matches_brute_force_world_displacement() {
    let t = tree();
    let m = toy_motion(3, true);
    let contacts = [[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 0.0]];
    let seq = encoded(&m, &contacts);
    let x = as_tensor(&seq);
    let l = ctx().evaluate(&x, &x, &[m.height]).unwrap();
    assert_eq!([l.simple, l.vel, l.fk, l.drift], [0.0; 4]);

    let subject = t.scaled(m.height, m.mass).unwrap();
    let fk: Vec<_> = m.frames.iter().map(|p| forward_kinematics(&subject, p).unwrap()).collect();
    let mut expect = 0.0;
    for i in 0..2 {
        for c in 0..4 {
            let d = fk[i + 1].contacts[c] - fk[i].contacts[c];
            expect += contacts[i][c] * d.dot(d);
        }
    }
    assert!(expect > 0.0);
    assert!((l.slide - expect).abs() < 1e-10 * expect, "{} vs {expect}", l.slide);
    assert_eq!(l.total, l.simple + l.vel + l.fk + l.drift + l.slide);
}

#[test]
fn drift_grows_with_remaining_frames() {
    let seq = encoded(&toy_motion(WINDOW, true), &vec![[0.0; 4]; WINDOW]);
    let x = as_tensor(&seq);
    let c = ctx();
    for (k, delta) in [(0usize, 0.125), (17, 0.25), (60, 0.5), (30, 0.0371)] {
        for ch in [DP, DP + 1] {
            let mut p = x.data().to_vec();
            p[k * FEATURES + ch] += delta;
            let l = c.evaluate(&Tensor::new([WINDOW, FEATURES], p).unwrap(), &x, &[seq.height]).unwrap();
            let expect = (WINDOW - k) as f64 * delta * delta;
            assert!((l.drift - expect).abs() <= 1e-12 * expect, "k {k}: {} vs {expect}", l.drift);
            assert_eq!(l.fk, 0.0);
            assert_eq!(l.vel, 0.0);
        }
    }
}

#[test]
fn loss_terms_are_non_negative_and_scaled() {
    let seq = encoded(&toy_motion(WINDOW, true), &vec![[1.0, 0.0, 0.5, 1.0]; WINDOW]);
    let x = as_tensor(&seq);
    let pred = random_input(WINDOW, 5);
    let n = Normalizer { acc_scale: 3.0, dp_scale: 0.04, py_mean: 0.9, py_scale: 0.05 };
    let c = LossContext::new(&tree(), n, LossWeights::default());
    let l = c.evaluate(&pred, &x, &[1.7]).unwrap();
    assert!(l.simple > 0.0 && l.vel > 0.0 && l.fk > 0.0 && l.drift > 0.0 && l.slide > 0.0);
    let w = LossWeights { simple: 2.0, vel: 0.0, fk: 1.0, drift: 0.5, slide: 1.0 };
    let lw = LossContext::new(&tree(), n, w).evaluate(&pred, &x, &[1.7]).unwrap();
    let expect = 2.0 * l.simple + l.fk + 0.5 * l.drift + l.slide;
    assert!((lw.total - expect).abs() < 1e-9 * expect);
    // contacts gated to zero remove the slide term
    let mut p = pred.data().to_vec();
    for f in p.chunks_mut(FEATURES) {
        f[CONTACT..].fill(0.0);
        f[PY] = 0.3;
    }
    let l0 = c.evaluate(&Tensor::new([WINDOW, FEATURES], p).unwrap(), &x, &[1.7]).unwrap();
    assert_eq!(l0.slide, 0.0);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let t = tree();
    let size = ModelSize::new(1, 8, 12).unwrap();
    let params = DenoiserParams::<f64>::init(size, 3).unwrap();
    let frames = 4;
    let seq = encoded(&toy_motion(frames, true), &vec![[1.0, 0.0, 1.0, 0.0]; frames]);
    let target = Tensor::new([2 * frames, FEATURES], [seq.data.clone(), seq.data.clone()].concat()).unwrap();
    let z = random_input(2 * frames, 9);
    let n = Normalizer { acc_scale: 2.0, dp_scale: 0.05, py_mean: 0.9, py_scale: 0.1 };
    let c = LossContext::<f64>::new(&t, n, LossWeights::default());
    let pred = params.denoise(&z, &[40, 800], &[1.6, 1.85]).unwrap();
    let loss = c.evaluate(&pred, &target, &[1.6, 1.85]).unwrap().total;
    // Central differences carry ~ε·|L|/h of round-off; gradients below this
    // floor are compared absolutely.
    let report = check_gradients(&params.tensors, 1e-5, 1e-6 * loss, |g: &mut Graph<f64>, vars| {
        let zv = g.constant(z.clone());
        let pred = forward(g, &size, vars, zv, &[40, 800], &[1.6, 1.85])?;
        Ok(c.record(g, pred, &target, &[1.6, 1.85])?.total)
    })
    .unwrap();
    assert_eq!(report.checked, params.count());
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn checkpoint_round_trip_and_hash_check() {
    let t = tree();
    let p = DenoiserParams::<f32>::init(ModelSize::new(1, 16, 32).unwrap(), 1).unwrap();
    let n = Normalizer { acc_scale: 2.0, dp_scale: 0.05, py_mean: 0.9, py_scale: 0.1 };
    let mut c = Checkpoint::new(p, DiffusionSchedule::cosine(1000).unwrap(), n, &t);
    c.trained_steps = 12;
    let bytes = c.to_bytes().unwrap();
    let back = Checkpoint::<f32>::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, c);
    back.check(&t).unwrap();
    let wide = Checkpoint::<f64>::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(wide.params.tensors[0].data()[3], c.params.tensors[0].data()[3] as f64);
    assert!(Checkpoint::<f32>::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[1] = b'?';
    assert!(matches!(Checkpoint::<f32>::read_from(&mut bad.as_slice()), Err(crate::Error::Format(_))));
    let mut other = back;
    other.skeleton_hash = "ab".repeat(32);
    assert!(matches!(other.check(&t), Err(crate::Error::HashMismatch { .. })));
}

fn tiny_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        size: ModelSize::new(1, 16, 32).unwrap(),
        steps: 6,
        batch: 2,
        seed,
        log_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_finite() {
    let t = tree();
    let corpus = vec![encoded(&toy_motion(70, true), &vec![[1.0; 4]; 70])];
    let a = train::<f64>(&corpus, &[1.0], &t, &tiny_cfg(4)).unwrap();
    let b = train::<f64>(&corpus, &[1.0], &t, &tiny_cfg(4)).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.curve.len(), 6);
    assert!(a.curve.iter().all(|l| l.is_finite()));
    let c = train::<f64>(&corpus, &[1.0], &t, &tiny_cfg(5)).unwrap();
    assert_ne!(a.curve, c.curve);
    assert!(train::<f64>(&[], &[], &t, &tiny_cfg(1)).is_err());
}

#[test]
fn divergence_aborts() {
    let t = tree();
    let corpus = vec![encoded(&toy_motion(70, true), &vec![[1.0; 4]; 70])];
    let mut cfg = tiny_cfg(1);
    cfg.adam.lr = 1e30;
    cfg.steps = 20;
    match train::<f32>(&corpus, &[1.0], &t, &cfg) {
        Err(crate::Error::NonFinite(msg)) => assert!(msg.contains("step"), "{msg}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e30 should fail"),
    }
}

