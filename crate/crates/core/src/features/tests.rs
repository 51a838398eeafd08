use super::*;
use proptest::prelude::*;

fn tree() -> KinematicTree {
    KinematicTree::default_tree()
}

fn motion(n: usize, f: impl Fn(usize) -> Pose) -> MotionSequence {
    MotionSequence { rate: 20, frames: (0..n).map(f).collect(), height: 1.75, mass: 75.0, trial_id: 1 }
}

fn zero_streams(n: usize) -> (Vec<Vec<Vec3>>, Vec<[f64; 4]>) {
    (vec![vec![Vec3::zero(); NUM_SITES]; n], vec![[1.0; 4]; n])
}

fn wiggle(seed: &[f64], i: usize) -> Pose {
    let t = i as f64 * 0.05;
    let rotations = (0..NUM_SEGMENTS)
        .map(|s| {
            let a = seed[s % seed.len()];
            Mat3::from_rotvec(Vec3::new(a * (t + s as f64).sin(), 0.5 * a * t.cos(), 0.3 * a))
        })
        .collect();
    let root = Vec3::new(seed[0] * t + (3.0 * t).sin(), 0.9 + 0.05 * seed[1] * t.sin(), seed[2] * t * t);
    Pose { rotations, root_position: root }
}

#[test]
fn stationary_pose_has_zero_displacement() {
    let t = tree();
    let m = motion(5, |_| Pose::identity(24, Vec3::new(0.3, 0.95, -1.0)));
    let (a, b) = zero_streams(5);
    let seq = encode(&m, &t, &a, &b).unwrap();
    assert_eq!(seq.frames(), 5);
    for i in 0..5 {
        let f = seq.frame(i);
        assert_eq!(f.len(), FEATURES);
        assert_eq!(&f[DP..DP + 2], &[0.0, 0.0]);
        assert_eq!(f[PY], 0.95);
        assert_eq!(&f[CONTACT..], &[1.0; 4]);
    }
}

#[test]
fn constant_velocity_root_gives_constant_displacement() {
    let t = tree();
    let v = [0.8, -0.4];
    let m = motion(10, |i| {
        let s = i as f64 / 20.0;
        Pose::identity(24, Vec3::new(v[0] * s, 0.95, v[1] * s))
    });
    let (a, b) = zero_streams(10);
    let seq = encode(&m, &t, &a, &b).unwrap();
    for i in 1..10 {
        assert!((seq.frame(i)[DP] - v[0] / 20.0).abs() < 1e-12);
        assert!((seq.frame(i)[DP + 1] - v[1] / 20.0).abs() < 1e-12);
    }
}

#[test]
fn misaligned_streams_are_rejected() {
    let t = tree();
    let m = motion(4, |_| Pose::identity(24, Vec3::zero()));
    let (a, b) = zero_streams(3);
    assert!(matches!(encode(&m, &t, &a, &b), Err(Error::Contract(_))));
}

#[test]
fn mask_counts() {
    let t = tree();
    let empty = build_inference_mask(&SensorConfig::empty(), &t);
    assert!(empty.last_frame().iter().all(|b| !b));
    assert_eq!(empty.count(), (WINDOW - 1) * FEATURES);

    let full = build_inference_mask(&SensorConfig::all(true), &t);
    let last = full.last_frame();
    assert_eq!(last.iter().filter(|b| **b).count(), 13 * 6 + 13 * 3 + 4);
    assert!(!last[DP] && !last[DP + 1] && !last[PY]);
    let uninstrumented = (0..NUM_SEGMENTS)
        .filter(|s| !t.sites.iter().any(|x| x.segment == *s))
        .collect::<Vec<_>>();
    assert_eq!(uninstrumented.len(), 11);
    for s in uninstrumented {
        assert!(ori_range(s).all(|c| !last[c]));
    }

    let pelvis = SensorConfig::parse("pelvis", &t).unwrap();
    let m = build_inference_mask(&pelvis, &t);
    assert_eq!(m.last_frame().iter().filter(|b| **b).count(), 9);
    assert_eq!(m, build_inference_mask(&pelvis, &t));
}

#[test]
fn config_text_round_trip() {
    let t = tree();
    let c = SensorConfig::parse("six,insoles", &t).unwrap();
    assert_eq!(c.num_sites(), 6);
    assert!(c.insoles);
    assert_eq!(SensorConfig::parse(&c.label(&t), &t).unwrap(), c);
    assert_eq!(SensorConfig::parse("none", &t).unwrap(), SensorConfig::empty());
    assert_eq!(SensorConfig::empty().label(&t), "none");
    assert_eq!(SensorConfig::parse("all", &t).unwrap().num_sites(), 13);
    assert!(SensorConfig::parse("elbow_x", &t).is_err());
}

fn window_with(t: &KinematicTree) -> FeatureWindow {
    let m = motion(WINDOW, |i| wiggle(&[0.3, -0.2, 0.5, 0.1], i));
    let (a, b) = zero_streams(WINDOW);
    encode(&m, t, &a, &b).unwrap().window(0).unwrap()
}

fn measurement(config: &SensorConfig) -> Measurement {
    Measurement {
        imus: config
            .sites()
            .map(|s| (s, Mat3::rot_x(0.1 * s as f64 + 0.2), Vec3::new(s as f64, -1.0, 0.5)))
            .collect(),
        insoles: config.insoles.then_some([0.0, 1.0, 0.0, 1.0]),
    }
}

#[test]
fn observation_full_empty_partial() {
    let t = tree();
    let w = window_with(&t);
    let prev = w.frame(WINDOW - 2).to_vec();

    let full = SensorConfig::all(true);
    let meas = measurement(&full);
    let out = apply_observation(&w, &full, &meas, &t).unwrap();
    let mut expect = prev.clone();
    meas.write(&t, &mut expect);
    let bits = observed_channels(&full, &t);
    for c in 0..FEATURES {
        if bits[c] {
            assert_eq!(out.frame(WINDOW - 1)[c], expect[c]);
        } else {
            assert_eq!(out.frame(WINDOW - 1)[c], prev[c]);
        }
    }
    for i in 0..WINDOW - 1 {
        assert_eq!(out.frame(i), w.frame(i));
    }

    let out = apply_observation(&w, &SensorConfig::empty(), &Measurement::default(), &t).unwrap();
    assert_eq!(out.frame(WINDOW - 1), &prev[..]);

    let wrists = SensorConfig::parse("wrists", &t).unwrap();
    let meas = measurement(&wrists);
    let out = apply_observation(&w, &wrists, &meas, &t).unwrap();
    let bits = observed_channels(&wrists, &t);
    assert_eq!(bits.iter().filter(|b| **b).count(), 18);
    for c in 0..FEATURES {
        let v = out.frame(WINDOW - 1)[c];
        if bits[c] {
            assert_ne!(v, prev[c]);
        } else {
            assert_eq!(v, prev[c]);
        }
    }

    let pelvis = SensorConfig::parse("pelvis", &t).unwrap();
    assert!(matches!(apply_observation(&w, &pelvis, &meas, &t), Err(Error::Contract(_))));
}

#[test]
fn window_shift_drops_oldest() {
    let t = tree();
    let mut w = window_with(&t);
    let second = w.frame(1).to_vec();
    let new = vec![7.0; FEATURES];
    w.shift_in(&new);
    assert_eq!(w.frame(0), &second[..]);
    assert_eq!(w.frame(WINDOW - 1), &new[..]);
    assert_eq!(w.x.shape(), &[WINDOW, FEATURES]);
}

#[test]
fn normalizer_round_trip() {
    let t = tree();
    let m = motion(70, |i| wiggle(&[0.3, -0.2, 0.5], i));
    let acc: Vec<Vec<Vec3>> = (0..70).map(|i| vec![Vec3::new(i as f64 * 0.1, 2.0, -1.0); NUM_SITES]).collect();
    let seq = encode(&m, &t, &acc, &vec![[0.0; 4]; 70]).unwrap();
    let n = Normalizer::fit(std::slice::from_ref(&seq)).unwrap();
    assert!(n.is_finite());
    let mut d = seq.data.clone();
    n.normalize(&mut d);
    n.denormalize(&mut d);
    for (a, b) in d.iter().zip(&seq.data) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(n.channel_scale(DP + 1), n.dp_scale);
    assert_eq!(n.channel_scale(CONTACT), 1.0);
}

#[test]
fn layout_hash_is_stable() {
    assert_eq!(layout_hash(), layout_hash());
    assert_eq!(layout_hash().len(), 64);
}

proptest! {
    #[test]
    fn decode_inverts_encode(seed in proptest::collection::vec(-1.0f64..1.0, 5), n in 2usize..40) {
        let t = tree();
        let m = motion(n, |i| wiggle(&seed, i));
        let (a, b) = zero_streams(n);
        let seq = encode(&m, &t, &a, &b).unwrap();
        let r0 = m.frames[0].root_position;
        let back = decode(&seq, &t, [r0.x(), r0.z()]).unwrap();
        for (p, q) in back.frames.iter().zip(&m.frames) {
            prop_assert!((p.root_position - q.root_position).norm() < 1e-9);
            for (x, y) in p.rotations.iter().zip(&q.rotations) {
                prop_assert!(x.max_abs_diff(y) < 1e-10);
            }
        }
        // starting elsewhere shifts the path rigidly
        let moved = decode(&seq, &t, [0.0, 0.0]).unwrap();
        for (p, q) in moved.frames.iter().zip(&m.frames) {
            let d = q.root_position - p.root_position;
            prop_assert!((d.x() - r0.x()).abs() < 1e-9 && (d.z() - r0.z()).abs() < 1e-9 && d.y().abs() < 1e-12);
        }
    }
}
