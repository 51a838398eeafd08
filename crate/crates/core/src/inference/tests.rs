use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{generate_motion, generate_trial, synthesize_imu, CorpusConfig, MotionKind, MotionParams};
use crate::diffusion::{Checkpoint, DenoiserParams, DiffusionSchedule, ModelSize};
use crate::features::{
    build_inference_mask, ori_range, FeatureMask, Measurement, Normalizer, SensorConfig, CONTACT, DP, FEATURES,
    WINDOW,
};
use crate::kinematics::{KinematicTree, Mat3, Rotation6D, Vec3, NUM_SITES};
use crate::numerics::Tensor;

fn tree() -> KinematicTree {
    KinematicTree::default_tree()
}

const TINY: ModelSize = ModelSize { layers: 1, width: 16, ff: 32 };

fn random_window(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new([WINDOW, FEATURES], (0..WINDOW * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn checkpoint(seed: u64) -> Checkpoint<f64> {
    let params = DenoiserParams::init(TINY, seed).unwrap();
    Checkpoint::new(params, DiffusionSchedule::cosine(100).unwrap(), Normalizer::default(), &tree())
}

#[test]
fn ten_step_default_is_10d() {
    let s = StepSpread::with_count(10, 1000).unwrap();
    assert_eq!(s.steps(), &[1000, 850, 700, 550, 400, 250, 100, 10, 2, 0]);
    assert_eq!(StepSpread::parse("10D", 1000).unwrap(), s);
    assert_eq!(StepSpread::parse("1000/850/700/550/400/250/100/10/2/0", 1000).unwrap(), s);
    assert_eq!(s.to_string(), "1000/850/700/550/400/250/100/10/2/0");
    assert_eq!(StepSpread::parse("10a", 1000).unwrap().steps(), &[9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
    assert_eq!(StepSpread::with_count(30, 1000).unwrap().len(), 30);
    assert_eq!(StepSpread::parse("1", 1000).unwrap().steps(), &[0]);
}

#[test]
fn invalid_spreads_are_rejected() {
    assert!(StepSpread::new(vec![5, 5, 0]).is_err());
    assert!(StepSpread::new(vec![5, 3]).is_err());
    assert!(StepSpread::new(vec![]).is_err());
    assert!(StepSpread::parse("2000/0", 1000).is_err());
    assert!(StepSpread::parse("fast", 1000).is_err());
    assert!(StepSpread::with_count(12, 10).is_err());
}

#[test]
fn all_ones_mask_freezes_everything() {
    let ckpt = checkpoint(4);
    let x = random_window(1);
    let spread = StepSpread::parse("1000/500/0", 1000).unwrap();
    let sched = DiffusionSchedule::cosine(1000).unwrap();
    for kind in [SamplerKind::Renoise, SamplerKind::Ddim] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = inpaint_denoise(&ckpt.params, &sched, &x, &FeatureMask::ones(), 1.7, &spread, kind, &mut rng).unwrap();
        assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn single_step_unmasked_is_deterministic() {
    let ckpt = checkpoint(5);
    let x = random_window(2);
    let spread = StepSpread::new(vec![0]).unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        inpaint_denoise(&ckpt.params, &ckpt.schedule, &x, &FeatureMask::zeros(), 1.7, &spread, SamplerKind::Renoise, &mut rng)
            .unwrap()
    };
    let (a, b) = (run(3), run(3));
    assert_eq!(a.shape(), &[WINDOW, FEATURES]);
    assert_eq!(a, b);
    // At t = 0 renoising is the identity, so this is one plain prediction.
    assert_eq!(a, ckpt.params.denoise(&x, &[0], &[1.7]).unwrap());
}

#[test]
fn non_finite_input_aborts_with_step() {
    let ckpt = checkpoint(6);
    let mut x = random_window(3);
    x.data_mut()[7] = f64::NAN;
    let spread = StepSpread::new(vec![50, 0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = inpaint_denoise(&ckpt.params, &ckpt.schedule, &x, &FeatureMask::zeros(), 1.7, &spread, SamplerKind::Renoise, &mut rng)
        .unwrap_err();
    assert!(e.to_string().contains("step 50"), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn observed_channels_survive_sampling(seed in any::<u64>(), density in 0.0f64..1.0, ddim in any::<bool>()) {
        let ckpt = checkpoint(seed);
        let x = random_window(seed ^ 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = FeatureMask { bits: (0..WINDOW * FEATURES).map(|_| rng.random_bool(density)).collect() };
        let spread = StepSpread::new(vec![90, 40, 3, 0]).unwrap();
        let kind = if ddim { SamplerKind::Ddim } else { SamplerKind::Renoise };
        let y = inpaint_denoise(&ckpt.params, &ckpt.schedule, &x, &mask, 1.6, &spread, kind, &mut rng).unwrap();
        for ((a, b), m) in x.data().iter().zip(y.data()).zip(&mask.bits) {
            if *m {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn counted_spreads_are_valid(n in 1usize..120, t_max in 2usize..1500) {
        match StepSpread::with_count(n, t_max) {
            Ok(s) => {
                prop_assert_eq!(s.len(), n);
                prop_assert!(s.steps()[0] <= t_max);
                prop_assert_eq!(*s.steps().last().unwrap(), 0);
            }
            Err(_) => prop_assert!(n > t_max + 1),
        }
    }
}

fn neutral_pair() -> (Vec<f64>, Vec<f64>) {
    let f = neutral_frame(&tree());
    (f.clone(), f)
}

#[test]
fn root_correction_without_contacts_is_identity() {
    let (prev, mut cur) = neutral_pair();
    cur[CONTACT..FEATURES].fill(0.2);
    cur[DP] = 0.3;
    cur[DP + 1] = -0.1;
    assert_eq!(root_correct(&prev, &cur, &tree()).unwrap(), [0.3, -0.1]);
}

#[test]
fn single_contact_ends_static() {
    let t = tree();
    let (prev, mut cur) = neutral_pair();
    cur[CONTACT..FEATURES].copy_from_slice(&[0.9, 0.0, 0.0, 0.0]);
    cur[DP] = 0.05;
    cur[DP + 1] = 0.02;
    let d = contact_displacements(&prev, &cur, &t).unwrap();
    assert_eq!(d[0], [0.05, 0.02]);
    let dp = root_correct(&prev, &cur, &t).unwrap();
    assert_eq!([cur[DP] - dp[0], cur[DP + 1] - dp[1]], [0.05, 0.02]);
    cur[DP] = dp[0];
    cur[DP + 1] = dp[1];
    assert_eq!(contact_displacements(&prev, &cur, &t).unwrap()[0], [0.0, 0.0]);
}

#[test]
fn two_contacts_have_zero_mean_residual() {
    let t = tree();
    let (prev, mut cur) = neutral_pair();
    // Heel and toe of one foot; turning the foot moves them differently.
    let foot = t.contacts[0].segment;
    cur[ori_range(foot)].copy_from_slice(&Rotation6D::encode(&Mat3::rot_y(0.3)).0);
    cur[CONTACT..FEATURES].copy_from_slice(&[1.0, 1.0, 0.0, 0.0]);
    cur[DP] = 0.04;
    let dp = root_correct(&prev, &cur, &t).unwrap();
    cur[DP] = dp[0];
    cur[DP + 1] = dp[1];
    let d = contact_displacements(&prev, &cur, &t).unwrap();
    let mean = [(d[0][0] + d[1][0]) / 2.0, (d[0][1] + d[1][1]) / 2.0];
    assert!(mean[0].abs() < 1e-12 && mean[1].abs() < 1e-12, "{mean:?}");
    assert!(d[0][0].hypot(d[0][1]) > 1e-4 && d[1][0].hypot(d[1][1]) > 1e-4, "{d:?}");
}

fn raw(t_ms: f64, acc: Vec3, sites: &[usize]) -> RawFrame {
    RawFrame { t_ms, imus: sites.iter().map(|&s| (s, Mat3::rot_x(0.2), acc)).collect(), insoles: None }
}

#[test]
fn box_filter_impulse_response() {
    let mut taps = vec![Some(Vec3::zero()); 21];
    taps[10] = Some(Vec3::new(11.0, 0.0, 0.0));
    let out: Vec<f64> = (0..11).map(|i| box_mean(&taps[i..i + 11]).unwrap().x()).collect();
    assert_eq!(out, vec![1.0; 11]);
    assert_eq!(box_mean(&taps[..5]).unwrap().x(), 0.0);
}

#[test]
fn constant_stream_is_unchanged() {
    let config = SensorConfig::from_indices([0, 3], false);
    let mut ingest = StreamIngest::new(config);
    let a = Vec3::new(0.5, -2.0, 1.25);
    let out: Vec<TimedMeasurement> = (0..60).filter_map(|k| ingest.push(raw(k as f64 * 1000.0 / 60.0, a, &[0, 3]))).collect();
    assert!(!out.is_empty());
    for m in &out {
        assert_eq!(m.measurement.imus.len(), 2);
        for (_, r, acc) in &m.measurement.imus {
            assert_eq!(*acc, a);
            assert_eq!(*r, Mat3::rot_x(0.2));
        }
    }
    // Instants k = 6, 9, … ≤ 54 are complete once frame k + 5 has arrived.
    assert_eq!(out.len(), 17);
    assert_eq!(out[0].t_ms, 100.0);
}

#[test]
fn two_second_dropout_masks_forty_frames() {
    let all = SensorConfig::all(false);
    let mut ingest = StreamIngest::new(all);
    let t = tree();
    let head = t.site_index("head").unwrap();
    let sites: Vec<usize> = (0..NUM_SITES).collect();
    let without: Vec<usize> = (0..NUM_SITES).filter(|&s| s != head).collect();
    let mut masks = Vec::new();
    for k in 0..600usize {
        let present = if (200..320).contains(&k) { &without } else { &sites };
        if let Some(m) = ingest.push(raw(k as f64 * 1000.0 / 60.0, Vec3::zero(), present)) {
            let mask = build_inference_mask(&m.measurement.config(), &t);
            masks.push(ori_range(t.sites[head].segment).all(|c| mask.last_frame()[c]));
        }
    }
    assert_eq!(masks.iter().filter(|m| !**m).count(), 40);
    let first = masks.iter().position(|m| !m).unwrap();
    assert!(masks[first..first + 40].iter().all(|m| !m));
    assert!(masks[first + 40..].iter().all(|m| *m));
}

#[test]
fn out_of_order_frames_are_dropped() {
    let mut ingest = StreamIngest::new(SensorConfig::from_indices([0], false));
    ingest.push(raw(10.0, Vec3::zero(), &[0]));
    ingest.push(raw(20.0, Vec3::zero(), &[0]));
    assert!(ingest.push(raw(15.0, Vec3::zero(), &[0])).is_none());
    assert!(ingest.push(raw(20.0, Vec3::zero(), &[0])).is_none());
    assert_eq!(ingest.dropped, 2);
}

#[test]
fn ingest_matches_training_synthesis() {
    let t = tree();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = MotionParams::random(MotionKind::ALL[0], 3.0, &mut rng);
    let motion = generate_motion(&params, &t, 2).unwrap().motion;
    let synth = synthesize_imu(&motion, &t).unwrap();
    let mut ingest = StreamIngest::new(SensorConfig::all(false));
    let out: Vec<TimedMeasurement> =
        simulate_stream(&motion, &t, None).unwrap().into_iter().filter_map(|f| ingest.push(f)).collect();
    // The stream's last frame has no second difference; synthesis stops one instant earlier.
    assert_eq!(out.len(), synth.instants.len() + 1);
    for (j, m) in out.iter().take(synth.instants.len()).enumerate() {
        assert_eq!(m.t_ms, synth.instants[j] as f64 * 1000.0 / 60.0);
        for (s, r, a) in &m.measurement.imus {
            assert!(r.max_abs_diff(&synth.orientations[j][*s]) < 1e-12);
            assert!((*a - synth.accelerations[j][*s]).norm() < 1e-9);
        }
    }
}

#[test]
fn stream_records_round_trip() {
    let t = tree();
    let f = RawFrame {
        t_ms: 16.5,
        imus: vec![(2, Mat3::rot_z(0.4), Vec3::new(1.0, 2.0, 3.0))],
        insoles: Some([1.0, 0.0, 1.0, 0.0]),
    };
    let rec = f.to_record(&t);
    let mut buf = Vec::new();
    write_records(&mut buf, &[rec.clone()]).unwrap();
    let back = read_input_records(buf.as_slice()).unwrap();
    assert_eq!(back, vec![rec]);
    let g = RawFrame::from_record(&back[0], &t).unwrap();
    assert!(g.imus[0].1.max_abs_diff(&f.imus[0].1) < 1e-15);
    assert!(read_input_records(&b"{\"v\":1}\nnot json\n"[..]).is_err());
}

fn short_trial() -> crate::datagen::Trial {
    let cfg = CorpusConfig { trials: 1, seconds: 4.0, ..CorpusConfig::default() };
    generate_trial(&cfg, 0, &tree()).unwrap().0
}

fn session(config: SensorConfig, height: f64) -> SessionConfig {
    let mut s = SessionConfig::new(config, height, 100).unwrap();
    s.spread = StepSpread::new(vec![60, 20, 5, 0]).unwrap();
    s
}

#[test]
fn full_observation_passes_orientations_through() {
    let t = tree();
    let trial = short_trial();
    let ckpt = checkpoint(7);
    let config = SensorConfig::all(true);
    let out = reconstruct_trial(&ckpt, &t, &trial, &session(config, trial.motion.height)).unwrap();
    assert_eq!(out.len(), trial.len());
    for (i, f) in out.iter().enumerate() {
        assert!(f.pose.is_finite());
        for s in 0..NUM_SITES {
            let seg = t.sites[s].segment;
            let enc = Rotation6D::encode(&trial.orientations[i][s]).0;
            assert_eq!(&f.features[ori_range(seg)], &enc[..]);
        }
        assert_eq!(f.contacts(), trial.contacts[i]);
    }
}

#[test]
fn reconstruction_is_deterministic_and_history_is_frozen() {
    let t = tree();
    let trial = short_trial();
    let ckpt = checkpoint(8);
    let s = session(SensorConfig::parse("six", &t).unwrap(), trial.motion.height);
    let a = reconstruct_trial(&ckpt, &t, &trial, &s).unwrap();
    let b = reconstruct_trial(&ckpt, &t, &trial, &s).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.features == y.features && x.pose == y.pose));

    let mut r = Reconstructor::new(ckpt, &t, s).unwrap();
    let ms = trial_measurements(&trial, &r.session().sensors);
    let mut emitted: Vec<Vec<f64>> = Vec::new();
    for (i, m) in ms.iter().enumerate().take(70) {
        emitted.push(r.step(m, i as f64 * 50.0).unwrap().features);
        let w = r.window().unwrap();
        for back in 0..WINDOW.min(emitted.len()) {
            assert_eq!(w.frame(WINDOW - 1 - back), &emitted[emitted.len() - 1 - back][..]);
        }
    }
}

#[test]
fn total_signal_loss_still_emits_frames() {
    let t = tree();
    let ckpt = checkpoint(9);
    let mut r = Reconstructor::new(ckpt, &t, session(SensorConfig::empty(), 1.75)).unwrap();
    for i in 0..20 {
        let f = r.step(&Measurement::default(), i as f64 * 50.0).unwrap();
        assert!(f.pose.is_finite() && f.features.iter().all(|v| v.is_finite()));
        assert_eq!(f.to_record().quats.len(), 24);
    }
}

#[test]
fn cold_start_window_shape() {
    let t = tree();
    let mut r = Reconstructor::new(checkpoint(1), &t, session(SensorConfig::all(false), 1.8)).unwrap();
    let m = Measurement { imus: vec![(0, Mat3::rot_y(0.5), Vec3::new(0.0, 1.0, 0.0))], insoles: None };
    let w = r.cold_start(&m).unwrap();
    assert_eq!(w.x.shape(), &[WINDOW, FEATURES]);
    assert_eq!(w.frame(0), &neutral_frame(r.tree())[..]);
    assert_eq!(&w.frame(WINDOW - 1)[ori_range(t.sites[0].segment)], &Rotation6D::encode(&Mat3::rot_y(0.5)).0[..]);
    let foreign = Measurement { imus: vec![], insoles: Some([1.0; 4]) };
    assert!(r.step(&foreign, 0.0).is_err());
}
