use proptest::prelude::*;

use super::*;
use crate::datagen::{generate_motion, generate_trial, CorpusConfig, MotionKind, MotionParams, MotionSequence, Trial};
use crate::diffusion::{Checkpoint, DenoiserParams, DiffusionSchedule, ModelSize};
use crate::features::{Normalizer, SensorConfig};
use crate::inference::{SessionConfig, StepSpread};
use crate::kinematics::{KinematicTree, Mat3, Vec3};

fn tree() -> KinematicTree {
    KinematicTree::default_tree()
}

fn trial(seconds: f64, index: usize) -> Trial {
    let cfg = CorpusConfig { trials: 1, seconds, ..CorpusConfig::default() };
    generate_trial(&cfg, index, &tree()).unwrap().0
}

/// Full-precision 20 Hz motion (dataset trials are stored in f32).
fn motion64(seconds: f64, seed: u64) -> MotionSequence {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let params = MotionParams::random(MotionKind::ALL[seed as usize % 4], seconds, &mut rng);
    let m = generate_motion(&params, &tree(), seed).unwrap().motion;
    let last = m.len() - 1;
    m.decimate(0, last - last % 3)
}

fn map_frames(m: &MotionSequence, f: impl Fn(usize, &mut crate::kinematics::Pose)) -> MotionSequence {
    let mut out = m.clone();
    for (i, p) in out.frames.iter_mut().enumerate() {
        f(i, p);
    }
    out
}

#[test]
fn identical_motions_score_zero() {
    let t = tree();
    let gt = trial(11.0, 0).motion;
    let m = compute_metrics(&gt, &gt, &t).unwrap();
    assert_eq!((m.la, m.legs_la, m.back_la, m.ga, m.jpe), (0.0, 0.0, 0.0, 0.0, 0.0));
    assert_eq!(m.jitter, 1.0);
    assert_eq!((m.re2, m.re5, m.re10), (Some(0.0), Some(0.0), Some(0.0)));
}

#[test]
fn fixed_global_rotation_gives_its_angle() {
    let t = tree();
    let gt = motion64(3.0, 1);
    let q = Mat3::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 10f64.to_radians());
    let rec = map_frames(&gt, |_, p| p.rotations[t.root] = q * p.rotations[t.root]);
    let m = compute_metrics(&gt, &rec, &t).unwrap();
    assert!((m.ga - 10.0).abs() < 1e-9, "{}", m.ga);
    assert!(m.la.abs() < 1e-12);
}

#[test]
fn rigid_root_offset_is_the_root_error() {
    let t = tree();
    let gt = trial(11.0, 2).motion;
    assert!(gt.len() >= 201);
    let rec = map_frames(&gt, |_, p| p.root_position = p.root_position + Vec3::new(0.18, 0.0, 0.24));
    let m = compute_metrics(&gt, &rec, &t).unwrap();
    for re in [m.re2, m.re5, m.re10] {
        assert!((re.unwrap() - 0.3).abs() < 1e-12);
    }
    assert!(m.jpe.abs() < 1e-9 && m.ga == 0.0);
}

#[test]
fn short_motion_has_no_late_root_errors() {
    let t = tree();
    let gt = trial(6.0, 3).motion;
    let m = compute_metrics(&gt, &gt, &t).unwrap();
    assert!(m.re2.is_some() && m.re5.is_some() && m.re10.is_none());
    let mut short = gt.clone();
    short.frames.pop();
    assert!(compute_metrics(&gt, &short, &t).is_err());
}

fn perturbed(gt: &MotionSequence) -> MotionSequence {
    map_frames(gt, |i, p| {
        for (j, r) in p.rotations.iter_mut().enumerate() {
            *r = *r * Mat3::rot_x(0.05 * ((i + j) as f64 * 0.7).sin());
        }
        p.root_position = p.root_position + Vec3::new(0.01 * i as f64, 0.0, 0.0);
    })
}

#[test]
fn doubling_both_sequences_keeps_means() {
    let t = tree();
    let gt = trial(4.0, 4).motion;
    let rec = perturbed(&gt);
    let twice = |m: &MotionSequence| {
        let mut d = m.clone();
        d.frames.extend(m.frames.iter().cloned());
        d
    };
    let (a, b) = (compute_metrics(&gt, &rec, &t).unwrap(), compute_metrics(&twice(&gt), &twice(&rec), &t).unwrap());
    for (x, y) in [(a.la, b.la), (a.ga, b.ga), (a.jpe, b.jpe), (a.legs_la, b.legs_la), (a.back_la, b.back_la)] {
        assert!((x - y).abs() < 1e-9 * x.max(1.0), "{x} vs {y}");
    }
    assert_eq!(a.re2, b.re2);
    // Jitter is not compared: the seam between the copies is a jump.
}

#[test]
fn angles_ignore_a_shared_rigid_rotation() {
    let t = tree();
    let gt = trial(3.0, 5).motion;
    let rec = perturbed(&gt);
    let q = Mat3::from_rotvec(Vec3::new(0.3, -1.1, 0.4));
    let rot = |m: &MotionSequence| {
        map_frames(m, |_, p| {
            p.rotations[t.root] = q * p.rotations[t.root];
            p.root_position = q.mul_vec(p.root_position);
        })
    };
    let (a, b) = (compute_metrics(&gt, &rec, &t).unwrap(), compute_metrics(&rot(&gt), &rot(&rec), &t).unwrap());
    assert!((a.ga - b.ga).abs() < 1e-9 && (a.la - b.la).abs() < 1e-9);
    assert!((a.jpe - b.jpe).abs() < 1e-9);
}

fn metrics_strategy() -> impl Strategy<Value = Metrics> {
    let f = || prop_oneof![0.0f64..1e3, any::<f64>().prop_filter("finite", |v| v.is_finite())];
    (f(), f(), f(), f(), f(), f(), proptest::option::of(f()), proptest::option::of(f()), proptest::option::of(f())).prop_map(
        |(la, legs_la, back_la, ga, jpe, jitter, re2, re5, re10)| Metrics { la, legs_la, back_la, ga, jpe, jitter, re2, re5, re10 },
    )
}

proptest! {
    #[test]
    fn report_json_round_trips(ms in proptest::collection::vec(metrics_strategy(), 1..5)) {
        let trials: Vec<TrialReport> = ms.iter().enumerate()
            .map(|(i, m)| TrialReport { trial_id: i as u64, config: "six".into(), metrics: *m })
            .collect();
        let r = MetricsReport::new(trials);
        prop_assert_eq!(MetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn aggregation_ignores_trial_order(ms in proptest::collection::vec(metrics_strategy(), 1..8), rot in 0usize..8) {
        let trials: Vec<TrialReport> = ms.iter().enumerate()
            .map(|(i, m)| TrialReport { trial_id: (i * 7 % 11) as u64, config: "x".into(), metrics: *m })
            .collect();
        let mut shuffled = trials.clone();
        shuffled.reverse();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        prop_assert_eq!(aggregate(&trials), aggregate(&shuffled));
    }
}

#[test]
fn aggregate_mean_and_worst() {
    let m = |ga, re10| Metrics { ga, re10, ..Metrics::default() };
    let trials = vec![
        TrialReport { trial_id: 2, config: "a".into(), metrics: m(4.0, None) },
        TrialReport { trial_id: 1, config: "a".into(), metrics: m(2.0, Some(0.5)) },
    ];
    let a = aggregate(&trials);
    assert_eq!((a.mean.ga, a.worst.ga, a.mean.re10, a.worst.re10), (3.0, 4.0, Some(0.5), Some(0.5)));
}

fn entry(config: &str, sensors: usize, ga: f64) -> SweepEntry {
    let metrics = Metrics { ga, ..Metrics::default() };
    SweepEntry {
        config: config.into(),
        sensors,
        report: MetricsReport::new(vec![TrialReport { trial_id: 0, config: config.into(), metrics }]),
    }
}

#[test]
fn ranking_breaks_ties_by_sensors_then_label() {
    let entries = vec![entry("b", 3, 5.0), entry("a", 3, 5.0), entry("c", 2, 5.0), entry("d", 9, 1.0)];
    assert_eq!(rank(&entries, Objective::Ga), vec![3, 2, 1, 0]);
    // Missing root errors rank last.
    assert_eq!(Objective::Re10.value(&Metrics::default()), f64::INFINITY);
    assert_eq!("legsLA".parse::<Objective>().unwrap(), Objective::LegsLa);
    assert!("speed".parse::<Objective>().is_err());
}

#[test]
fn nearest_rank_percentiles() {
    let v: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(percentile(&v, 50.0), 10.0);
    assert_eq!(percentile(&v, 95.0), 19.0);
    assert_eq!(percentile(&v, 100.0), 20.0);
    assert_eq!(percentile(&[3.0], 95.0), 3.0);
}

fn tiny_checkpoint() -> Checkpoint<f32> {
    let params = DenoiserParams::init(ModelSize::new(1, 16, 32).unwrap(), 3).unwrap();
    Checkpoint::new(params, DiffusionSchedule::cosine(100).unwrap(), Normalizer::default(), &tree())
}

#[test]
fn sweep_is_deterministic_and_single_config_ranks_first() {
    let t = tree();
    let ckpt = tiny_checkpoint();
    let trials = vec![trial(2.0, 6)];
    let mut base = SessionConfig::new(SensorConfig::empty(), 1.7, 100).unwrap();
    base.spread = StepSpread::new(vec![50, 5, 0]).unwrap();
    let six = SensorConfig::parse("six", &t).unwrap();
    let one = sweep_configs(&ckpt, &t, &trials, &[six], &[Objective::Ga], &base).unwrap();
    assert_eq!(one.rankings[0].order, vec![0]);
    let two = sweep_configs(&ckpt, &t, &trials, &[six, six], &Objective::DEFAULT, &base).unwrap();
    assert_eq!(two.entries[0].report, two.entries[1].report);
    assert_eq!(SweepResult::from_json(&two.to_json().unwrap()).unwrap(), two);
    assert!(two.table().contains("| six |") || two.table().contains(&six.label(&t)));
}

#[test]
fn bench_reports_percentiles() {
    let t = tree();
    let ckpt = tiny_checkpoint();
    let mut s = SessionConfig::new(SensorConfig::empty(), 1.7, 100).unwrap();
    s.spread = StepSpread::new(vec![10, 0]).unwrap();
    let r = bench(&ckpt, &t, &s, &[crate::features::Measurement::default()], 12).unwrap();
    assert_eq!((r.frames, r.spread_len), (12, 2));
    assert!(r.p50_ms <= r.p95_ms && r.p95_ms <= r.max_ms && r.p50_ms > 0.0);
}

#[test]
fn records_rebuild_the_motion() {
    let t = tree();
    let gt = motion64(2.0, 7);
    let fk = gt.forward(&gt.subject_tree(&t).unwrap()).unwrap();
    let recs: Vec<crate::inference::OutputRecord> = gt
        .frames
        .iter()
        .zip(&fk)
        .enumerate()
        .map(|(i, (p, f))| crate::inference::OutputRecord {
            v: 1,
            t_ms: i as f64 * 50.0,
            frame: i as u64,
            root: p.root_position.0,
            quats: f.global.iter().map(|g| g.to_quaternion()).collect(),
            contacts: [0.0; 4],
            latency_ms: 0.0,
        })
        .collect();
    let back = motion_from_records(&recs, &t, gt.height, gt.mass, 0).unwrap();
    let m = compute_metrics(&gt, &back, &t).unwrap();
    assert!(m.ga < 1e-9 && m.la < 1e-9 && m.jpe < 1e-9, "{m:?}");
}
