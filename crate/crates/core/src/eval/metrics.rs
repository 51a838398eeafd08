use serde::{Deserialize, Serialize};

use crate::datagen::MotionSequence;
use crate::error::{Error, Result};
use crate::kinematics::{geodesic_angle, FkResult, KinematicTree, Vec3};

pub const REPORT_VERSION: u32 = 1;

pub const LEG_JOINTS: &[&str] = &["left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle"];
pub const BACK_JOINTS: &[&str] = &["spine1", "spine2", "spine3", "neck", "left_shoulder", "right_shoulder"];

/// Seconds into the motion at which the root error is read.
pub const RE_TIMES: [f64; 3] = [2.0, 5.0, 10.0];
/// Added to both jitters so a static pair gives a ratio of 1.
pub const JITTER_EPS: f64 = 1e-9;

/// Errors of one reconstruction against its ground truth. Angles in degrees,
/// JPE in cm, root errors in meters (absent when the motion is too short).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub la: f64,
    pub legs_la: f64,
    pub back_la: f64,
    pub ga: f64,
    pub jpe: f64,
    pub jitter: f64,
    pub re2: Option<f64>,
    pub re5: Option<f64>,
    pub re10: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean third-difference magnitude of global joint positions, per second³.
pub fn jitter(fk: &[FkResult], rate: f64) -> f64 {
    if fk.len() < 4 {
        return 0.0;
    }
    let r3 = rate * rate * rate;
    mean((3..fk.len()).flat_map(|i| {
        (0..fk[i].joints.len()).map(move |j| {
            let d = fk[i].joints[j] - fk[i - 1].joints[j].scale(3.0) + fk[i - 2].joints[j].scale(3.0) - fk[i - 3].joints[j];
            d.norm() * r3
        })
    }))
}

fn indices(tree: &KinematicTree, names: &[&str]) -> Vec<usize> {
    names.iter().map(|n| tree.segment_index(n).unwrap_or_else(|| panic!("skeleton lacks joint {n}"))).collect()
}

/// Compares two aligned 20 Hz motions. LA covers every non-root joint, GA
/// every segment including the root; JPE is measured in the root frame; both
/// motions are posed on the ground-truth subject's skeleton.
pub fn compute_metrics(gt: &MotionSequence, rec: &MotionSequence, tree: &KinematicTree) -> Result<Metrics> {
    if gt.len() != rec.len() {
        return Err(Error::contract(format!("length mismatch: {} ground-truth vs {} reconstructed frames", gt.len(), rec.len())));
    }
    if gt.is_empty() {
        return Err(Error::contract("cannot evaluate empty motions"));
    }
    if gt.rate != rec.rate {
        return Err(Error::contract(format!("rate mismatch: {} vs {} Hz", gt.rate, rec.rate)));
    }
    let subject = gt.subject_tree(tree)?;
    let (fg, fr) = (gt.forward(&subject)?, rec.forward(&subject)?);
    let root = subject.root;
    let non_root: Vec<usize> = (0..subject.len()).filter(|&j| j != root).collect();
    let (legs, back) = (indices(&subject, LEG_JOINTS), indices(&subject, BACK_JOINTS));

    let la_over = |joints: &[usize]| {
        mean(gt.frames.iter().zip(&rec.frames).flat_map(|(a, b)| {
            joints.iter().map(move |&j| geodesic_angle(&a.rotations[j], &b.rotations[j]))
        }))
    };
    let ga = mean(fg.iter().zip(&fr).flat_map(|(a, b)| a.global.iter().zip(&b.global).map(|(x, y)| geodesic_angle(x, y))));
    let jpe = mean(fg.iter().zip(&fr).flat_map(|(a, b)| {
        let (ra, rb) = (a.global[root].transpose(), b.global[root].transpose());
        let (pa, pb) = (a.joints[root], b.joints[root]);
        a.joints.iter().zip(&b.joints).map(move |(&x, &y)| (ra.mul_vec(x - pa) - rb.mul_vec(y - pb)).norm() * 100.0)
    }));
    let rate = gt.rate as f64;
    let jitter = (self::jitter(&fr, rate) + JITTER_EPS) / (self::jitter(&fg, rate) + JITTER_EPS);
    let re = |secs: f64| {
        let i = (secs * rate).round() as usize;
        (i < gt.len()).then(|| {
            let (a, b): (Vec3, Vec3) = (gt.frames[i].root_position, rec.frames[i].root_position);
            (a.x() - b.x()).hypot(a.z() - b.z())
        })
    };
    Ok(Metrics {
        la: la_over(&non_root),
        legs_la: la_over(&legs),
        back_la: la_over(&back),
        ga,
        jpe,
        jitter,
        re2: re(RE_TIMES[0]),
        re5: re(RE_TIMES[1]),
        re10: re(RE_TIMES[2]),
    })
}

/// GA restricted to the given segments.
pub fn segment_ga(gt: &MotionSequence, rec: &MotionSequence, tree: &KinematicTree, segments: &[usize]) -> Result<f64> {
    if gt.len() != rec.len() {
        return Err(Error::contract("length mismatch"));
    }
    let subject = gt.subject_tree(tree)?;
    let (fg, fr) = (gt.forward(&subject)?, rec.forward(&subject)?);
    Ok(mean(fg.iter().zip(&fr).flat_map(|(a, b)| segments.iter().map(move |&s| geodesic_angle(&a.global[s], &b.global[s])))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: u64,
    pub config: String,
    pub metrics: Metrics,
}

/// Mean over trials and, per metric, the worst trial's value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub mean: Metrics,
    pub worst: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub v: u32,
    pub trials: Vec<TrialReport>,
    pub aggregate: Aggregate,
}

fn fold_opt(vals: &[Option<f64>], f: impl Fn(&[f64]) -> f64) -> Option<f64> {
    let present: Vec<f64> = vals.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| f(&present))
}

/// Aggregates in trial-id order so the result does not depend on input order.
pub fn aggregate(trials: &[TrialReport]) -> Aggregate {
    let mut sorted: Vec<&TrialReport> = trials.iter().collect();
    sorted.sort_by(|a, b| a.trial_id.cmp(&b.trial_id).then_with(|| a.config.cmp(&b.config)));
    let m: Vec<Metrics> = sorted.iter().map(|t| t.metrics).collect();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pick = |g: fn(&Metrics) -> f64, f: &dyn Fn(&[f64]) -> f64| {
        let v: Vec<f64> = m.iter().map(g).collect();
        if v.is_empty() {
            0.0
        } else {
            f(&v)
        }
    };
    let pick_opt = |g: fn(&Metrics) -> Option<f64>, f: &dyn Fn(&[f64]) -> f64| fold_opt(&m.iter().map(g).collect::<Vec<_>>(), f);
    let build = |f: &dyn Fn(&[f64]) -> f64| Metrics {
        la: pick(|x| x.la, f),
        legs_la: pick(|x| x.legs_la, f),
        back_la: pick(|x| x.back_la, f),
        ga: pick(|x| x.ga, f),
        jpe: pick(|x| x.jpe, f),
        jitter: pick(|x| x.jitter, f),
        re2: pick_opt(|x| x.re2, f),
        re5: pick_opt(|x| x.re5, f),
        re10: pick_opt(|x| x.re10, f),
    };
    Aggregate { trials: m.len(), mean: build(&avg), worst: build(&max) }
}

impl MetricsReport {
    pub fn new(trials: Vec<TrialReport>) -> Self {
        let aggregate = aggregate(&trials);
        Self { v: REPORT_VERSION, trials, aggregate }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::format(format!("metrics report: {e}")))?;
        if r.v != REPORT_VERSION {
            return Err(Error::format(format!("metrics report version {}", r.v)));
        }
        Ok(r)
    }

    /// One-line human summary of the aggregate.
    pub fn summary(&self) -> String {
        summary_line(&self.aggregate.mean, &self.aggregate.worst)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

pub fn summary_line(m: &Metrics, w: &Metrics) -> String {
    format!(
        "LA {:.2} [{:.2}]  legsLA {:.2}  backLA {:.2}  GA {:.2} [{:.2}]  JPE {:.2} cm  Jitter {:.3}  RE2 {}  RE5 {}  RE10 {} m",
        m.la,
        w.la,
        m.legs_la,
        m.back_la,
        m.ga,
        w.ga,
        m.jpe,
        m.jitter,
        opt(m.re2),
        opt(m.re5),
        opt(m.re10)
    )
}
