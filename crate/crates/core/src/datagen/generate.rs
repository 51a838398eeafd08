use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MotionSequence;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, KinematicTree, Mat3, Pose, Vec3, NUM_CONTACTS};

pub const GEN_RATE: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Gait,
    RandomSmooth,
    Stationary,
    Jump,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] =
        [MotionKind::Gait, MotionKind::RandomSmooth, MotionKind::Stationary, MotionKind::Jump];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Gait => "gait",
            MotionKind::RandomSmooth => "random_smooth",
            MotionKind::Stationary => "stationary",
            MotionKind::Jump => "jump",
        }
    }
}

impl std::str::FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown motion kind {s:?}")))
    }
}

/// Generator inputs. Ranges: `seconds` ≥ 0.25, `height` 1.0–2.3 m,
/// `mass` 20–200 kg, `speed` 0–3 m/s (gait only).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub kind: MotionKind,
    pub seconds: f64,
    pub height: f64,
    pub mass: f64,
    pub speed: f64,
    /// Walking direction, radians about +y from +z.
    pub heading: f64,
}

impl MotionParams {
    pub fn new(kind: MotionKind, seconds: f64) -> Self {
        Self { kind, seconds, height: 1.75, mass: 75.0, speed: 1.2, heading: 0.0 }
    }

    /// Subject and speed drawn from plausible ranges.
    pub fn random(kind: MotionKind, seconds: f64, rng: &mut impl Rng) -> Self {
        let height: f64 = rng.random_range(1.55..1.95);
        Self {
            kind,
            seconds,
            height,
            mass: 23.0 * height * height * rng.random_range(0.85..1.2),
            speed: rng.random_range(0.4..2.6),
            heading: rng.random_range(0.0..TAU),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.seconds.is_finite()
            && self.seconds >= 0.25
            && (1.0..=2.3).contains(&self.height)
            && (20.0..=200.0).contains(&self.mass)
            && (0.0..=3.0).contains(&self.speed)
            && self.heading.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("motion parameters out of range: {self:?}")))
        }
    }
}

/// A 60 Hz motion plus the generator's own per-frame stance flags for the
/// contact points (true where the point is held static by construction).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedMotion {
    pub motion: MotionSequence,
    pub stance: Vec<[bool; NUM_CONTACTS]>,
}

pub fn generate_motion(params: &MotionParams, tree: &KinematicTree, seed: u64) -> Result<GeneratedMotion> {
    params.validate()?;
    let subject = tree.scaled(params.height, params.mass)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (params.seconds * GEN_RATE as f64).round() as usize;
    let rig = Rig::new(&subject)?;
    let (frames, stance) = match params.kind {
        MotionKind::Stationary => stationary(&rig, params, &mut rng, n)?,
        MotionKind::Gait => gait(&rig, params, &mut rng, n)?,
        MotionKind::RandomSmooth => random_smooth(&rig, params, &mut rng, n)?,
        MotionKind::Jump => jump(&rig, params, &mut rng, n)?,
    };
    Ok(GeneratedMotion {
        motion: MotionSequence { rate: GEN_RATE, frames, height: params.height, mass: params.mass, trial_id: seed },
        stance,
    })
}

/// Segment indices and leg geometry used by the generators.
struct Rig<'a> {
    tree: &'a KinematicTree,
    hip: [usize; 2],
    knee: [usize; 2],
    ankle: [usize; 2],
    toe: [usize; 2],
    spine: [usize; 3],
    neck: usize,
    head: usize,
    shoulder: [usize; 2],
    elbow: [usize; 2],
    thigh: f64,
    shank: f64,
    /// Ankle joint height with the foot flat on the ground.
    ankle_height: f64,
    standing: f64,
}

impl<'a> Rig<'a> {
    fn new(tree: &'a KinematicTree) -> Result<Self> {
        let idx = |n: &str| {
            tree.segment_index(n).ok_or_else(|| Error::contract(format!("generators need segment {n:?}")))
        };
        let pair = |a: &str, b: &str| -> Result<[usize; 2]> { Ok([idx(a)?, idx(b)?]) };
        let knee = pair("left_knee", "right_knee")?;
        let ankle = pair("left_ankle", "right_ankle")?;
        let seg = |i: usize| &tree.segments[i];
        for &s in knee.iter().chain(&ankle) {
            let o = seg(s).offset;
            if o.x() != 0.0 || o.z() != 0.0 || o.y() >= 0.0 {
                return Err(Error::contract("generators need legs pointing straight down at rest"));
            }
        }
        let ankle_height = tree
            .contacts
            .iter()
            .filter(|c| ankle.contains(&c.segment) || ankle.contains(&tree.segments[c.segment].parent.unwrap_or(0)))
            .map(|c| {
                let via = if ankle.contains(&c.segment) { Vec3::zero() } else { tree.segments[c.segment].offset };
                -(via + c.offset).y()
            })
            .fold(0.0, f64::max);
        Ok(Self {
            tree,
            hip: pair("left_hip", "right_hip")?,
            knee,
            ankle,
            toe: pair("left_foot", "right_foot")?,
            spine: [idx("spine1")?, idx("spine2")?, idx("spine3")?],
            neck: idx("neck")?,
            head: idx("head")?,
            shoulder: pair("left_shoulder", "right_shoulder")?,
            elbow: pair("left_elbow", "right_elbow")?,
            thigh: -seg(knee[0]).offset.y(),
            shank: -seg(ankle[0]).offset.y(),
            ankle_height,
            standing: tree.standing_root_height(),
        })
    }

    fn leg(&self) -> f64 {
        self.thigh + self.shank
    }

    /// Arms hanging at the sides with a slight elbow bend.
    fn relaxed(&self, rot: &mut [Mat3], arm_swing: [f64; 2]) {
        for side in 0..2 {
            let sign = if side == 0 { -1.0 } else { 1.0 };
            rot[self.shoulder[side]] = Mat3::rot_z(sign * 1.3) * Mat3::rot_y(-sign * arm_swing[side]);
            rot[self.elbow[side]] = Mat3::rot_y(sign * 0.25);
        }
    }

    /// Hip, knee and ankle rotations placing the ankle joint at `target`
    /// with the foot flat and facing `yaw`.
    fn leg_ik(&self, rot: &mut [Mat3], side: usize, pelvis: &Mat3, root: Vec3, target: Vec3, yaw: &Mat3) {
        let hip = root + pelvis.mul_vec(self.tree.segments[self.hip[side]].offset);
        let d = yaw.transpose().mul_vec(target - hip);
        let (l1, l2) = (self.thigh, self.shank);
        let reach = (l1 + l2) * (1.0 - 1e-9);
        let dist = d.norm().clamp((l1 - l2).abs() + 1e-9, reach);
        let abduct = d.x().atan2(-d.y());
        let plane = Mat3::rot_z(abduct).transpose().mul_vec(d);
        let psi = (-plane.z()).atan2(-plane.y());
        let cos_hip = ((l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist)).clamp(-1.0, 1.0);
        let cos_knee = ((l1 * l1 + l2 * l2 - dist * dist) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let alpha = cos_hip.acos();
        let flex = PI - cos_knee.acos();
        let thigh = *yaw * Mat3::rot_z(abduct) * Mat3::rot_x(psi - alpha);
        let shank = thigh * Mat3::rot_x(flex);
        rot[self.hip[side]] = pelvis.transpose() * thigh;
        rot[self.knee[side]] = Mat3::rot_x(flex);
        rot[self.ankle[side]] = shank.transpose() * *yaw;
    }

    /// Lifts the root so the lowest contact point touches the ground.
    fn ground(&self, pose: &mut Pose) -> Result<()> {
        let fk = forward_kinematics(self.tree, pose)?;
        let low = fk.contacts.iter().map(|c| c.y()).fold(f64::INFINITY, f64::min);
        pose.root_position.0[1] -= low;
        Ok(())
    }
}

struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

fn waves(rng: &mut impl Rng, amp: f64, lo: f64, hi: f64) -> [Wave; 3] {
    std::array::from_fn(|_| Wave {
        amp: amp * rng.random_range(0.2..1.0) / 1.8,
        freq: rng.random_range(lo..hi),
        phase: rng.random_range(0.0..TAU),
    })
}

fn eval(ws: &[Wave], t: f64) -> f64 {
    ws.iter().map(|w| w.amp * (TAU * w.freq * t + w.phase).sin()).sum()
}

/// Per-segment smooth random rotation vectors.
struct Jiggle {
    axes: Vec<[[Wave; 3]; 3]>,
    flex: Vec<(usize, f64, [Wave; 3])>,
}

impl Jiggle {
    fn new(rig: &Rig, rng: &mut impl Rng, scale: f64, lo: f64, hi: f64) -> Self {
        let n = rig.tree.len();
        let mut amp = vec![0.12; n];
        for &s in &rig.spine {
            amp[s] = 0.15;
        }
        amp[rig.neck] = 0.2;
        amp[rig.head] = 0.25;
        for side in 0..2 {
            amp[rig.shoulder[side]] = 0.6;
            amp[rig.elbow[side]] = 0.2;
            amp[rig.hip[side]] = 0.35;
            amp[rig.knee[side]] = 0.05;
            amp[rig.ankle[side]] = 0.15;
        }
        amp[0] = 0.1;
        let axes = amp.iter().map(|a| std::array::from_fn(|_| waves(rng, a * scale, lo, hi))).collect();
        // One-sided hinge flexion for knees and elbows.
        let mut flex = Vec::new();
        for side in 0..2 {
            flex.push((rig.knee[side], 0.5 * scale, waves(rng, 1.0, lo, hi)));
            flex.push((rig.elbow[side], 0.9 * scale, waves(rng, 1.0, lo, hi)));
        }
        Self { axes, flex }
    }

    fn apply(&self, rig: &Rig, rot: &mut [Mat3], t: f64) {
        for (s, w) in self.axes.iter().enumerate() {
            if rig.toe.contains(&s) {
                continue;
            }
            let v = Vec3::new(eval(&w[0], t), eval(&w[1], t), eval(&w[2], t));
            rot[s] = rot[s] * Mat3::from_rotvec(v);
        }
        for (s, a, w) in &self.flex {
            let amount = a * (0.5 + 0.5 * eval(w, t).tanh());
            let flex = if rig.knee.contains(s) {
                Mat3::rot_x(amount)
            } else {
                let sign = if *s == rig.elbow[0] { -1.0 } else { 1.0 };
                Mat3::rot_y(sign * amount)
            };
            rot[*s] = rot[*s] * flex;
        }
    }
}

type Frames = (Vec<Pose>, Vec<[bool; NUM_CONTACTS]>);

fn stationary(rig: &Rig, p: &MotionParams, rng: &mut impl Rng, n: usize) -> Result<Frames> {
    let mut rot = vec![Mat3::identity(); rig.tree.len()];
    rig.relaxed(&mut rot, [0.0, 0.0]);
    let jiggle = Jiggle::new(rig, rng, 0.6, 0.1, 0.5);
    let t0 = rng.random_range(0.0..100.0);
    jiggle.apply(rig, &mut rot, t0);
    rot[0] = Mat3::rot_y(p.heading);
    // Keep the legs straight and the feet flat.
    for side in 0..2 {
        rot[rig.hip[side]] = Mat3::identity();
        rot[rig.knee[side]] = Mat3::identity();
        rot[rig.ankle[side]] = Mat3::identity();
    }
    let xz = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let mut pose = Pose { rotations: rot, root_position: Vec3::new(xz[0], 0.0, xz[1]) };
    rig.ground(&mut pose)?;
    Ok((vec![pose; n], vec![[true; NUM_CONTACTS]; n]))
}

/// Phase-locked walking/running along a straight line at constant speed.
/// Stance and swing boundaries fall on frame instants.
fn gait(rig: &Rig, p: &MotionParams, rng: &mut impl Rng, n: usize) -> Result<Frames> {
    let rate = GEN_RATE as f64;
    let v = p.speed;
    let l = rig.leg();
    let cycle_s = if v <= 2.0 { 1.1 - 0.15 * v } else { 0.8 - 0.05 * (v - 2.0) };
    // Frame counts: even cycle so the feet are exactly half a cycle apart.
    let cycle_f = 2 * (cycle_s * rate / 2.0).round() as i64;
    let stance_max = if v > 1e-9 { (0.62 * cycle_s).min(0.8 * l / v) } else { 0.62 * cycle_s };
    let stance_f = ((stance_max * rate).floor() as i64).clamp(2, cycle_f - 4);
    let (cycle, stance) = (cycle_f as f64 / rate, stance_f as f64 / rate);
    let half = v * stance / 2.0;
    let drop = ((0.985 * l).powi(2) - half * half).sqrt();
    let hip_drop = -rig.tree.segments[rig.hip[0]].offset.y();
    let height = rig.ankle_height + drop + hip_drop;
    let lift = 0.06 * l + 0.02 * v;
    let yaw = Mat3::rot_y(p.heading);
    let fwd = yaw.mul_vec(Vec3::new(0.0, 0.0, 1.0));
    let start = Vec3::new(rng.random_range(-2.0..2.0), 0.0, rng.random_range(-2.0..2.0));
    let phase_f = rng.random_range(0..cycle_f);
    let bob = 0.01 * l;
    let torso = Jiggle::new(rig, rng, 0.25, 0.2, 0.8);
    let root_at = |t: f64| start + fwd.scale(v * t);
    let lateral: [Vec3; 2] = std::array::from_fn(|s| {
        let o = rig.tree.segments[rig.hip[s]].offset;
        yaw.mul_vec(Vec3::new(o.x(), 0.0, 0.0))
    });
    // Footfall of step `j` for a foot: under its hip at mid-stance.
    let footfall = |side: usize, j: i64| {
        let mid = ((j * cycle_f + side as i64 * cycle_f / 2 - phase_f) as f64 + stance_f as f64 / 2.0) / rate;
        let r = root_at(mid);
        Vec3::new(r.x(), rig.ankle_height, r.z()) + lateral[side]
    };
    let mut frames = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / rate;
        let tp = (k as i64 + phase_f) as f64 / rate;
        let mut rot = vec![Mat3::identity(); rig.tree.len()];
        let swing_phase = (TAU * tp / cycle).sin();
        rig.relaxed(&mut rot, [0.35 * swing_phase * v.min(1.5), -0.35 * swing_phase * v.min(1.5)]);
        torso.apply(rig, &mut rot, t);
        let pelvis = yaw * Mat3::rot_y(0.08 * swing_phase);
        rot[0] = pelvis;
        let mut root = root_at(t);
        root.0[1] = height - bob * (2.0 * TAU * tp / cycle).cos();
        let mut in_stance = [false; 2];
        for side in 0..2 {
            let local = k as i64 + phase_f - side as i64 * cycle_f / 2;
            let j = local.div_euclid(cycle_f);
            let u = local.rem_euclid(cycle_f);
            let target = if u <= stance_f {
                in_stance[side] = true;
                footfall(side, j)
            } else {
                let s = (u - stance_f) as f64 / (cycle_f - stance_f) as f64;
                let a = footfall(side, j);
                let b = footfall(side, j + 1);
                let mut x = a + (b - a).scale(s);
                x.0[1] += lift * (PI * s).sin();
                x
            };
            rig.leg_ik(&mut rot, side, &pelvis, root, target, &yaw);
        }
        frames.push(Pose { rotations: rot, root_position: root });
        flags.push(in_stance);
    }
    let stance_flags = contact_flags(rig, &flags);
    Ok((frames, stance_flags))
}

/// Per-contact flags from per-foot stance flags, assuming the tree's
/// contacts are listed left heel, left toe, right heel, right toe.
fn contact_flags(rig: &Rig, feet: &[[bool; 2]]) -> Vec<[bool; NUM_CONTACTS]> {
    let side_of: Vec<usize> = rig
        .tree
        .contacts
        .iter()
        .map(|c| {
            let mut s = c.segment;
            loop {
                if s == rig.ankle[0] || s == rig.knee[0] || s == rig.hip[0] {
                    return 0;
                }
                match rig.tree.segments[s].parent {
                    Some(p) => s = p,
                    None => return 1,
                }
            }
        })
        .collect();
    feet.iter().map(|f| std::array::from_fn(|c| f[side_of[c]])).collect()
}

fn random_smooth(rig: &Rig, p: &MotionParams, rng: &mut impl Rng, n: usize) -> Result<Frames> {
    let jiggle = Jiggle::new(rig, rng, 1.0, 0.15, 1.2);
    let yaw_w = waves(rng, 1.5, 0.02, 0.15);
    let vel_w = [waves(rng, 0.5, 0.05, 0.3), waves(rng, 0.5, 0.05, 0.3)];
    let mut xz = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let dt = 1.0 / GEN_RATE as f64;
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let mut rot = vec![Mat3::identity(); rig.tree.len()];
        rig.relaxed(&mut rot, [0.0, 0.0]);
        rot[0] = Mat3::rot_y(p.heading + eval(&yaw_w, t));
        jiggle.apply(rig, &mut rot, t);
        let mut pose = Pose { rotations: rot, root_position: Vec3::new(xz[0], 0.0, xz[1]) };
        rig.ground(&mut pose)?;
        frames.push(pose);
        xz[0] += eval(&vel_w[0], t) * dt;
        xz[1] += eval(&vel_w[1], t) * dt;
    }
    // Nothing is held static by construction.
    Ok((frames, vec![[false; NUM_CONTACTS]; n]))
}

/// Cubic Hermite interpolation on `u ∈ [0, 1]`; slopes per unit of `u`.
fn hermite(y0: f64, y1: f64, m0: f64, m1: f64, u: f64) -> f64 {
    let (u2, u3) = (u * u, u * u * u);
    (2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * m1
}

/// Repeated vertical counter-movement jumps with ballistic flight.
fn jump(rig: &Rig, p: &MotionParams, rng: &mut impl Rng, n: usize) -> Result<Frames> {
    const G: f64 = 9.81;
    let full = rig.standing;
    let stand = full - 0.01 * rig.leg();
    let top = full - 0.003 * rig.leg();
    let crouch = stand - rng.random_range(0.15..0.26) * rig.leg();
    let apex = rng.random_range(0.1..0.3);
    let v0 = (2.0 * G * apex).sqrt();
    let flight = 2.0 * v0 / G;
    // rest, dip, push, flight, absorb, recover
    let durations = [rng.random_range(0.3..0.8), 0.45, 0.25, flight, 0.25, 0.5];
    let cycle: f64 = durations.iter().sum();
    let yaw = Mat3::rot_y(p.heading);
    let lateral: [Vec3; 2] = std::array::from_fn(|s| {
        let o = rig.tree.segments[rig.hip[s]].offset;
        yaw.mul_vec(Vec3::new(o.x(), 0.0, 0.0))
    });
    let base = Vec3::new(rng.random_range(-2.0..2.0), 0.0, rng.random_range(-2.0..2.0));
    let feet: [Vec3; 2] = std::array::from_fn(|s| base + lateral[s] + Vec3::new(0.0, rig.ankle_height, 0.0));
    let phase0 = rng.random_range(0.0..cycle);
    let torso = Jiggle::new(rig, rng, 0.2, 0.2, 0.8);
    let mut frames = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for k in 0..n {
        let t = (k as f64 / GEN_RATE as f64 + phase0) % cycle;
        let mut acc = 0.0;
        let mut stage = 0;
        while stage < 5 && t >= acc + durations[stage] {
            acc += durations[stage];
            stage += 1;
        }
        let d = durations[stage];
        let u = ((t - acc) / d).clamp(0.0, 1.0);
        let (y, airborne) = match stage {
            0 => (stand, false),
            1 => (hermite(stand, crouch, 0.0, 0.0, u), false),
            2 => (hermite(crouch, top, 0.0, v0 * d, u), false),
            3 => {
                let s = t - acc;
                (top + v0 * s - 0.5 * G * s * s, true)
            }
            4 => (hermite(top, crouch, -v0 * d, 0.0, u), false),
            _ => (hermite(crouch, stand, 0.0, 0.0, u), false),
        };
        let mut rot = vec![Mat3::identity(); rig.tree.len()];
        let arm = match stage {
            1 => 0.8 * u,
            2 => 0.8 - 2.6 * u,
            3 => -1.8 + 1.0 * u,
            4 => -0.8 + 0.8 * u,
            _ => 0.0,
        };
        rig.relaxed(&mut rot, [arm, arm]);
        torso.apply(rig, &mut rot, t);
        rot[0] = yaw;
        let root = Vec3::new(base.x(), y, base.z());
        for side in 0..2 {
            // In flight the legs keep their takeoff configuration.
            let target = if airborne {
                feet[side] + Vec3::new(0.0, y - top, 0.0)
            } else {
                feet[side]
            };
            rig.leg_ik(&mut rot, side, &yaw, root, target, &yaw);
        }
        frames.push(Pose { rotations: rot, root_position: root });
        flags.push([!airborne && stage != 3; 2]);
    }
    // Takeoff and touchdown frames move; only interior ground frames are static.
    let stance_flags = contact_flags(rig, &flags);
    Ok((frames, stance_flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> KinematicTree {
        KinematicTree::default_tree()
    }

    fn gen(kind: MotionKind, seed: u64) -> GeneratedMotion {
        generate_motion(&MotionParams::new(kind, 4.0), &tree(), seed).unwrap()
    }

    #[test]
    fn stationary_is_static() {
        let g = gen(MotionKind::Stationary, 3);
        assert!(g.motion.frames.windows(2).all(|w| w[0] == w[1]));
        assert!(g.stance.iter().all(|s| s.iter().all(|b| *b)));
    }

    #[test]
    fn deterministic_under_seed() {
        for kind in MotionKind::ALL {
            assert_eq!(gen(kind, 11), gen(kind, 11));
        }
        assert_ne!(gen(MotionKind::RandomSmooth, 1), gen(MotionKind::RandomSmooth, 2));
    }

    #[test]
    fn gait_speed_matches_request() {
        for v in [0.6, 1.3, 2.4] {
            let mut p = MotionParams::new(MotionKind::Gait, 6.0);
            p.speed = v;
            p.heading = 0.7;
            let g = generate_motion(&p, &tree(), 5).unwrap();
            let f = &g.motion.frames;
            let d = f.last().unwrap().root_position - f[0].root_position;
            let speed = (d.x().powi(2) + d.z().powi(2)).sqrt() / ((f.len() - 1) as f64 / 60.0);
            assert!((speed - v).abs() < 0.02 * v, "speed {speed} for {v}");
        }
    }

    #[test]
    fn feet_stay_above_ground_and_stance_is_static() {
        let t = tree();
        for kind in MotionKind::ALL {
            for seed in 0..3 {
                let p = MotionParams::random(kind, 3.0, &mut ChaCha8Rng::seed_from_u64(seed));
                let g = generate_motion(&p, &t, seed).unwrap();
                let subject = t.scaled(p.height, p.mass).unwrap();
                let fk = g.motion.forward(&subject).unwrap();
                for f in &fk {
                    for c in &f.contacts {
                        assert!(c.y() > -0.01, "{kind:?}: contact below ground {}", c.y());
                    }
                }
                for k in 1..fk.len() {
                    for c in 0..4 {
                        if g.stance[k][c] && g.stance[k - 1][c] {
                            let d = (fk[k].contacts[c] - fk[k - 1].contacts[c]).norm();
                            assert!(d < 1e-9, "{kind:?} contact {c} moved {d} in stance");
                            assert!(fk[k].contacts[c].y().abs() < 0.01);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let mut p = MotionParams::new(MotionKind::Gait, 2.0);
        p.speed = 4.0;
        assert!(generate_motion(&p, &tree(), 0).is_err());
        let p = MotionParams::new(MotionKind::Gait, 0.0);
        assert!(generate_motion(&p, &tree(), 0).is_err());
    }
}
