//! Per-frame feature vectors, windows, sensor configurations and masks.
//!
//! Frame layout (190 reals), blocks in this order:
//!
//! | block | offset | len | content                                       |
//! |-------|--------|-----|-----------------------------------------------|
//! | R     | 0      | 144 | 24 global orientations, 6 numbers each         |
//! | a     | 144    | 39  | 13 site accelerations, world frame, m/s²       |
//! | Δp    | 183    | 2   | horizontal root displacement (x, z), meters    |
//! | p_y   | 185    | 1   | root height, meters                            |
//! | b     | 186    | 4   | contacts: left heel, left toe, right heel, right toe |
//!
//! Segment, site and contact order within blocks follows the skeleton file.

mod config;
mod normalize;

pub use config::{SensorConfig, SITE_PRESETS};
pub use normalize::Normalizer;

use crate::datagen::MotionSequence;
use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, global_to_local, KinematicTree, Mat3, Pose, Rotation6D, Vec3, NUM_CONTACTS,
    NUM_SEGMENTS, NUM_SITES,
};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const WINDOW: usize = 61;
pub const RATE_HZ: u32 = 20;

pub const ORI: usize = 0;
pub const ORI_LEN: usize = NUM_SEGMENTS * 6;
pub const ACC: usize = ORI + ORI_LEN;
pub const ACC_LEN: usize = NUM_SITES * 3;
pub const DP: usize = ACC + ACC_LEN;
pub const PY: usize = DP + 2;
pub const CONTACT: usize = PY + 1;
pub const FEATURES: usize = CONTACT + NUM_CONTACTS;

const _: () = assert!(ORI == 0 && ACC == 144 && DP == 183 && PY == 185 && CONTACT == 186 && FEATURES == 190);

/// Threshold for turning predicted contact probabilities into labels.
pub const CONTACT_THRESHOLD: f64 = 0.5;

/// Identifies the frame layout; stored in checkpoints and datasets.
pub fn layout_hash() -> String {
    use sha2::{Digest, Sha256};
    let desc = format!(
        "R:{ORI}+{ORI_LEN};a:{ACC}+{ACC_LEN};dp:{DP}+2;py:{PY}+1;b:{CONTACT}+{NUM_CONTACTS};N:{WINDOW};hz:{RATE_HZ}"
    );
    crate::kinematics::hex(&Sha256::digest(desc.as_bytes()))
}

pub fn ori_range(segment: usize) -> std::ops::Range<usize> {
    ORI + 6 * segment..ORI + 6 * segment + 6
}

pub fn acc_range(site: usize) -> std::ops::Range<usize> {
    ACC + 3 * site..ACC + 3 * site + 3
}

/// Encoded frames of a whole trial, row-major `[frames, 190]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T = f64> {
    pub data: Vec<T>,
    pub height: f64,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn frames(&self) -> usize {
        self.data.len() / FEATURES
    }

    pub fn frame(&self, i: usize) -> &[T] {
        &self.data[i * FEATURES..(i + 1) * FEATURES]
    }

    pub fn window(&self, start: usize) -> Result<FeatureWindow<T>> {
        if start + WINDOW > self.frames() {
            return Err(Error::contract(format!(
                "window at {start} exceeds {} frames",
                self.frames()
            )));
        }
        let data = self.data[start * FEATURES..(start + WINDOW) * FEATURES].to_vec();
        Ok(FeatureWindow { x: Tensor::new([WINDOW, FEATURES], data)?, height: self.height })
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            height: self.height,
        }
    }
}

/// The model's sample: 61 frames at 20 Hz plus the subject-height condition.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWindow<T = f64> {
    pub x: Tensor<T>,
    pub height: f64,
}

impl<T: Scalar> FeatureWindow<T> {
    pub fn frame(&self, i: usize) -> &[T] {
        &self.x.data()[i * FEATURES..(i + 1) * FEATURES]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.x.data_mut()[i * FEATURES..(i + 1) * FEATURES]
    }

    /// Drops the oldest frame and appends `last`.
    pub fn shift_in(&mut self, last: &[T]) {
        let d = self.x.data_mut();
        d.copy_within(FEATURES.., 0);
        d[(WINDOW - 1) * FEATURES..].copy_from_slice(last);
    }
}

/// Binary `[61, 190]` mask: `true` = observed, kept from the input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMask {
    pub bits: Vec<bool>,
}

impl FeatureMask {
    pub fn ones() -> Self {
        Self { bits: vec![true; WINDOW * FEATURES] }
    }

    pub fn zeros() -> Self {
        Self { bits: vec![false; WINDOW * FEATURES] }
    }

    pub fn last_frame(&self) -> &[bool] {
        &self.bits[(WINDOW - 1) * FEATURES..]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Channels of a single frame covered by a configuration.
pub fn observed_channels(config: &SensorConfig, tree: &KinematicTree) -> [bool; FEATURES] {
    let mut bits = [false; FEATURES];
    for site in config.sites() {
        for c in ori_range(tree.sites[site].segment) {
            bits[c] = true;
        }
        for c in acc_range(site) {
            bits[c] = true;
        }
    }
    if config.insoles {
        for b in &mut bits[CONTACT..FEATURES] {
            *b = true;
        }
    }
    bits
}

/// History frames fully observed, last frame observed on the configured channels.
pub fn build_inference_mask(config: &SensorConfig, tree: &KinematicTree) -> FeatureMask {
    let mut mask = FeatureMask::ones();
    let last = observed_channels(config, tree);
    mask.bits[(WINDOW - 1) * FEATURES..].copy_from_slice(&last);
    mask
}

/// One 20 Hz sample of the sensors that are present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Measurement {
    /// `(site index, global orientation, world acceleration)`.
    pub imus: Vec<(usize, Mat3, Vec3)>,
    pub insoles: Option<[f64; NUM_CONTACTS]>,
}

impl Measurement {
    /// The configuration actually covered by this sample.
    pub fn config(&self) -> SensorConfig {
        SensorConfig::from_indices(self.imus.iter().map(|m| m.0), self.insoles.is_some())
    }

    /// Writes the measured channels into a frame.
    pub fn write<T: Scalar>(&self, tree: &KinematicTree, frame: &mut [T]) {
        for (site, r, a) in &self.imus {
            let six = Rotation6D::encode(r).0;
            for (c, v) in ori_range(tree.sites[*site].segment).zip(six) {
                frame[c] = T::from_f64_lossy(v);
            }
            for (c, v) in acc_range(*site).zip(a.0) {
                frame[c] = T::from_f64_lossy(v);
            }
        }
        if let Some(b) = self.insoles {
            for (c, v) in (CONTACT..FEATURES).zip(b) {
                frame[c] = T::from_f64_lossy(v);
            }
        }
    }
}

/// Sets the last frame: measured channels from `measurement`, everything else
/// copied from the frame before it.
pub fn apply_observation<T: Scalar>(
    window: &FeatureWindow<T>,
    config: &SensorConfig,
    measurement: &Measurement,
    tree: &KinematicTree,
) -> Result<FeatureWindow<T>> {
    for (site, _, _) in &measurement.imus {
        if !config.contains(*site) {
            let name = tree.sites.get(*site).map(|s| s.name.as_str()).unwrap_or("?");
            return Err(Error::contract(format!("measurement for uninstrumented site {name}")));
        }
    }
    if measurement.insoles.is_some() && !config.insoles {
        return Err(Error::contract("insole measurement without insoles in the configuration"));
    }
    let mut out = window.clone();
    let prev = window.frame(WINDOW - 2).to_vec();
    let last = out.frame_mut(WINDOW - 1);
    last.copy_from_slice(&prev);
    measurement.write(tree, last);
    Ok(out)
}

/// Encodes a 20 Hz motion with its synthesized accelerations and contact labels.
/// Δp of the first frame is zero.
pub fn encode(
    motion: &MotionSequence,
    tree: &KinematicTree,
    accelerations: &[Vec<Vec3>],
    contacts: &[[f64; NUM_CONTACTS]],
) -> Result<FeatureSequence> {
    let n = motion.len();
    if accelerations.len() != n || contacts.len() != n {
        return Err(Error::contract(format!(
            "misaligned streams: {n} poses, {} acceleration frames, {} contact frames",
            accelerations.len(),
            contacts.len()
        )));
    }
    let mut data = vec![0.0; n * FEATURES];
    for (i, pose) in motion.frames.iter().enumerate() {
        let f = &mut data[i * FEATURES..(i + 1) * FEATURES];
        let fk = forward_kinematics(tree, pose)?;
        for (s, g) in fk.global.iter().enumerate() {
            f[ori_range(s)].copy_from_slice(&Rotation6D::encode(g).0);
        }
        if accelerations[i].len() != NUM_SITES {
            return Err(Error::contract(format!("frame {i}: {} site accelerations", accelerations[i].len())));
        }
        for (s, a) in accelerations[i].iter().enumerate() {
            f[acc_range(s)].copy_from_slice(&a.0);
        }
        if i > 0 {
            let d = pose.root_position - motion.frames[i - 1].root_position;
            f[DP] = d.x();
            f[DP + 1] = d.z();
        }
        f[PY] = pose.root_position.y();
        f[CONTACT..FEATURES].copy_from_slice(&contacts[i]);
    }
    Ok(FeatureSequence { data, height: motion.height })
}

/// Global orientations of a frame.
pub fn frame_orientations<T: Scalar>(frame: &[T]) -> Result<Vec<Mat3>> {
    (0..NUM_SEGMENTS)
        .map(|s| {
            let mut six = [0.0; 6];
            for (d, c) in six.iter_mut().zip(ori_range(s)) {
                *d = frame[c].to_f64_lossy();
            }
            Rotation6D(six).decode()
        })
        .collect()
}

/// Pose of one frame given the previous root position.
pub fn decode_frame<T: Scalar>(frame: &[T], tree: &KinematicTree, prev_root: Vec3) -> Result<Pose> {
    let global = frame_orientations(frame)?;
    let rotations = global_to_local(tree, &global)?;
    let root_position = Vec3::new(
        prev_root.x() + frame[DP].to_f64_lossy(),
        frame[PY].to_f64_lossy(),
        prev_root.z() + frame[DP + 1].to_f64_lossy(),
    );
    Ok(Pose { rotations, root_position })
}

/// Inverse of [`encode`] for the pose part; `initial_xz` places the first root.
pub fn decode<T: Scalar>(
    seq: &FeatureSequence<T>,
    tree: &KinematicTree,
    initial_xz: [f64; 2],
) -> Result<MotionSequence> {
    let mut prev = Vec3::new(initial_xz[0], 0.0, initial_xz[1]);
    let mut frames = Vec::with_capacity(seq.frames());
    for i in 0..seq.frames() {
        let mut f = seq.frame(i).to_vec();
        if i == 0 {
            f[DP] = T::zero();
            f[DP + 1] = T::zero();
        }
        let pose = decode_frame(&f, tree, prev)?;
        prev = pose.root_position;
        frames.push(pose);
    }
    Ok(MotionSequence { rate: RATE_HZ, frames, height: seq.height, mass: tree.subject_mass, trial_id: 0 })
}

#[cfg(test)]
mod tests;
