use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, FkResult, KinematicTree, Pose};

/// Ground-truth or reconstructed motion at a fixed frame rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub rate: u32,
    pub frames: Vec<Pose>,
    pub height: f64,
    pub mass: f64,
    pub trial_id: u64,
}

impl MotionSequence {
    pub fn validate(&self) -> Result<()> {
        if self.rate != 60 && self.rate != 20 {
            return Err(Error::contract(format!("unsupported rate {} Hz", self.rate)));
        }
        if self.frames.len() < 2 {
            return Err(Error::contract("motion needs at least 2 frames"));
        }
        if !self.frames.iter().all(Pose::is_finite) || !(self.height > 0.0) || !(self.mass > 0.0) {
            return Err(Error::contract("motion contains non-finite or non-positive values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.rate as f64
    }

    /// The tree scaled to this subject.
    pub fn subject_tree(&self, tree: &KinematicTree) -> Result<KinematicTree> {
        tree.scaled(self.height, self.mass)
    }

    pub fn forward(&self, tree: &KinematicTree) -> Result<Vec<FkResult>> {
        self.frames.iter().map(|p| forward_kinematics(tree, p)).collect()
    }

    /// Every third frame starting at `first`; used to go from 60 Hz to 20 Hz.
    pub fn decimate(&self, first: usize, last: usize) -> MotionSequence {
        MotionSequence {
            rate: self.rate / 3,
            frames: (first..=last).step_by(3).map(|k| self.frames[k].clone()).collect(),
            height: self.height,
            mass: self.mass,
            trial_id: self.trial_id,
        }
    }
}
