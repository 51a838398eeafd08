use crate::datagen::MotionSequence;
use crate::error::{Error, Result};
use crate::features::RATE_HZ;
use crate::inference::OutputRecord;
use crate::kinematics::{global_to_local, KinematicTree, Mat3, Pose, Vec3, NUM_SEGMENTS};

/// Rebuilds a motion from emitted records (global quaternions and root).
pub fn motion_from_records(
    records: &[OutputRecord],
    tree: &KinematicTree,
    height: f64,
    mass: f64,
    trial_id: u64,
) -> Result<MotionSequence> {
    let mut frames = Vec::with_capacity(records.len());
    for r in records {
        if r.quats.len() != NUM_SEGMENTS {
            return Err(Error::format(format!("frame {}: {} orientations, expected {NUM_SEGMENTS}", r.frame, r.quats.len())));
        }
        let global = r.quats.iter().map(|q| Mat3::from_quaternion(*q)).collect::<Result<Vec<_>>>()?;
        frames.push(Pose { rotations: global_to_local(tree, &global)?, root_position: Vec3(r.root) });
    }
    Ok(MotionSequence { rate: RATE_HZ, frames, height, mass, trial_id })
}
