//! Skeleton definition, rotations and forward kinematics.

mod fk;
mod rotation;
mod tree;

pub use fk::{forward_kinematics, global_to_local, local_to_global, FkResult, Pose};
pub use rotation::{decode6d, geodesic_angle, Mat3, Rotation6D, Vec3};
pub use tree::{Attachment, KinematicTree, Segment, NUM_CONTACTS, NUM_SEGMENTS, NUM_SITES};
pub(crate) use tree::hex;
