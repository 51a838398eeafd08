use crate::error::Result;
use crate::features::{frame_orientations, CONTACT, CONTACT_THRESHOLD, DP};
use crate::kinematics::{forward_kinematics, global_to_local, KinematicTree, Pose, Vec3, NUM_CONTACTS};

/// Contact points of a frame relative to the root joint.
pub fn contact_points(frame: &[f64], tree: &KinematicTree) -> Result<Vec<Vec3>> {
    let global = frame_orientations(frame)?;
    let pose = Pose { rotations: global_to_local(tree, &global)?, root_position: Vec3::zero() };
    Ok(forward_kinematics(tree, &pose)?.contacts)
}

/// Horizontal displacement of every contact point from `prev` to `cur`,
/// including the root displacement stored in `cur`.
pub fn contact_displacements(prev: &[f64], cur: &[f64], tree: &KinematicTree) -> Result<Vec<[f64; 2]>> {
    let (a, b) = (contact_points(prev, tree)?, contact_points(cur, tree)?);
    Ok(a.iter()
        .zip(&b)
        .map(|(p, q)| [q.x() - p.x() + cur[DP], q.z() - p.z() + cur[DP + 1]])
        .collect())
}

/// Δp of `cur` after removing the mean horizontal motion of the points with
/// contact probability above the threshold; unchanged when none is in contact.
///
/// Δp − mean(rel + Δp) is evaluated as −mean(rel), where rel is the
/// root-relative point motion, so a single contact ends exactly static.
pub fn root_correct(prev: &[f64], cur: &[f64], tree: &KinematicTree) -> Result<[f64; 2]> {
    let active: Vec<usize> = (0..NUM_CONTACTS).filter(|&k| cur[CONTACT + k] > CONTACT_THRESHOLD).collect();
    if active.is_empty() {
        return Ok([cur[DP], cur[DP + 1]]);
    }
    let (a, b) = (contact_points(prev, tree)?, contact_points(cur, tree)?);
    let n = active.len() as f64;
    let (mut sx, mut sz) = (0.0, 0.0);
    for &k in &active {
        sx += b[k].x() - a[k].x();
        sz += b[k].z() - a[k].z();
    }
    Ok([-(sx / n), -(sz / n)])
}
