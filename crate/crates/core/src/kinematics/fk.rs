use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::rotation::{Mat3, Vec3};
use super::tree::KinematicTree;
use crate::error::{Error, Result};

/// One skeletal configuration. `rotations[0]` is the root orientation in the
/// world frame; every other entry is a segment's rotation relative to its parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T = f64> {
    pub rotations: Vec<Mat3<T>>,
    pub root_position: Vec3<T>,
}

impl<T: Float> Pose<T> {
    pub fn identity(segments: usize, root_position: Vec3<T>) -> Self {
        Self { rotations: vec![Mat3::identity(); segments], root_position }
    }

    pub fn is_finite(&self) -> bool {
        self.root_position.is_finite() && self.rotations.iter().all(|r| r.is_finite())
    }

    pub fn cast<U: Float>(&self) -> Pose<U> {
        Pose {
            rotations: self.rotations.iter().map(|r| r.cast()).collect(),
            root_position: self.root_position.cast(),
        }
    }
}

/// World-frame kinematic state of a pose.
#[derive(Clone, Debug, PartialEq)]
pub struct FkResult<T = f64> {
    pub global: Vec<Mat3<T>>,
    pub joints: Vec<Vec3<T>>,
    pub sites: Vec<Vec3<T>>,
    pub contacts: Vec<Vec3<T>>,
}

fn vcast<T: Float>(v: Vec3) -> Vec3<T> {
    v.cast()
}

pub fn forward_kinematics<T: Float>(tree: &KinematicTree, pose: &Pose<T>) -> Result<FkResult<T>> {
    let n = tree.len();
    if pose.rotations.len() != n {
        return Err(Error::contract(format!(
            "pose has {} rotations, tree has {n} segments",
            pose.rotations.len()
        )));
    }
    let mut global: Vec<Mat3<T>> = Vec::with_capacity(n);
    let mut joints: Vec<Vec3<T>> = Vec::with_capacity(n);
    for (i, s) in tree.segments.iter().enumerate() {
        match s.parent {
            Some(p) => {
                global.push(global[p] * pose.rotations[i]);
                joints.push(joints[p] + global[p].mul_vec(vcast(s.offset)));
            }
            None => {
                global.push(pose.rotations[i]);
                joints.push(pose.root_position);
            }
        }
    }
    let place = |a: &super::tree::Attachment| joints[a.segment] + global[a.segment].mul_vec(vcast(a.offset));
    let sites = tree.sites.iter().map(place).collect();
    let contacts = tree.contacts.iter().map(place).collect();
    Ok(FkResult { global, joints, sites, contacts })
}

/// Global segment orientations of a pose's rotations.
pub fn local_to_global<T: Float>(tree: &KinematicTree, local: &[Mat3<T>]) -> Result<Vec<Mat3<T>>> {
    if local.len() != tree.len() {
        return Err(Error::contract(format!("{} rotations for {} segments", local.len(), tree.len())));
    }
    let mut global: Vec<Mat3<T>> = Vec::with_capacity(local.len());
    for (i, s) in tree.segments.iter().enumerate() {
        global.push(match s.parent {
            Some(p) => global[p] * local[i],
            None => local[i],
        });
    }
    Ok(global)
}

/// Inverse of [`local_to_global`]: `local_j = G_parentᵀ · G_j`.
pub fn global_to_local<T: Float>(tree: &KinematicTree, global: &[Mat3<T>]) -> Result<Vec<Mat3<T>>> {
    if global.len() != tree.len() {
        return Err(Error::contract(format!("{} rotations for {} segments", global.len(), tree.len())));
    }
    Ok(tree
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| match s.parent {
            Some(p) => global[p].transpose() * global[i],
            None => global[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rotation::geodesic_angle;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn tree() -> KinematicTree {
        KinematicTree::default_tree()
    }

    fn pose_from(seed: &[f64]) -> Pose {
        let n = 24;
        let rotations = (0..n)
            .map(|i| {
                let a = seed[i % seed.len()];
                let b = seed[(i * 7 + 3) % seed.len()];
                let c = seed[(i * 5 + 1) % seed.len()];
                Mat3::from_rotvec(Vec3::new(a, b, c).scale(2.0))
            })
            .collect();
        Pose { rotations, root_position: Vec3::new(seed[0], 1.0 + seed[1], seed[2]) }
    }

    #[test]
    fn identity_pose_joints_are_cumulative_offsets() {
        let t = tree();
        let fk = forward_kinematics(&t, &Pose::identity(24, Vec3::zero())).unwrap();
        for j in 0..t.len() {
            let mut expect = Vec3::zero();
            let mut k = j;
            while t.segments[k].parent.is_some() {
                expect += t.segments[k].offset;
                k = t.segments[k].parent.unwrap();
            }
            assert!((fk.joints[j] - expect).norm() < 1e-12);
        }
        assert_eq!(fk.joints, t.rest_joint_positions());
    }

    #[test]
    fn root_yaw_rotates_children() {
        let t = tree();
        let mut pose = Pose::identity(24, Vec3::zero());
        pose.rotations[0] = Mat3::rot_y(FRAC_PI_2);
        let fk = forward_kinematics(&t, &pose).unwrap();
        // left hip offset (+0.085, -0.09, 0) turns to (0, -0.09, -0.085)
        let hip = fk.joints[1];
        assert!((hip.x()).abs() < 1e-12);
        assert!((hip.z() + 0.085).abs() < 1e-12);
        assert!((hip.y() + 0.09).abs() < 1e-12);
    }

    #[test]
    fn wrong_pose_length_is_contract_error() {
        assert!(matches!(
            forward_kinematics(&tree(), &Pose::identity(3, Vec3::<f64>::zero())),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn stacked_yaws_give_identity_local() {
        let t = tree();
        let mut g = vec![Mat3::identity(); 24];
        g[0] = Mat3::rot_y(FRAC_PI_2);
        g[3] = Mat3::rot_y(FRAC_PI_2);
        let l = global_to_local(&t, &g).unwrap();
        assert!(l[3].max_abs_diff(&Mat3::identity()) < 1e-12);
        let identity = global_to_local(&t, &vec![Mat3::<f64>::identity(); 24]).unwrap();
        assert!(identity.iter().all(|r| *r == Mat3::identity()));
    }

    proptest! {
        #[test]
        fn fk_preserves_segment_lengths(seed in proptest::collection::vec(-1.0f64..1.0, 11)) {
            let t = tree();
            let fk = forward_kinematics(&t, &pose_from(&seed)).unwrap();
            for (j, s) in t.segments.iter().enumerate() {
                if let Some(p) = s.parent {
                    let d = (fk.joints[j] - fk.joints[p]).norm();
                    prop_assert!((d - s.offset.norm()).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn global_local_round_trip(seed in proptest::collection::vec(-1.0f64..1.0, 13)) {
            let t = tree();
            let pose = pose_from(&seed);
            let g = forward_kinematics(&t, &pose).unwrap().global;
            let l = global_to_local(&t, &g).unwrap();
            for (a, b) in l.iter().zip(&pose.rotations) {
                prop_assert!(a.max_abs_diff(b) < 1e-10);
            }
            let back = local_to_global(&t, &l).unwrap();
            for (a, b) in back.iter().zip(&g) {
                prop_assert!(a.max_abs_diff(b) < 1e-10);
                prop_assert!(geodesic_angle(a, b) < 1e-6);
            }
        }

        #[test]
        fn joint_plan_matches_fk(seed in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let t = tree();
            let pose = pose_from(&seed);
            let fk = forward_kinematics(&t, &pose).unwrap();
            let plan = t.joint_plan::<f64>();
            let cplan = t.contact_plan::<f64>();
            let eval = |terms: &[(usize, [f64; 3])]| {
                terms.iter().fold(Vec3::zero(), |acc, (s, v)| acc + fk.global[*s].mul_vec(Vec3(*v)))
            };
            for (j, terms) in plan.points.iter().enumerate() {
                let rel = fk.joints[j] - pose.root_position;
                prop_assert!((eval(terms) - rel).norm() < 1e-12);
            }
            for (c, terms) in cplan.points.iter().enumerate() {
                let rel = fk.contacts[c] - pose.root_position;
                prop_assert!((eval(terms) - rel).norm() < 1e-12);
            }
        }
    }
}
