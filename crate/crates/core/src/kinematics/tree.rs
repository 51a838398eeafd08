use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rotation::Vec3;
use crate::error::{Error, Result};
use crate::numerics::PointPlan;
use crate::scalar::Scalar;

pub const NUM_SEGMENTS: usize = 24;
pub const NUM_SITES: usize = 13;
pub const NUM_CONTACTS: usize = 4;

const DEFAULT_SKELETON: &str = include_str!("../../assets/smpl24.toml");
const SKELETON_FORMAT: &str = "sparsemo-skeleton";
const SKELETON_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: String,
    pub parent: Option<usize>,
    /// Joint position relative to the parent joint, parent frame, meters.
    pub offset: Vec3,
    pub mass: f64,
}

/// A point rigidly attached to a segment: an IMU site or a contact point.
#[derive(Clone, Debug, PartialEq)]
pub struct Attachment {
    pub name: String,
    pub segment: usize,
    pub offset: Vec3,
}

/// Rigid skeleton shared by every other component. Geometry is kept in
/// `f64`; the kinematic routines cast to the working scalar on use.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    pub segments: Vec<Segment>,
    pub root: usize,
    pub sites: Vec<Attachment>,
    pub contacts: Vec<Attachment>,
    pub reference_height: f64,
    pub subject_mass: f64,
    /// Hex sha256 of the skeleton file the tree was parsed from.
    pub source_hash: String,
}

#[derive(Deserialize, Serialize)]
struct FileSegment {
    name: String,
    parent: String,
    offset: [f64; 3],
    mass: f64,
}

#[derive(Deserialize, Serialize)]
struct FileAttachment {
    name: String,
    segment: String,
    offset: [f64; 3],
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    format: String,
    version: u32,
    reference_height: f64,
    subject_mass: f64,
    segments: Vec<FileSegment>,
    sites: Vec<FileAttachment>,
    contacts: Vec<FileAttachment>,
}

impl Default for KinematicTree {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_SKELETON).expect("bundled skeleton is valid")
    }
}

impl KinematicTree {
    /// The bundled 24-segment tree.
    pub fn default_tree() -> Self {
        Self::default()
    }

    pub fn default_source() -> &'static str {
        DEFAULT_SKELETON
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| Error::format(format!("skeleton: {e}")))?;
        if file.format != SKELETON_FORMAT {
            return Err(Error::format(format!("skeleton: unexpected format {:?}", file.format)));
        }
        if file.version != SKELETON_VERSION {
            return Err(Error::format(format!("skeleton: unsupported version {}", file.version)));
        }
        let mut index = HashMap::new();
        let mut segments = Vec::with_capacity(file.segments.len());
        for (i, s) in file.segments.iter().enumerate() {
            if index.insert(s.name.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate segment {:?}", s.name)));
            }
            let parent = if s.parent.is_empty() {
                None
            } else {
                Some(*index.get(&s.parent).ok_or_else(|| {
                    Error::contract(format!(
                        "segment {:?}: parent {:?} must be listed earlier",
                        s.name, s.parent
                    ))
                })?)
            };
            segments.push(Segment {
                name: s.name.clone(),
                parent,
                offset: Vec3(s.offset),
                mass: s.mass,
            });
        }
        let attach = |list: &[FileAttachment]| -> Result<Vec<Attachment>> {
            list.iter()
                .map(|a| {
                    let segment = *index.get(&a.segment).ok_or_else(|| {
                        Error::contract(format!("{:?}: unknown segment {:?}", a.name, a.segment))
                    })?;
                    Ok(Attachment { name: a.name.clone(), segment, offset: Vec3(a.offset) })
                })
                .collect()
        };
        let sites = attach(&file.sites)?;
        let contacts = attach(&file.contacts)?;
        let tree = KinematicTree {
            root: 0,
            segments,
            sites,
            contacts,
            reference_height: file.reference_height,
            subject_mass: file.subject_mass,
            source_hash: hex(&Sha256::digest(text.as_bytes())),
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Checks every structural invariant; loading already calls this.
    pub fn validate(&self) -> Result<()> {
        let roots: Vec<_> = self.segments.iter().filter(|s| s.parent.is_none()).collect();
        if roots.len() != 1 || self.segments.first().map(|s| s.parent.is_some()).unwrap_or(true) {
            return Err(Error::contract("tree needs exactly one root, listed first"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if let Some(p) = s.parent {
                if p >= i {
                    return Err(Error::contract(format!("segment {:?}: parent after child", s.name)));
                }
            }
            if !s.offset.is_finite() {
                return Err(Error::contract(format!("segment {:?}: non-finite offset", s.name)));
            }
            if !(s.mass > 0.0) || !s.mass.is_finite() {
                return Err(Error::contract(format!("segment {:?}: mass must be > 0", s.name)));
            }
        }
        if self.segments.len() != NUM_SEGMENTS {
            return Err(Error::contract(format!(
                "expected {NUM_SEGMENTS} segments, found {}",
                self.segments.len()
            )));
        }
        if self.sites.len() != NUM_SITES {
            return Err(Error::contract(format!("expected {NUM_SITES} sites, found {}", self.sites.len())));
        }
        if self.contacts.len() != NUM_CONTACTS {
            return Err(Error::contract(format!(
                "expected {NUM_CONTACTS} contact points, found {}",
                self.contacts.len()
            )));
        }
        for a in self.sites.iter().chain(&self.contacts) {
            if !a.offset.is_finite() {
                return Err(Error::contract(format!("{:?}: non-finite offset", a.name)));
            }
        }
        let total: f64 = self.segments.iter().map(|s| s.mass).sum();
        if (total - self.subject_mass).abs() > 1e-6 * self.subject_mass.max(1.0) {
            return Err(Error::contract(format!(
                "segment masses sum to {total} kg, subject mass is {} kg",
                self.subject_mass
            )));
        }
        if !(self.reference_height > 0.0) {
            return Err(Error::contract("reference height must be > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn site_index(&self, name: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.name == name)
    }

    pub fn children(&self, seg: usize) -> impl Iterator<Item = usize> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.parent == Some(seg))
            .map(|(i, _)| i)
    }

    /// Offsets scaled linearly to `height` and masses rescaled to `mass`.
    pub fn scaled(&self, height: f64, mass: f64) -> Result<Self> {
        if !(height > 0.0 && mass > 0.0) {
            return Err(Error::contract(format!("height {height} and mass {mass} must be > 0")));
        }
        let k = height / self.reference_height;
        let km = mass / self.subject_mass;
        let mut out = self.clone();
        for s in &mut out.segments {
            s.offset = s.offset.scale(k);
            s.mass *= km;
        }
        for a in out.sites.iter_mut().chain(out.contacts.iter_mut()) {
            a.offset = a.offset.scale(k);
        }
        out.reference_height = height;
        out.subject_mass = mass;
        Ok(out)
    }

    /// Root height above ground when standing in the identity pose.
    pub fn standing_root_height(&self) -> f64 {
        let joints = self.rest_joint_positions();
        self.contacts
            .iter()
            .map(|c| -(joints[c.segment] + c.offset).y())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Joint positions of the identity pose with the root at the origin.
    pub fn rest_joint_positions(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.len());
        for s in &self.segments {
            let p = match s.parent {
                Some(p) => out[p] + s.offset,
                None => Vec3::zero(),
            };
            out.push(p);
        }
        out
    }

    /// Terms expressing a point on `segment` at `local` as a sum of
    /// global-rotation × vector products, relative to the root joint.
    fn chain_terms(&self, segment: usize, local: Option<Vec3>) -> Vec<(usize, [f64; 3])> {
        let mut terms = Vec::new();
        if let Some(l) = local {
            terms.push((segment, l.0));
        }
        let mut s = segment;
        while let Some(p) = self.segments[s].parent {
            terms.push((p, self.segments[s].offset.0));
            s = p;
        }
        terms
    }

    /// Linear plan mapping global orientations to root-relative joint positions.
    pub fn joint_plan<T: Scalar>(&self) -> Arc<PointPlan<T>> {
        let points = (0..self.len()).map(|j| cast_terms(self.chain_terms(j, None))).collect();
        Arc::new(PointPlan { segments: self.len(), points })
    }

    /// Linear plan mapping global orientations to root-relative contact points.
    pub fn contact_plan<T: Scalar>(&self) -> Arc<PointPlan<T>> {
        let points = self
            .contacts
            .iter()
            .map(|c| cast_terms(self.chain_terms(c.segment, Some(c.offset))))
            .collect();
        Arc::new(PointPlan { segments: self.len(), points })
    }
}

fn cast_terms<T: Scalar>(terms: Vec<(usize, [f64; 3])>) -> Vec<(usize, [T; 3])> {
    terms.into_iter().map(|(s, v)| (s, v.map(T::from_f64_lossy))).collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tree_is_valid() {
        let t = KinematicTree::default_tree();
        assert_eq!(t.len(), 24);
        assert_eq!(t.sites.len(), 13);
        assert_eq!(t.contacts.len(), 4);
        assert_eq!(t.source_hash.len(), 64);
        assert!((t.standing_root_height() - 0.97).abs() < 0.05);
    }

    #[test]
    fn rejects_broken_files() {
        let src = KinematicTree::default_source();
        let wrong_mass = src.replacen("mass = 8.37", "mass = 9.37", 1);
        assert!(KinematicTree::from_toml_str(&wrong_mass).is_err());
        let bad_parent = src.replacen("parent = \"pelvis\"", "parent = \"head\"", 1);
        assert!(KinematicTree::from_toml_str(&bad_parent).is_err());
        let bad_version = src.replacen("version = 1", "version = 7", 1);
        assert!(matches!(KinematicTree::from_toml_str(&bad_version), Err(Error::Format(_))));
        assert!(KinematicTree::from_toml_str("not toml [").is_err());
    }

    #[test]
    fn scaling_is_linear_in_height() {
        let t = KinematicTree::default_tree();
        let s = t.scaled(2.0 * t.reference_height, 150.0).unwrap();
        assert!((s.standing_root_height() - 2.0 * t.standing_root_height()).abs() < 1e-12);
        let m: f64 = s.segments.iter().map(|x| x.mass).sum();
        assert!((m - 150.0).abs() < 1e-9);
        s.validate().unwrap();
    }
}
