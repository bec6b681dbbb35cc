//! Joint vocabularies for each training domain and the merged 21-joint set.
//!
//! Joint order inside every builtin set is fixed; pose files store keypoints
//! in this order.
//!
//! | set       | count | order |
//! |-----------|-------|-------|
//! | merged    | 21    | the 17 `coco` joints, then `head_top`, `upper_neck`, `thorax`, `pelvis` |
//! | coco      | 17    | nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles (left before right) |
//! | mpii      | 16    | r/l leg, pelvis, thorax, upper_neck, head_top, r/l arm (official MPII order) |
//! | posetrack | 15    | r/l leg, r/l arm, head_bottom, nose, head_top |
//!
//! `head_bottom` and `upper_neck` name the same anatomical joint.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::instance::{Keypoint, PersonInstance};

pub const MERGED: &str = "merged";
pub const COCO: &str = "coco";
pub const MPII: &str = "mpii";
pub const POSETRACK: &str = "posetrack";

pub const BUILTIN_SETS: [&str; 4] = [MERGED, COCO, MPII, POSETRACK];

const COCO_JOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

const MPII_ONLY_JOINTS: [&str; 4] = ["head_top", "upper_neck", "thorax", "pelvis"];

const MPII_JOINTS: [&str; 16] = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "pelvis",
    "thorax",
    "upper_neck",
    "head_top",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
];

const POSETRACK_JOINTS: [&str; 15] = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "head_bottom",
    "nose",
    "head_top",
];

/// Joints that only head-annotating domains provide, by canonical name.
pub const HEAD_JOINTS: [&str; 2] = ["head_top", "upper_neck"];

/// Resolves joint-name aliases to one anatomical identity.
pub fn canonical(name: &str) -> &str {
    match name {
        "head_bottom" => "upper_neck",
        other => other,
    }
}

/// A named, ordered keypoint vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSet {
    pub name: String,
    pub joints: Vec<String>,
    /// `(left, right)` index pairs swapped under horizontal mirroring.
    pub flip_pairs: Vec<(usize, usize)>,
}

impl JointSet {
    /// Builds a validated joint set.
    pub fn new(name: impl Into<String>, joints: Vec<String>, flip_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let set = JointSet {
            name: name.into(),
            joints,
            flip_pairs,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds a set whose flip pairs are derived from `left_*`/`right_*` names.
    pub fn with_derived_flips(name: impl Into<String>, joints: Vec<String>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, joint) in joints.iter().enumerate() {
            if let Some(rest) = joint.strip_prefix("left_") {
                let partner = format!("right_{rest}");
                if let Some(j) = joints.iter().position(|n| *n == partner) {
                    pairs.push((i, j));
                }
            }
        }
        JointSet::new(name, joints, pairs)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: JointSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("joint set serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidJointSet {
            name: self.name.clone(),
            reason,
        };
        let mut seen = HashSet::new();
        for joint in &self.joints {
            if !seen.insert(joint.as_str()) {
                return Err(invalid(format!("duplicate joint `{joint}`")));
            }
        }
        let mut used = HashSet::new();
        for &(a, b) in &self.flip_pairs {
            if a >= self.joints.len() || b >= self.joints.len() {
                return Err(invalid(format!("flip pair ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(invalid(format!("flip pair ({a}, {b}) pairs a joint with itself")));
            }
            if !used.insert(a) || !used.insert(b) {
                return Err(invalid(format!("joint in flip pair ({a}, {b}) appears in another pair")));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.joints.len()
    }

    pub fn index_of(&self, joint: &str) -> Option<usize> {
        let wanted = canonical(joint);
        self.joints.iter().position(|n| canonical(n) == wanted)
    }

    /// Channel permutation that swaps each flip pair.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.count()).collect();
        for &(a, b) in &self.flip_pairs {
            perm.swap(a, b);
        }
        perm
    }
}

fn named(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Returns one of the builtin joint sets by name.
pub fn builtin_joint_set(name: &str) -> Result<JointSet> {
    let joints = match name {
        MERGED => {
            let mut joints = named(&COCO_JOINTS);
            joints.extend(named(&MPII_ONLY_JOINTS));
            joints
        }
        COCO => named(&COCO_JOINTS),
        MPII => named(&MPII_JOINTS),
        POSETRACK => named(&POSETRACK_JOINTS),
        other => return Err(Error::UnknownJointSet(other.to_string())),
    };
    JointSet::with_derived_flips(name, joints)
}

/// Index correspondence between two joint sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointMapping {
    pub from_set: String,
    pub to_set: String,
    pub from_count: usize,
    pub to_count: usize,
    /// `(from_index, to_index)` pairs, ordered by `from_index`.
    pub index_map: Vec<(usize, usize)>,
}

impl JointMapping {
    /// Pairs every joint of `from` with the joint of `to` sharing its anatomical identity.
    pub fn between(from: &JointSet, to: &JointSet) -> Self {
        let index_map = from
            .joints
            .iter()
            .enumerate()
            .filter_map(|(i, name)| to.index_of(name).map(|j| (i, j)))
            .collect();
        JointMapping {
            from_set: from.name.clone(),
            to_set: to.name.clone(),
            from_count: from.count(),
            to_count: to.count(),
            index_map,
        }
    }

    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }

    /// Re-indexes keypoints into the target set; unmapped target joints are missing.
    pub fn project_keypoints(&self, keypoints: &[Keypoint]) -> Result<Vec<Keypoint>> {
        if keypoints.len() != self.from_count {
            return Err(Error::ShapeMismatch(format!(
                "expected {} keypoints for `{}`, got {}",
                self.from_count,
                self.from_set,
                keypoints.len()
            )));
        }
        let mut out = vec![Keypoint::missing(); self.to_count];
        for &(i, j) in &self.index_map {
            out[j] = keypoints[i];
        }
        Ok(out)
    }

    pub fn project(&self, instance: &PersonInstance) -> Result<PersonInstance> {
        if instance.joint_set != self.from_set {
            return Err(Error::JointSetMismatch {
                expected: self.from_set.clone(),
                found: instance.joint_set.clone(),
            });
        }
        Ok(PersonInstance {
            keypoints: self.project_keypoints(&instance.keypoints)?,
            joint_set: self.to_set.clone(),
            ..instance.clone()
        })
    }
}

/// Mapping between two builtin sets.
pub fn mapping(from: &str, to: &str) -> Result<JointMapping> {
    Ok(JointMapping::between(&builtin_joint_set(from)?, &builtin_joint_set(to)?))
}

/// Convenience wrapper for [`JointMapping::project`].
pub fn project(instance: &PersonInstance, m: &JointMapping) -> Result<PersonInstance> {
    m.project(instance)
}
