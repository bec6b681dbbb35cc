//! Combining per-domain head outputs of one crop into a single pose.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{decode, decode_channel, DecodedPose, Heatmap};
use crate::instance::Keypoint;
use crate::skeleton::{builtin_joint_set, canonical, JointMapping, JointSet, HEAD_JOINTS};

/// Decoding knobs shared by every fusion strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// Gaussian filter sigma in cells; 0 disables.
    pub smooth_sigma: f64,
    pub quarter_offset: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            smooth_sigma: 1.0,
            quarter_offset: true,
        }
    }
}

/// Coefficients along the shoulder-midpoint to nose axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadInterpolation {
    pub bottom: f64,
    pub top: f64,
}

impl Default for HeadInterpolation {
    fn default() -> Self {
        HeadInterpolation { bottom: 0.5, top: 1.0 }
    }
}

/// How branch outputs are combined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FusionStrategy {
    Select { branch: String },
    HeadSwap { body: String, head: String },
    Vote,
}

impl FusionStrategy {
    /// Parses `select:<branch>`, `head-swap:<body>,<head>` or `vote`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidValue(format!("unknown fusion strategy `{text}`"));
        match text.split_once(':') {
            None if text == "vote" => Ok(FusionStrategy::Vote),
            Some(("select", branch)) if !branch.is_empty() => Ok(FusionStrategy::Select {
                branch: branch.to_string(),
            }),
            Some(("head-swap", pair)) => {
                let (body, head) = pair.split_once(',').ok_or_else(bad)?;
                Ok(FusionStrategy::HeadSwap {
                    body: body.to_string(),
                    head: head.to_string(),
                })
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FusionStrategy::Select { branch } => write!(f, "select:{branch}"),
            FusionStrategy::HeadSwap { body, head } => write!(f, "head-swap:{body},{head}"),
            FusionStrategy::Vote => write!(f, "vote"),
        }
    }
}

/// Per-domain heatmaps predicted for the same crop.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    branches: BTreeMap<String, (JointSet, Heatmap)>,
}

impl BranchOutputs {
    /// Groups heatmaps by their joint-set tag; geometry must agree across branches.
    pub fn new(heatmaps: Vec<Heatmap>) -> Result<Self> {
        let mut branches = BTreeMap::new();
        let mut reference: Option<(usize, usize, crate::heatmap::Geometry)> = None;
        for h in heatmaps {
            h.validate()?;
            let set = builtin_joint_set(&h.joint_set)?;
            if h.channels != set.count() {
                return Err(Error::ShapeMismatch(format!(
                    "branch `{}` has {} channels, joint set has {}",
                    h.joint_set,
                    h.channels,
                    set.count()
                )));
            }
            match reference {
                None => reference = Some((h.height, h.width, h.geometry)),
                Some((height, width, geometry)) => {
                    if h.height != height || h.width != width || h.geometry != geometry {
                        return Err(Error::ShapeMismatch(format!(
                            "branch `{}` geometry differs from the other branches",
                            h.joint_set
                        )));
                    }
                }
            }
            if branches.insert(h.joint_set.clone(), (set, h)).is_some() {
                return Err(Error::InvalidValue("duplicate branch".into()));
            }
        }
        if branches.is_empty() {
            return Err(Error::InvalidValue("no branch outputs".into()));
        }
        Ok(BranchOutputs { branches })
    }

    pub fn get(&self, branch: &str) -> Result<&Heatmap> {
        self.branches
            .get(branch)
            .map(|(_, h)| h)
            .ok_or_else(|| Error::MissingBranch(branch.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.branches.keys().map(String::as_str)
    }

    fn entry(&self, branch: &str) -> Result<&(JointSet, Heatmap)> {
        self.branches.get(branch).ok_or_else(|| Error::MissingBranch(branch.to_string()))
    }
}

/// Head top and head bottom estimated from the nose and shoulders.
///
/// Returns missing keypoints when any of the three joints is unavailable.
pub fn interpolate_head(pose: &DecodedPose, coef: &HeadInterpolation) -> Result<(Keypoint, Keypoint)> {
    let set = builtin_joint_set(&pose.joint_set)?;
    let find = |name: &str| {
        set.index_of(name)
            .and_then(|i| pose.keypoints.get(i))
            .filter(|k| k.annotated)
            .copied()
    };
    let (Some(nose), Some(ls), Some(rs)) = (find("nose"), find("left_shoulder"), find("right_shoulder")) else {
        return Ok((Keypoint::missing(), Keypoint::missing()));
    };
    let (mx, my) = ((ls.x + rs.x) / 2.0, (ls.y + rs.y) / 2.0);
    let (ax, ay) = (nose.x - mx, nose.y - my);
    let score = (nose.score + ls.score + rs.score) / 3.0;
    let top = Keypoint::new(nose.x + coef.top * ax, nose.y + coef.top * ay, score);
    let bottom = Keypoint::new(mx + coef.bottom * ax, my + coef.bottom * ay, score);
    Ok((top, bottom))
}

fn is_head(joint: &str) -> bool {
    HEAD_JOINTS.contains(&canonical(joint))
}

/// Decodes one branch and projects it into `target_set`, interpolating head joints the branch lacks.
pub fn fuse_select(
    b: &BranchOutputs,
    branch: &str,
    target_set: &str,
    decode_opts: &DecodeOptions,
    head: &HeadInterpolation,
) -> Result<DecodedPose> {
    let (set, heatmap) = b.entry(branch)?;
    let target = builtin_joint_set(target_set)?;
    let pose = decode(heatmap, decode_opts.smooth_sigma, decode_opts.quarter_offset)?;
    let mut keypoints = JointMapping::between(set, &target).project_keypoints(&pose.keypoints)?;
    let lacking: Vec<usize> = (0..target.count())
        .filter(|&j| is_head(&target.joints[j]) && set.index_of(&target.joints[j]).is_none())
        .collect();
    if !lacking.is_empty() {
        let (top, bottom) = interpolate_head(&pose, head)?;
        for j in lacking {
            keypoints[j] = if canonical(&target.joints[j]) == "head_top" { top } else { bottom };
        }
    }
    Ok(DecodedPose {
        joint_set: target.name,
        keypoints,
    })
}

/// Body and face joints from `body_branch`, head joints from `head_branch`.
pub fn fuse_head_swap(
    b: &BranchOutputs,
    body_branch: &str,
    head_branch: &str,
    target_set: &str,
    decode_opts: &DecodeOptions,
    head: &HeadInterpolation,
) -> Result<DecodedPose> {
    let (head_set, head_map) = b.entry(head_branch)?;
    if head_set.index_of("head_top").is_none() {
        return Err(Error::NoHeadJoints(head_branch.to_string()));
    }
    let mut pose = fuse_select(b, body_branch, target_set, decode_opts, head)?;
    let target = builtin_joint_set(target_set)?;
    let head_pose = decode(head_map, decode_opts.smooth_sigma, decode_opts.quarter_offset)?;
    for (j, name) in target.joints.iter().enumerate() {
        if !is_head(name) {
            continue;
        }
        if let Some(i) = head_set.index_of(name) {
            pose.keypoints[j] = head_pose.keypoints[i];
        }
    }
    Ok(pose)
}

/// Averages, per target joint, the channels of every branch that has the joint, then decodes.
pub fn fuse_vote(b: &BranchOutputs, target_set: &str, decode_opts: &DecodeOptions) -> Result<DecodedPose> {
    let target = builtin_joint_set(target_set)?;
    let (_, first) = b.branches.values().next().expect("at least one branch");
    let (height, width, geometry) = (first.height, first.width, first.geometry);
    let plane = height * width;
    let mut keypoints = Vec::with_capacity(target.count());
    for name in &target.joints {
        let sources: Vec<&[f32]> = b
            .branches
            .values()
            .filter_map(|(set, h)| set.index_of(name).map(|i| h.channel(i)))
            .collect();
        if sources.is_empty() {
            keypoints.push(Keypoint::missing());
            continue;
        }
        let n = sources.len() as f64;
        let mean: Vec<f32> = (0..plane)
            .map(|p| (sources.iter().map(|c| c[p] as f64).sum::<f64>() / n) as f32)
            .collect();
        keypoints.push(decode_channel(
            &mean,
            height,
            width,
            &geometry,
            decode_opts.smooth_sigma,
            decode_opts.quarter_offset,
        ));
    }
    Ok(DecodedPose {
        joint_set: target.name,
        keypoints,
    })
}

/// Dispatches on a [`FusionStrategy`].
pub fn fuse(
    b: &BranchOutputs,
    strategy: &FusionStrategy,
    target_set: &str,
    decode_opts: &DecodeOptions,
    head: &HeadInterpolation,
) -> Result<DecodedPose> {
    match strategy {
        FusionStrategy::Select { branch } => fuse_select(b, branch, target_set, decode_opts, head),
        FusionStrategy::HeadSwap { body, head: head_branch } => {
            fuse_head_swap(b, body, head_branch, target_set, decode_opts, head)
        }
        FusionStrategy::Vote => fuse_vote(b, target_set, decode_opts),
    }
}
