use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::ToyConfig;
use crate::error::{Error, Result};
use crate::heatmap::{render_target, Heatmap};
use crate::skeleton::{builtin_joint_set, JointMapping, MERGED};

/// Rendering and annotation style of one synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub joint_set: String,
    #[serde(default = "one")]
    pub contrast: f64,
    #[serde(default)]
    pub noise: f64,
    /// Systematic annotation shift `[dx, dy]` in grid cells.
    #[serde(default)]
    pub offset: [f64; 2],
    /// When set, samples come from this many clips, each repeating one base
    /// pose and one appearance with small per-frame jitter.
    #[serde(default)]
    pub videos: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl DomainSpec {
    pub fn new(name: &str, joint_set: &str, contrast: f64, noise: f64, offset: [f64; 2]) -> Self {
        DomainSpec {
            name: name.into(),
            joint_set: joint_set.into(),
            contrast,
            noise,
            offset,
            videos: None,
        }
    }

    pub fn with_videos(mut self, videos: usize) -> Self {
        self.videos = Some(videos);
        self
    }
}

/// One training example routed to the head named `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub domain: String,
    pub input: Vec<f64>,
    pub target: Heatmap,
    pub mask: Vec<bool>,
    /// Annotated joint positions in grid coordinates.
    pub keypoints: Vec<Option<(f64, f64)>>,
}

impl Sample {
    /// Re-expresses the sample in the merged joint set for the head `head`.
    pub fn to_merged(&self, head: &str, config: &ToyConfig) -> Result<Sample> {
        let from = builtin_joint_set(&self.target.joint_set)?;
        let merged = builtin_joint_set(MERGED)?;
        let m = JointMapping::between(&from, &merged);
        let mut keypoints = vec![None; merged.count()];
        for &(i, j) in &m.index_map {
            keypoints[j] = self.keypoints[i];
        }
        let rendered = render_target(MERGED, &keypoints, config.target_sigma, config.height, config.width)?;
        Ok(Sample {
            domain: head.to_string(),
            input: self.input.clone(),
            target: rendered.heatmap,
            mask: rendered.mask,
            keypoints,
        })
    }
}

const LIMBS: [(&str, &str); 20] = [
    ("pelvis", "thorax"),
    ("thorax", "upper_neck"),
    ("upper_neck", "head_top"),
    ("upper_neck", "nose"),
    ("nose", "left_eye"),
    ("nose", "right_eye"),
    ("left_eye", "left_ear"),
    ("right_eye", "right_ear"),
    ("thorax", "left_shoulder"),
    ("thorax", "right_shoulder"),
    ("left_shoulder", "left_elbow"),
    ("left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
    ("pelvis", "left_hip"),
    ("pelvis", "right_hip"),
    ("left_hip", "left_knee"),
    ("left_knee", "left_ankle"),
    ("right_hip", "right_knee"),
    ("right_knee", "right_ankle"),
];

fn at(origin: (f64, f64), angle: f64, len: f64) -> (f64, f64) {
    (origin.0 + len * angle.cos(), origin.1 + len * angle.sin())
}

/// A random upright stick figure over the merged joint set, in grid coordinates.
pub fn latent_pose(rng: &mut impl Rng, height: usize, width: usize) -> Vec<(f64, f64)> {
    use std::f64::consts::FRAC_PI_2;
    let merged = builtin_joint_set(MERGED).expect("builtin set");
    let s = height as f64 / 32.0 * rng.random_range(0.8..1.05);
    let pelvis = (
        width as f64 * rng.random_range(0.4..0.6),
        height as f64 * rng.random_range(0.5..0.6),
    );
    let up = -FRAC_PI_2 + rng.random_range(-0.25..0.25);
    let across = up + FRAC_PI_2;
    let thorax = at(pelvis, up, 7.0 * s);
    let neck = at(thorax, up, 2.0 * s);
    let head_top = at(neck, up + rng.random_range(-0.2..0.2), 4.5 * s);
    let nose = at(neck, up + rng.random_range(-0.3..0.3), 2.5 * s);
    let mut pos = vec![(0.0, 0.0); merged.count()];
    let mut put = |name: &str, p: (f64, f64)| pos[merged.index_of(name).expect("merged joint")] = p;
    put("pelvis", pelvis);
    put("thorax", thorax);
    put("upper_neck", neck);
    put("head_top", head_top);
    put("nose", nose);
    for (side, sign) in [("left", 1.0), ("right", -1.0)] {
        let eye = at(at(nose, up, 0.8 * s), across, sign * 0.9 * s);
        put(&format!("{side}_eye"), eye);
        put(&format!("{side}_ear"), at(eye, across, sign * 1.2 * s));
        let shoulder = at(thorax, across, sign * 3.0 * s);
        let elbow = at(shoulder, FRAC_PI_2 - sign * rng.random_range(0.1..1.4), 3.5 * s);
        let wrist = at(elbow, FRAC_PI_2 - sign * rng.random_range(-0.6..1.6), 3.0 * s);
        put(&format!("{side}_shoulder"), shoulder);
        put(&format!("{side}_elbow"), elbow);
        put(&format!("{side}_wrist"), wrist);
        let hip = at(pelvis, across, sign * 2.0 * s);
        let knee = at(hip, FRAC_PI_2 - sign * rng.random_range(-0.2..0.5), 5.0 * s);
        let ankle = at(knee, FRAC_PI_2 + rng.random_range(-0.4..0.4), 5.0 * s);
        put(&format!("{side}_hip"), hip);
        put(&format!("{side}_knee"), knee);
        put(&format!("{side}_ankle"), ankle);
    }
    pos
}

/// Intensity code of merged joint `j` in input channel `c`: the joint index
/// written in base `L`, one digit per channel, with `L^channels >= joints`.
fn joint_code(j: usize, c: usize, channels: usize, joints: usize) -> f64 {
    let mut levels = 2usize;
    while levels.pow(channels as u32) < joints {
        levels += 1;
    }
    let digit = (j / levels.pow(c as u32)) % levels;
    0.3 + 0.7 * digit as f64 / (levels - 1) as f64
}

/// Per-image rendering variation on top of the domain constants.
#[derive(Debug, Clone, Copy)]
struct Appearance {
    gain: f64,
    bias: f64,
    blob_sigma: f64,
}

impl Appearance {
    fn random(rng: &mut impl Rng) -> Self {
        Appearance {
            gain: rng.random_range(0.6..1.4),
            bias: rng.random_range(-0.15..0.15),
            blob_sigma: rng.random_range(0.55..0.9),
        }
    }
}

/// Renders blobs at joints and faint limb segments, then scales and adds noise.
fn render_input(
    pose: &[(f64, f64)],
    spec: &DomainSpec,
    look: &Appearance,
    config: &ToyConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let (h, w) = (config.height, config.width);
    let merged = builtin_joint_set(MERGED).expect("builtin set");
    let plane = h * w;
    let mut input = vec![0.0; config.input_len()];
    let blob = 2.0 * look.blob_sigma.powi(2);
    let line = 2.0 * 0.5f64.powi(2);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            let mut limb = 0.0f64;
            for (a, b) in LIMBS {
                let pa = pose[merged.index_of(a).expect("merged joint")];
                let pb = pose[merged.index_of(b).expect("merged joint")];
                let (vx, vy) = (pb.0 - pa.0, pb.1 - pa.1);
                let len2 = (vx * vx + vy * vy).max(1e-12);
                let t = (((px - pa.0) * vx + (py - pa.1) * vy) / len2).clamp(0.0, 1.0);
                let (dx, dy) = (px - pa.0 - t * vx, py - pa.1 - t * vy);
                limb = limb.max((-(dx * dx + dy * dy) / line).exp());
            }
            for c in 0..config.in_channels {
                let mut v = 0.25 * limb;
                for (j, p) in pose.iter().enumerate() {
                    let d2 = (px - p.0).powi(2) + (py - p.1).powi(2);
                    v = v.max(joint_code(j, c, config.in_channels, pose.len()) * (-d2 / blob).exp());
                }
                input[c * plane + y * w + x] = v;
            }
        }
    }
    let gain = spec.contrast * look.gain;
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise level");
    for v in &mut input {
        *v = gain * *v + look.bias + if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
    }
    input
}

/// `n` deterministic samples of one domain. Poses come from one random
/// stream and rendering noise from another, so domains generated with the
/// same seed share their latent poses.
pub fn gen_synthetic(spec: &DomainSpec, config: &ToyConfig, n: usize, seed: u64) -> Result<Vec<Sample>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidValue("sample count must be at least 1".into()));
    }
    if !(spec.contrast.is_finite() && spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::InvalidValue(format!("domain `{}` has invalid rendering constants", spec.name)));
    }
    let set = builtin_joint_set(&spec.joint_set)?;
    let merged = builtin_joint_set(MERGED)?;
    let to_domain = JointMapping::between(&merged, &set);
    let mut pose_rng = ChaCha8Rng::seed_from_u64(seed);
    pose_rng.set_stream(0);
    let mut render_rng = ChaCha8Rng::seed_from_u64(seed);
    render_rng.set_stream(1);
    let per_video = spec.videos.map(|v| n.div_ceil(v.max(1)));
    let mut clip: Option<(Vec<(f64, f64)>, Appearance)> = None;
    (0..n)
        .map(|i| {
            let (pose, look) = match per_video {
                None => (
                    latent_pose(&mut pose_rng, config.height, config.width),
                    Appearance::random(&mut render_rng),
                ),
                Some(len) => {
                    if i % len == 0 {
                        clip = Some((
                            latent_pose(&mut pose_rng, config.height, config.width),
                            Appearance::random(&mut render_rng),
                        ));
                    }
                    let (base, look) = clip.clone().expect("clip starts at frame 0");
                    let jitter = Normal::new(0.0, 0.3).expect("valid jitter");
                    let (sx, sy) = (pose_rng.random_range(-1.0..1.0), pose_rng.random_range(-1.0..1.0));
                    let pose = base
                        .iter()
                        .map(|p| (p.0 + sx + jitter.sample(&mut pose_rng), p.1 + sy + jitter.sample(&mut pose_rng)))
                        .collect();
                    (pose, look)
                }
            };
            let input = render_input(&pose, spec, &look, config, &mut render_rng);
            let mut keypoints = vec![None; set.count()];
            for &(i, j) in &to_domain.index_map {
                keypoints[j] = Some((pose[i].0 + spec.offset[0], pose[i].1 + spec.offset[1]));
            }
            let rendered = render_target(&spec.joint_set, &keypoints, config.target_sigma, config.height, config.width)?;
            let keypoints = keypoints
                .into_iter()
                .zip(&rendered.mask)
                .map(|(k, &m)| k.filter(|_| m))
                .collect();
            Ok(Sample {
                domain: spec.name.clone(),
                input,
                target: rendered.heatmap,
                mask: rendered.mask,
                keypoints,
            })
        })
        .collect()
}
