//! Synthetic video sequences: moving stick figures, ground truth, and the
//! per-branch heatmaps a multi-domain network would produce for each detection.
//!
//! Besides the tracked persons the generator plants the cases the
//! post-processing stages exist for: a duplicated detection, a one-frame
//! spurious person, joints whose only response is a weak blob at a wrong
//! location, and a low-scoring background detection.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{mirror, render_target, Geometry, Heatmap, DEFAULT_FLIP_SHIFT};
use crate::instance::BBox;
use crate::io::{BoxFile, BoxFrame, BoxRecord, DetectionEntry, GroundTruthFile, GtFrame, GtRecord, ManifestFrame, SequenceManifest};
use crate::skeleton::{builtin_joint_set, JointSet, COCO, MERGED, MPII, POSETRACK};
use crate::train::latent_pose;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GT_FILE: &str = "gt.json";
pub const BOXES_FILE: &str = "boxes.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Injections {
    pub duplicate: bool,
    pub spurious: bool,
    pub wrong_joints: bool,
    pub low_box: bool,
    /// Peak of the misplaced blobs; below the default keypoint threshold.
    pub wrong_joint_score: f64,
}

impl Default for Injections {
    fn default() -> Self {
        Injections {
            duplicate: true,
            spurious: true,
            wrong_joints: true,
            low_box: true,
            wrong_joint_score: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub persons: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Gaussian sigma of the rendered responses, in cells.
    pub sigma: f64,
    pub branches: Vec<String>,
    pub flipped: bool,
    pub ground_truth_set: String,
    pub seed: u64,
    pub inject: Injections,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 12,
            persons: 3,
            image_width: 640.0,
            image_height: 480.0,
            grid_height: 32,
            grid_width: 24,
            sigma: 9.0 / 4.0,
            branches: vec![COCO.into(), MPII.into(), POSETRACK.into()],
            flipped: true,
            ground_truth_set: POSETRACK.into(),
            seed: 7,
            inject: Injections::default(),
        }
    }
}

/// A generated sequence held in memory; [`SyntheticSequence::write`] lays it out on disk.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub manifest: SequenceManifest,
    pub ground_truth: GroundTruthFile,
    pub boxes: BoxFile,
    /// Heatmaps keyed by their path relative to the sequence directory.
    pub heatmaps: Vec<(PathBuf, Heatmap)>,
}

impl SyntheticSequence {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io_err = |e: std::io::Error, p: &Path| Error::from(e).in_file(p.display().to_string());
        for (rel, h) in &self.heatmaps {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(e, parent))?;
            }
            h.save(&path)?;
        }
        self.manifest.save(&dir.join(MANIFEST_FILE))?;
        self.ground_truth.save(&dir.join(GT_FILE))?;
        self.boxes.save(&dir.join(BOXES_FILE))
    }
}

/// Scale from the latent canvas to image pixels.
const BODY_SCALE: f64 = 5.0;
const LATENT_H: usize = 32;
const LATENT_W: usize = 24;

fn place(latent: &[(f64, f64)], dx: f64, dy: f64) -> Vec<(f64, f64)> {
    latent.iter().map(|&(x, y)| (x * BODY_SCALE + dx, y * BODY_SCALE + dy)).collect()
}

fn tight_box(points: &[(f64, f64)], pad: f64) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    BBox::new(x0 - pad * w, y0 - pad * h, w * (1.0 + 2.0 * pad), h * (1.0 + 2.0 * pad))
}

/// A joint whose only response is a weak blob somewhere else.
#[derive(Debug, Clone, Copy)]
struct Misplaced {
    joint: usize,
    at: (f64, f64),
}

struct Renderer<'a> {
    cfg: &'a SynthConfig,
    merged: JointSet,
    sets: Vec<JointSet>,
}

impl Renderer<'_> {
    /// Heatmaps of every branch for one detection of a person with merged-set joints `pose`.
    fn render(
        &self,
        rng: &mut ChaCha8Rng,
        pose: &[(f64, f64)],
        bbox: BBox,
        misplaced: &[Misplaced],
        wrong_score: f64,
    ) -> Result<Vec<Heatmap>> {
        let (h, w) = (self.cfg.grid_height, self.cfg.grid_width);
        let geometry = Geometry::for_crop(bbox, h, w);
        let jitter = Normal::new(0.0, 0.15).expect("valid jitter");
        let mut out = Vec::with_capacity(self.sets.len());
        for set in &self.sets {
            let mut joints = Vec::with_capacity(set.count());
            let mut scale = Vec::with_capacity(set.count());
            for name in &set.joints {
                let m = self.merged.index_of(name).expect("builtin joints are in the merged set");
                let wrong = misplaced.iter().find(|w| w.joint == m);
                let (x, y) = wrong.map_or(pose[m], |w| w.at);
                let (gx, gy) = geometry.to_grid(x, y);
                joints.push(Some((gx + jitter.sample(rng), gy + jitter.sample(rng))));
                scale.push(if wrong.is_some() { wrong_score } else { rng.random_range(0.7..1.0) });
            }
            let mut heatmap = render_target(&set.name, &joints, self.cfg.sigma, h, w)?.heatmap;
            heatmap.geometry = geometry;
            for (k, s) in scale.into_iter().enumerate() {
                heatmap.scale_channel(k, s as f32);
            }
            out.push(heatmap);
        }
        Ok(out)
    }
}

struct Person {
    latent: Vec<(f64, f64)>,
    origin: (f64, f64),
    velocity: (f64, f64),
}

/// Generates a sequence; deterministic in `cfg.seed`.
pub fn synth_sequence(cfg: &SynthConfig) -> Result<SyntheticSequence> {
    if cfg.frames == 0 || cfg.persons == 0 {
        return Err(Error::InvalidValue("synthetic sequences need at least one frame and one person".into()));
    }
    if cfg.grid_height < 3 || cfg.grid_width < 3 || !(cfg.sigma > 0.0) {
        return Err(Error::InvalidValue("grid must be at least 3x3 with a positive sigma".into()));
    }
    let gt_set = builtin_joint_set(&cfg.ground_truth_set)?;
    let renderer = Renderer {
        cfg,
        merged: builtin_joint_set(MERGED)?,
        sets: cfg.branches.iter().map(|b| builtin_joint_set(b)).collect::<Result<_>>()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lane = cfg.image_width / cfg.persons as f64;
    let persons: Vec<Person> = (0..cfg.persons)
        .map(|p| Person {
            latent: latent_pose(&mut rng, LATENT_H, LATENT_W),
            origin: (p as f64 * lane + (lane - LATENT_W as f64 * BODY_SCALE) / 2.0, 10.0),
            velocity: (rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5)),
        })
        .collect();
    let body_jitter = Normal::new(0.0, 1.0).expect("valid jitter");
    let lower = cfg.image_height - LATENT_H as f64 * BODY_SCALE - 10.0;

    let n = cfg.frames;
    let duplicate_at = (cfg.inject.duplicate && n > 2).then_some(2);
    let spurious_at = cfg.inject.spurious.then_some(n / 2);
    let low_box_at = (cfg.inject.low_box && n > 3).then_some(3);
    let wrong_person = 1 % cfg.persons;

    let mut sequence = SyntheticSequence {
        manifest: SequenceManifest { frames: Vec::new() },
        ground_truth: GroundTruthFile {
            joint_set: gt_set.name.clone(),
            frames: Vec::new(),
        },
        boxes: BoxFile { frames: Vec::new() },
        heatmaps: Vec::new(),
    };

    for t in 0..n {
        let frame_index = t as u64;
        let mut detections = Vec::new();
        let mut gt_persons = Vec::new();
        // (pose, box, box score, misplaced joints)
        let mut planned: Vec<(Vec<(f64, f64)>, BBox, f64, Vec<Misplaced>)> = Vec::new();

        for (p, person) in persons.iter().enumerate() {
            let mut pose = place(
                &person.latent,
                person.origin.0 + person.velocity.0 * t as f64,
                person.origin.1 + person.velocity.1 * t as f64,
            );
            for j in pose.iter_mut() {
                j.0 += body_jitter.sample(&mut rng);
                j.1 += body_jitter.sample(&mut rng);
            }
            let bbox = tight_box(&pose, 0.1);
            let score = rng.random_range(0.85..0.99);
            let misplaced = if cfg.inject.wrong_joints && p == wrong_person && t % 3 == 1 {
                ["left_wrist", "right_ankle"]
                    .iter()
                    .map(|name| {
                        let joint = renderer.merged.index_of(name).expect("merged joint");
                        let (x, y) = pose[joint];
                        Misplaced {
                            joint,
                            at: (2.0 * (bbox.x + bbox.w / 2.0) - x, y - 0.3 * bbox.h),
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };

            let head = |name: &str| pose[renderer.merged.index_of(name).expect("merged joint")];
            let (top, neck) = (head("head_top"), head("upper_neck"));
            let side = 1.2 * ((top.0 - neck.0).hypot(top.1 - neck.1));
            let centre = ((top.0 + neck.0) / 2.0, (top.1 + neck.1) / 2.0);
            let mut keypoints = Vec::with_capacity(3 * gt_set.count());
            for name in &gt_set.joints {
                let (x, y) = head(name);
                keypoints.extend([x, y, 1.0]);
            }
            gt_persons.push(GtRecord {
                person_id: p as u64,
                head_box: Some(BBox::new(centre.0 - side / 2.0, centre.1 - side / 2.0, side, side)),
                head_size: None,
                keypoints,
                annotated: vec![true; gt_set.count()],
            });
            planned.push((pose, bbox, score, misplaced));
        }

        let background = |rng: &mut ChaCha8Rng, x: f64| {
            let latent = latent_pose(rng, LATENT_H, LATENT_W);
            let pose = place(&latent, x, lower);
            let bbox = tight_box(&pose, 0.1);
            (pose, bbox)
        };
        if spurious_at == Some(t) {
            let (pose, bbox) = background(&mut rng, 0.15 * cfg.image_width);
            planned.push((pose, bbox, 0.95, Vec::new()));
        }
        if low_box_at == Some(t) {
            let (pose, bbox) = background(&mut rng, 0.6 * cfg.image_width);
            planned.push((pose, bbox, 0.3, Vec::new()));
        }

        for (d, (pose, bbox, score, misplaced)) in planned.iter().enumerate() {
            let maps = renderer.render(&mut rng, pose, *bbox, misplaced, cfg.inject.wrong_joint_score)?;
            let mut entry = DetectionEntry {
                bbox: *bbox,
                box_score: *score,
                heatmaps: Default::default(),
                flipped: Default::default(),
            };
            for (set, h) in renderer.sets.iter().zip(maps) {
                let rel = PathBuf::from(format!("heatmaps/f{t:03}_d{d:02}_{}.pkhm", set.name));
                if cfg.flipped {
                    let flip_rel = PathBuf::from(format!("heatmaps/f{t:03}_d{d:02}_{}_flip.pkhm", set.name));
                    sequence.heatmaps.push((flip_rel.clone(), mirror(&h, &set.flip_pairs, DEFAULT_FLIP_SHIFT)));
                    entry.flipped.insert(set.name.clone(), flip_rel);
                }
                entry.heatmaps.insert(set.name.clone(), rel.clone());
                sequence.heatmaps.push((rel, h));
            }
            detections.push(entry);
        }
        if duplicate_at == Some(t) {
            let mut dup = detections[0].clone();
            dup.bbox.x += 2.0;
            dup.box_score *= 0.9;
            detections.push(dup);
        }

        sequence.boxes.frames.push(BoxFrame {
            frame_index,
            boxes: detections
                .iter()
                .map(|d| BoxRecord {
                    bbox: d.bbox,
                    score: d.box_score,
                })
                .collect(),
        });
        sequence.manifest.frames.push(ManifestFrame { frame_index, detections });
        sequence.ground_truth.frames.push(GtFrame {
            frame_index,
            persons: gt_persons,
        });
    }
    Ok(sequence)
}
