//! The end-to-end sequence pipeline.
//!
//! Stages run in a fixed order, each behind its [`Stages`](crate::config::Stages) flag:
//! decode and fuse, rescore, thresholds, OKS-NMS, track, track-let pruning.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse, BranchOutputs};
use crate::heatmap::{flip_merge_with_shift, Heatmap};
use crate::instance::PersonInstance;
use crate::io::{DetectionEntry, PoseFile, SequenceManifest};
use crate::metrics::PredictionFrame;
use crate::skeleton::builtin_joint_set;
use crate::suppression::{apply_thresholds, oks_nms, rescore};
use crate::tracker::TrackerState;

pub const STAGE_ORDER: [&str; 6] = ["decode", "rescore", "thresholds", "oks_nms", "track", "prune"];

/// Instances leaving one stage, summed over frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLog {
    pub stage: &'static str,
    pub enabled: bool,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub poses: PoseFile,
    pub log: Vec<StageLog>,
}

fn located(e: Error, path: &Path, frame: u64, detection: usize) -> Error {
    let message = match e {
        Error::File { message, .. } => message,
        other => other.to_string(),
    };
    Error::File {
        path: path.display().to_string(),
        message: format!("frame {frame}, detection {detection}: {message}"),
    }
}

fn load_branch(base: &Path, rel: &Path, frame: u64, detection: usize) -> Result<Heatmap> {
    let path = base.join(rel);
    Heatmap::load(&path).map_err(|e| located(e, &path, frame, detection))
}

/// Loads, flip-merges, fuses and decodes one detection into the output joint set.
pub fn decode_detection(
    config: &PipelineConfig,
    det: &DetectionEntry,
    base: &Path,
    frame: u64,
    index: usize,
) -> Result<PersonInstance> {
    let mut heatmaps = Vec::with_capacity(det.heatmaps.len());
    for (branch, rel) in &det.heatmaps {
        let mut h = load_branch(base, rel, frame, index)?;
        let where_ = |e: Error| located(e, &base.join(rel), frame, index);
        if h.joint_set != *branch {
            return Err(where_(Error::JointSetMismatch {
                expected: branch.clone(),
                found: h.joint_set.clone(),
            }));
        }
        if config.stages.flip_test {
            if let Some(flip_rel) = det.flipped.get(branch) {
                let flipped = load_branch(base, flip_rel, frame, index)?;
                let set = builtin_joint_set(branch).map_err(where_)?;
                h = flip_merge_with_shift(&h, &flipped, &set.flip_pairs, config.flip_shift)
                    .map_err(|e| located(e, &base.join(flip_rel), frame, index))?;
            }
        }
        heatmaps.push(h);
    }
    let outputs = BranchOutputs::new(heatmaps).map_err(|e| located(e, base, frame, index))?;
    let pose = fuse(
        &outputs,
        &config.fusion,
        &config.output_joint_set,
        &config.decode_options(),
        &config.head_interpolation,
    )
    .map_err(|e| located(e, base, frame, index))?;
    Ok(PersonInstance::new(pose.joint_set, det.bbox, det.box_score, pose.keypoints))
}

/// Rescore, thresholds and OKS-NMS on one frame; kept instances come out in score order.
pub fn postprocess_frame(config: &PipelineConfig, instances: Vec<PersonInstance>) -> Result<Vec<PersonInstance>> {
    postprocess_logged(config, instances, &mut [0; 3])
}

fn postprocess_logged(
    config: &PipelineConfig,
    instances: Vec<PersonInstance>,
    counts: &mut [usize; 3],
) -> Result<Vec<PersonInstance>> {
    let s = config.stages;
    let scored: Vec<PersonInstance> = if s.rescore {
        instances.iter().map(rescore).collect()
    } else {
        instances
    };
    counts[0] += scored.len();
    let filtered = apply_thresholds(
        &scored,
        if s.box_threshold { config.box_threshold } else { 0.0 },
        if s.keypoint_threshold { config.keypoint_threshold } else { 0.0 },
    );
    counts[1] += filtered.len();
    let kept = if s.oks_nms {
        let consts = config.oks_constants()?;
        let keep = oks_nms(&filtered, config.oks_nms_threshold, &consts)?;
        keep.into_iter().map(|i| filtered[i].clone()).collect()
    } else {
        filtered
    };
    counts[2] += kept.len();
    Ok(kept)
}

/// Assigns track ids frame by frame, then drops instances of tracks shorter than the
/// configured minimum length.
pub fn track_frames(config: &PipelineConfig, frames: &mut Vec<PredictionFrame>) -> Result<()> {
    let tracker_config = config.tracker_config();
    let mut state = TrackerState::new(tracker_config, config.oks_constants()?);
    for f in frames.iter_mut() {
        let ids = state.step(f.frame, &f.instances)?;
        for (p, id) in f.instances.iter_mut().zip(ids) {
            p.track_id = Some(id);
        }
    }
    let surviving: BTreeSet<u64> = state.finalize(tracker_config.min_len).iter().map(|t| t.id).collect();
    for f in frames.iter_mut() {
        f.instances.retain(|p| p.track_id.is_some_and(|id| surviving.contains(&id)));
    }
    Ok(())
}

/// Runs the whole pipeline on a manifest whose heatmap paths are relative to `base`.
pub fn run_pipeline(config: &PipelineConfig, manifest: &SequenceManifest, base: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    manifest.validate()?;
    let s = config.stages;
    let mut decoded = 0;
    let mut counts = [0usize; 3];
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for f in &manifest.frames {
        let instances = f
            .detections
            .iter()
            .enumerate()
            .map(|(i, det)| decode_detection(config, det, base, f.frame_index, i))
            .collect::<Result<Vec<_>>>()?;
        decoded += instances.len();
        let kept = postprocess_logged(config, instances, &mut counts)?;
        frames.push(PredictionFrame {
            frame: f.frame_index,
            instances: kept,
        });
    }
    let mut tracked = counts[2];
    if s.track {
        track_frames(config, &mut frames)?;
        tracked = frames.iter().map(|f| f.instances.len()).sum();
    }
    let log = vec![
        StageLog { stage: STAGE_ORDER[0], enabled: true, instances: decoded },
        StageLog { stage: STAGE_ORDER[1], enabled: s.rescore, instances: counts[0] },
        StageLog {
            stage: STAGE_ORDER[2],
            enabled: s.box_threshold || s.keypoint_threshold,
            instances: counts[1],
        },
        StageLog { stage: STAGE_ORDER[3], enabled: s.oks_nms, instances: counts[2] },
        StageLog { stage: STAGE_ORDER[4], enabled: s.track, instances: counts[2] },
        StageLog {
            stage: STAGE_ORDER[5],
            enabled: s.track && s.tracklet_pruning,
            instances: tracked,
        },
    ];
    Ok(PipelineOutput {
        poses: PoseFile::from_frames(&config.output_joint_set, &frames),
        log,
    })
}
