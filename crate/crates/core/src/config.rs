//! Pipeline configuration.
//!
//! Every field has a default, so a config file lists only the knobs it
//! changes; `{}` is the default pipeline. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{DecodeOptions, FusionStrategy, HeadInterpolation};
use crate::metrics::EvalConfig;
use crate::skeleton::{builtin_joint_set, POSETRACK};
use crate::suppression::{OksConstants, DEFAULT_EXTRA_SIGMA};
use crate::tracker::{Matcher, PropagatorKind, TrackerConfig};

/// One switch per post-processing ablation; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    /// Smooth heatmaps before taking the argmax.
    pub gaussian_filter: bool,
    pub quarter_offset: bool,
    /// Average with the un-mirrored output of the flipped crop when present.
    pub flip_test: bool,
    /// Instance score := box score x mean keypoint score.
    pub rescore: bool,
    pub box_threshold: bool,
    pub keypoint_threshold: bool,
    pub oks_nms: bool,
    /// Assign track ids across frames.
    pub track: bool,
    /// Drop tracks shorter than `min_len` frames.
    pub tracklet_pruning: bool,
    /// Constant-velocity propagation; identity propagation when off.
    pub flow_track: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            gaussian_filter: true,
            quarter_offset: true,
            flip_test: true,
            rescore: true,
            box_threshold: true,
            keypoint_threshold: true,
            oks_nms: true,
            track: true,
            tracklet_pruning: true,
            flow_track: true,
        }
    }
}

impl Stages {
    pub const NAMES: [&'static str; 10] = [
        "gaussian_filter",
        "quarter_offset",
        "flip_test",
        "rescore",
        "box_threshold",
        "keypoint_threshold",
        "oks_nms",
        "track",
        "tracklet_pruning",
        "flow_track",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "gaussian_filter" => &mut self.gaussian_filter,
            "quarter_offset" => &mut self.quarter_offset,
            "flip_test" => &mut self.flip_test,
            "rescore" => &mut self.rescore,
            "box_threshold" => &mut self.box_threshold,
            "keypoint_threshold" => &mut self.keypoint_threshold,
            "oks_nms" => &mut self.oks_nms,
            "track" => &mut self.track,
            "tracklet_pruning" => &mut self.tracklet_pruning,
            "flow_track" => &mut self.flow_track,
            _ => return None,
        })
    }

    /// Turns the named stage off.
    pub fn disable(&mut self, name: &str) -> Result<()> {
        let slot = self
            .slot(name)
            .ok_or_else(|| Error::InvalidValue(format!("unknown stage `{name}`; known: {}", Self::NAMES.join(", "))))?;
        *slot = false;
        Ok(())
    }

    /// Only decoding stays on.
    pub fn decode_only() -> Self {
        Stages {
            gaussian_filter: false,
            quarter_offset: false,
            flip_test: false,
            rescore: false,
            box_threshold: false,
            keypoint_threshold: false,
            oks_nms: false,
            track: false,
            tracklet_pruning: false,
            flow_track: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Target Gaussian sigma in input pixels.
    pub sigma: f64,
    /// Input pixels per heatmap cell; `sigma / heatmap_stride` is the sigma in cells.
    pub heatmap_stride: f64,
    /// Smoothing sigma in cells used when `gaussian_filter` is on.
    pub smooth_sigma: f64,
    /// Joint set of the emitted poses.
    pub output_joint_set: String,
    pub fusion: FusionStrategy,
    pub head_interpolation: HeadInterpolation,
    /// Columns the un-mirrored flipped map is shifted.
    pub flip_shift: usize,
    pub box_threshold: f64,
    pub keypoint_threshold: f64,
    pub oks_nms_threshold: f64,
    pub box_nms_threshold: f64,
    /// OKS fall-off constant for joints outside the COCO set.
    pub extra_sigma: f64,
    pub ohkm_k: usize,
    pub sim_threshold: f64,
    pub lookback: u64,
    pub min_len: usize,
    pub matcher: Matcher,
    pub eval: EvalConfig,
    pub stages: Stages,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sigma: 9.0,
            heatmap_stride: 4.0,
            smooth_sigma: 1.0,
            output_joint_set: POSETRACK.to_string(),
            fusion: FusionStrategy::Vote,
            head_interpolation: HeadInterpolation::default(),
            flip_shift: crate::heatmap::DEFAULT_FLIP_SHIFT,
            box_threshold: 0.4,
            keypoint_threshold: 0.3,
            oks_nms_threshold: 0.4,
            box_nms_threshold: 0.6,
            extra_sigma: DEFAULT_EXTRA_SIGMA,
            ohkm_k: 8,
            sim_threshold: 0.3,
            lookback: 8,
            min_len: 2,
            matcher: Matcher::Hungarian,
            eval: EvalConfig::default(),
            stages: Stages::default(),
        }
    }
}

fn unit_interval(name: &str, v: f64, open_low: bool) -> Result<()> {
    let ok = if open_low { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("{name} = {v} is out of range")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        builtin_joint_set(&self.output_joint_set)?;
        for (name, v) in [("sigma", self.sigma), ("heatmap_stride", self.heatmap_stride), ("extra_sigma", self.extra_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidValue(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.smooth_sigma >= 0.0 && self.smooth_sigma.is_finite()) {
            return Err(Error::InvalidValue(format!("smooth_sigma must be >= 0, got {}", self.smooth_sigma)));
        }
        unit_interval("box_threshold", self.box_threshold, false)?;
        unit_interval("keypoint_threshold", self.keypoint_threshold, false)?;
        unit_interval("sim_threshold", self.sim_threshold, false)?;
        unit_interval("oks_nms_threshold", self.oks_nms_threshold, true)?;
        unit_interval("box_nms_threshold", self.box_nms_threshold, true)?;
        if self.ohkm_k == 0 {
            return Err(Error::InvalidValue("ohkm_k must be >= 1".into()));
        }
        if !(self.eval.pckh_threshold > 0.0) {
            return Err(Error::InvalidValue("eval.pckh_threshold must be positive".into()));
        }
        Ok(())
    }

    /// Target sigma in heatmap cells.
    pub fn heatmap_sigma(&self) -> f64 {
        self.sigma / self.heatmap_stride
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            smooth_sigma: if self.stages.gaussian_filter { self.smooth_sigma } else { 0.0 },
            quarter_offset: self.stages.quarter_offset,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            sim_threshold: self.sim_threshold,
            lookback: self.lookback,
            matcher: self.matcher,
            propagator: if self.stages.flow_track {
                PropagatorKind::Velocity
            } else {
                PropagatorKind::Identity
            },
            min_len: if self.stages.tracklet_pruning { self.min_len } else { 1 },
        }
    }

    pub fn oks_constants(&self) -> Result<OksConstants> {
        Ok(OksConstants::with_extra_sigma(&builtin_joint_set(&self.output_joint_set)?, self.extra_sigma))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))?;
        PipelineConfig::from_json(&text).map_err(|e| e.in_file(path.display().to_string()))
    }
}
