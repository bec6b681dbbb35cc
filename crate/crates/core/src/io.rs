//! JSON interchange: pose files, ground truth, box files and sequence manifests.
//!
//! Canonical files are the pretty-printed form written by the `to_json`
//! methods followed by a newline; parsing and re-emitting a canonical file
//! reproduces it byte for byte.
//!
//! Schema violations reported as errors:
//! - unknown joint-set names
//! - keypoint arrays whose length is not `3 * K` (or annotation arrays not `K`)
//! - frame indices that are not strictly increasing
//! - non-finite coordinates or scores
//! - duplicate person ids within a ground-truth frame, or head sizes `<= 0`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{BBox, Keypoint, PersonInstance};
use crate::metrics::{GroundTruthFrame, GtPerson, PredictionFrame, HEAD_SIZE_FACTOR};
use crate::skeleton::builtin_joint_set;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("{what} must be finite")));
    }
    Ok(())
}

fn check_increasing(indices: impl Iterator<Item = u64>) -> Result<()> {
    let mut previous: Option<u64> = None;
    for frame in indices {
        if let Some(p) = previous {
            if frame <= p {
                return Err(Error::NonMonotoneFrame { frame, previous: p });
            }
        }
        previous = Some(frame);
    }
    Ok(())
}

fn unpack_keypoints(flat: &[f64], annotated: &[bool], k: usize, frame: u64) -> Result<Vec<Keypoint>> {
    if flat.len() != 3 * k || annotated.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "frame {frame}: {} keypoint values and {} annotation bits, expected {} and {k}",
            flat.len(),
            annotated.len(),
            3 * k
        )));
    }
    check_finite(flat, &format!("frame {frame}: keypoints"))?;
    Ok(flat
        .chunks_exact(3)
        .zip(annotated)
        .map(|(c, &a)| Keypoint {
            x: c[0],
            y: c[1],
            score: c[2],
            annotated: a,
        })
        .collect())
}

fn pack_keypoints(kps: &[Keypoint]) -> (Vec<f64>, Vec<bool>) {
    (
        kps.iter().flat_map(|k| [k.x, k.y, k.score]).collect(),
        kps.iter().map(|k| k.annotated).collect(),
    )
}

fn to_canonical<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path.display().to_string()))
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub box_score: f64,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    /// `[x, y, score]` per joint.
    pub keypoints: Vec<f64>,
    pub annotated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFrame {
    pub frame_index: u64,
    pub instances: Vec<PoseRecord>,
}

/// Per-sequence poses, PoseTrack-annotation shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub joint_set: String,
    pub frames: Vec<PoseFrame>,
}

impl PoseRecord {
    pub fn from_instance(p: &PersonInstance) -> Self {
        let (keypoints, annotated) = pack_keypoints(&p.keypoints);
        PoseRecord {
            bbox: p.bbox,
            box_score: p.box_score,
            score: p.score,
            track_id: p.track_id,
            area: p.area,
            keypoints,
            annotated,
        }
    }
}

impl PoseFile {
    pub fn from_frames(joint_set: &str, frames: &[PredictionFrame]) -> Self {
        PoseFile {
            joint_set: joint_set.to_string(),
            frames: frames
                .iter()
                .map(|f| PoseFrame {
                    frame_index: f.frame,
                    instances: f.instances.iter().map(PoseRecord::from_instance).collect(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_frames().map(|_| ())
    }

    pub fn to_frames(&self) -> Result<Vec<PredictionFrame>> {
        let k = builtin_joint_set(&self.joint_set)?.count();
        check_increasing(self.frames.iter().map(|f| f.frame_index))?;
        self.frames
            .iter()
            .map(|f| {
                let instances = f
                    .instances
                    .iter()
                    .map(|r| {
                        check_finite(&[r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.box_score, r.score], "box and scores")
                            .map_err(|e| Error::InvalidValue(format!("frame {}: {e}", f.frame_index)))?;
                        Ok(PersonInstance {
                            bbox: r.bbox,
                            box_score: r.box_score,
                            score: r.score,
                            keypoints: unpack_keypoints(&r.keypoints, &r.annotated, k, f.frame_index)?,
                            joint_set: self.joint_set.clone(),
                            area: r.area,
                            track_id: r.track_id,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(PredictionFrame {
                    frame: f.frame_index,
                    instances,
                })
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PoseFile = parse_json(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        to_canonical(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PoseFile::from_json(&read_text(path)?).map_err(|e| e.in_file(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtRecord {
    pub person_id: u64,
    /// Annotated head box; the PCKh reference is 0.6 of its diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_box: Option<BBox>,
    /// Explicit PCKh reference length, used when no head box is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_size: Option<f64>,
    pub keypoints: Vec<f64>,
    pub annotated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFrame {
    pub frame_index: u64,
    pub persons: Vec<GtRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub joint_set: String,
    pub frames: Vec<GtFrame>,
}

impl GtRecord {
    pub fn head_size(&self) -> Option<f64> {
        self.head_box.map(|b| HEAD_SIZE_FACTOR * b.diagonal()).or(self.head_size)
    }
}

impl GroundTruthFile {
    pub fn to_frames(&self) -> Result<Vec<GroundTruthFrame>> {
        let k = builtin_joint_set(&self.joint_set)?.count();
        check_increasing(self.frames.iter().map(|f| f.frame_index))?;
        self.frames
            .iter()
            .map(|f| {
                let mut seen = std::collections::HashSet::new();
                let persons = f
                    .persons
                    .iter()
                    .map(|r| {
                        if !seen.insert(r.person_id) {
                            return Err(Error::InvalidValue(format!(
                                "frame {}: duplicate person id {}",
                                f.frame_index, r.person_id
                            )));
                        }
                        let head_size = r.head_size().filter(|h| h.is_finite() && *h > 0.0).ok_or_else(|| {
                            Error::InvalidValue(format!(
                                "frame {}: person {} needs a head box or a positive head size",
                                f.frame_index, r.person_id
                            ))
                        })?;
                        Ok(GtPerson {
                            person_id: r.person_id,
                            head_size,
                            keypoints: unpack_keypoints(&r.keypoints, &r.annotated, k, f.frame_index)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(GroundTruthFrame {
                    frame: f.frame_index,
                    persons,
                })
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GroundTruthFile = parse_json(text)?;
        file.to_frames()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        to_canonical(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        GroundTruthFile::from_json(&read_text(path)?).map_err(|e| e.in_file(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxFrame {
    pub frame_index: u64,
    pub boxes: Vec<BoxRecord>,
}

/// Person boxes of one detector over a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxFile {
    pub frames: Vec<BoxFrame>,
}

impl BoxFile {
    pub fn validate(&self) -> Result<()> {
        check_increasing(self.frames.iter().map(|f| f.frame_index))?;
        for f in &self.frames {
            for b in &f.boxes {
                check_finite(&[b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h, b.score], "boxes")
                    .map_err(|e| Error::InvalidValue(format!("frame {}: {e}", f.frame_index)))?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BoxFile = parse_json(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        to_canonical(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        BoxFile::from_json(&read_text(path)?).map_err(|e| e.in_file(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    /// Union of several detectors' boxes per frame, reduced by IoU-NMS.
    pub fn merge(files: &[BoxFile], iou_threshold: f64) -> Result<BoxFile> {
        let mut per_frame: BTreeMap<u64, Vec<BoxRecord>> = BTreeMap::new();
        for f in files {
            for frame in &f.frames {
                per_frame.entry(frame.frame_index).or_default().extend(frame.boxes.iter().cloned());
            }
        }
        let frames = per_frame
            .into_iter()
            .map(|(frame_index, boxes)| {
                let rects: Vec<BBox> = boxes.iter().map(|b| b.bbox).collect();
                let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
                let kept = crate::suppression::box_nms(&rects, &scores, iou_threshold)?;
                Ok(BoxFrame {
                    frame_index,
                    boxes: kept.into_iter().map(|i| boxes[i].clone()).collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(BoxFile { frames })
    }
}

/// Heatmap files of one detection, keyed by branch joint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub box_score: f64,
    pub heatmaps: BTreeMap<String, PathBuf>,
    /// Outputs for the horizontally flipped crop, same keys.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flipped: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub frame_index: u64,
    pub detections: Vec<DetectionEntry>,
}

/// Pipeline input for one sequence; heatmap paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub frames: Vec<ManifestFrame>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<()> {
        check_increasing(self.frames.iter().map(|f| f.frame_index))?;
        for f in &self.frames {
            for d in &f.detections {
                for name in d.heatmaps.keys().chain(d.flipped.keys()) {
                    builtin_joint_set(name)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SequenceManifest = parse_json(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        to_canonical(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SequenceManifest::from_json(&read_text(path)?).map_err(|e| e.in_file(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_json() -> String {
        let kps: Vec<f64> = (0..15).flat_map(|i| [i as f64 * 1.5, 20.25, 0.75]).collect();
        let file = PoseFile {
            joint_set: "posetrack".into(),
            frames: vec![
                PoseFrame {
                    frame_index: 0,
                    instances: vec![PoseRecord {
                        bbox: BBox::new(1.0, 2.0, 30.5, 60.0),
                        box_score: 0.9,
                        score: 0.675,
                        track_id: Some(4),
                        area: None,
                        keypoints: kps,
                        annotated: vec![true; 15],
                    }],
                },
                PoseFrame {
                    frame_index: 3,
                    instances: vec![],
                },
            ],
        };
        file.to_json()
    }

    #[test]
    fn canonical_round_trip() {
        let text = pose_json();
        let parsed = PoseFile::from_json(&text).unwrap();
        assert_eq!(parsed.to_json(), text);
        let frames = parsed.to_frames().unwrap();
        assert_eq!(PoseFile::from_frames("posetrack", &frames), parsed);
    }

    #[test]
    fn schema_violations() {
        let text = pose_json();
        assert!(matches!(
            PoseFile::from_json(&text.replace("\"posetrack\"", "\"h36m\"")),
            Err(Error::UnknownJointSet(_))
        ));
        assert!(matches!(
            PoseFile::from_json(&text.replace("\"frame_index\": 3", "\"frame_index\": 0")),
            Err(Error::NonMonotoneFrame { frame: 0, previous: 0 })
        ));
        let short = text.replacen("0.0,\n", "", 1);
        assert!(matches!(PoseFile::from_json(&short), Err(Error::ShapeMismatch(_))));
        assert!(PoseFile::from_json("{\"joint_set\": \"coco\"}").is_err());
    }

    #[test]
    fn ground_truth_head_size() {
        let kps: Vec<f64> = (0..15).flat_map(|i| [i as f64, 1.0, 1.0]).collect();
        let gt = GroundTruthFile {
            joint_set: "posetrack".into(),
            frames: vec![GtFrame {
                frame_index: 2,
                persons: vec![GtRecord {
                    person_id: 7,
                    head_box: Some(BBox::new(0.0, 0.0, 30.0, 40.0)),
                    head_size: None,
                    keypoints: kps.clone(),
                    annotated: vec![true; 15],
                }],
            }],
        };
        let frames = gt.to_frames().unwrap();
        assert!((frames[0].persons[0].head_size - 30.0).abs() < 1e-12);
        let text = gt.to_json();
        assert_eq!(GroundTruthFile::from_json(&text).unwrap().to_json(), text);
        let mut dup = gt.clone();
        let first = dup.frames[0].persons[0].clone();
        dup.frames[0].persons.push(first);
        assert!(dup.to_frames().is_err());
        let mut headless = gt;
        headless.frames[0].persons[0].head_box = None;
        assert!(headless.to_frames().is_err());
    }

    #[test]
    fn merge_boxes_nms() {
        let a = BoxFile {
            frames: vec![BoxFrame {
                frame_index: 0,
                boxes: vec![BoxRecord {
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                    score: 0.9,
                }],
            }],
        };
        let b = BoxFile {
            frames: vec![
                BoxFrame {
                    frame_index: 0,
                    boxes: vec![
                        BoxRecord {
                            bbox: BBox::new(1.0, 0.0, 10.0, 10.0),
                            score: 0.8,
                        },
                        BoxRecord {
                            bbox: BBox::new(50.0, 50.0, 10.0, 10.0),
                            score: 0.5,
                        },
                    ],
                },
                BoxFrame {
                    frame_index: 1,
                    boxes: vec![],
                },
            ],
        };
        let m = BoxFile::merge(&[a, b], 0.6).unwrap();
        assert_eq!(m.frames.len(), 2);
        let scores: Vec<f64> = m.frames[0].boxes.iter().map(|b| b.score).collect();
        assert_eq!(scores, vec![0.9, 0.5]);
    }
}
