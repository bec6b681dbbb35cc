use serde::{Deserialize, Serialize};

/// One keypoint in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub annotated: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Keypoint {
            x,
            y,
            score,
            annotated: true,
        }
    }

    /// A joint with no prediction or annotation.
    pub fn missing() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            score: 0.0,
            annotated: false,
        }
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box `(x, y, w, h)` in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One detected person: box, scores and keypoints in a named joint set.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonInstance {
    pub bbox: BBox,
    pub box_score: f64,
    /// Instance score used for ranking; equals `box_score` until re-scored.
    pub score: f64,
    pub keypoints: Vec<Keypoint>,
    pub joint_set: String,
    /// Overrides the box area as the OKS scale when set.
    pub area: Option<f64>,
    pub track_id: Option<u64>,
}

impl PersonInstance {
    pub fn new(joint_set: impl Into<String>, bbox: BBox, box_score: f64, keypoints: Vec<Keypoint>) -> Self {
        PersonInstance {
            bbox,
            box_score,
            score: box_score,
            keypoints,
            joint_set: joint_set.into(),
            area: None,
            track_id: None,
        }
    }

    pub fn area(&self) -> f64 {
        self.area.unwrap_or_else(|| self.bbox.area())
    }

    pub fn annotated_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.annotated).count()
    }
}
