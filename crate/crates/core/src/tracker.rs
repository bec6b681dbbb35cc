//! Frame-to-frame identity association over OKS similarity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_greedy, solve_hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::instance::PersonInstance;
use crate::suppression::{oks, OksConstants};

/// One identity and the instances observed for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub history: BTreeMap<u64, PersonInstance>,
    pub last_active: u64,
}

impl Track {
    fn start(id: u64, frame: u64, instance: PersonInstance) -> Self {
        let mut history = BTreeMap::new();
        history.insert(frame, instance);
        Track {
            id,
            history,
            last_active: frame,
        }
    }

    pub fn last(&self) -> &PersonInstance {
        &self.history[&self.last_active]
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

/// Predicts where a track's last instance will be `gap` frames later.
pub trait Propagator {
    fn propagate(&self, track: &Track, gap: u64) -> PersonInstance;
}

/// No motion model: the last observation is the prediction.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPropagator;

impl Propagator for IdentityPropagator {
    fn propagate(&self, track: &Track, _gap: u64) -> PersonInstance {
        track.last().clone()
    }
}

/// Per-joint constant velocity estimated from the last two observations.
#[derive(Debug, Clone, Copy, Default)]
pub struct VelocityPropagator;

impl Propagator for VelocityPropagator {
    fn propagate(&self, track: &Track, gap: u64) -> PersonInstance {
        let mut recent = track.history.iter().rev();
        let (&t2, last) = recent.next().expect("tracks are never empty");
        let mut out = last.clone();
        let Some((&t1, prev)) = recent.next() else {
            return out;
        };
        if gap == 0 {
            return out;
        }
        let scale = gap as f64 / (t2 - t1) as f64;
        for (k, p) in out.keypoints.iter_mut().zip(&prev.keypoints) {
            if k.annotated && p.annotated {
                k.x += (k.x - p.x) * scale;
                k.y += (k.y - p.y) * scale;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Hungarian,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorKind {
    Identity,
    Velocity,
}

impl PropagatorKind {
    fn as_propagator(self) -> &'static dyn Propagator {
        match self {
            PropagatorKind::Identity => &IdentityPropagator,
            PropagatorKind::Velocity => &VelocityPropagator,
        }
    }
}

impl std::str::FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hungarian" => Ok(Matcher::Hungarian),
            "greedy" => Ok(Matcher::Greedy),
            other => Err(Error::InvalidValue(format!("unknown matcher `{other}`"))),
        }
    }
}

impl std::str::FromStr for PropagatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PropagatorKind::Identity),
            "velocity" => Ok(PropagatorKind::Velocity),
            other => Err(Error::InvalidValue(format!("unknown propagator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum OKS for a detection to extend a track.
    pub sim_threshold: f64,
    /// Frames an unmatched track stays eligible.
    pub lookback: u64,
    pub matcher: Matcher,
    pub propagator: PropagatorKind,
    /// Tracks with fewer stored frames are dropped by [`TrackerState::finalize`].
    pub min_len: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            sim_threshold: 0.3,
            lookback: 8,
            matcher: Matcher::Hungarian,
            propagator: PropagatorKind::Velocity,
            min_len: 2,
        }
    }
}

/// OKS between the propagated track and a candidate; 0 once the gap exceeds `lookback`.
pub fn similarity(
    track: &Track,
    candidate: &PersonInstance,
    frame: u64,
    lookback: u64,
    prop: &dyn Propagator,
    consts: &OksConstants,
) -> Result<f64> {
    let gap = frame.saturating_sub(track.last_active);
    if gap > lookback {
        return Ok(0.0);
    }
    oks(&prop.propagate(track, gap), candidate, consts)
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub config: TrackerConfig,
    pub consts: OksConstants,
    pub active: Vec<Track>,
    pub finished: Vec<Track>,
    pub next_id: u64,
    last_frame: Option<u64>,
}

impl TrackerState {
    pub fn new(config: TrackerConfig, consts: OksConstants) -> Self {
        TrackerState {
            config,
            consts,
            active: Vec::new(),
            finished: Vec::new(),
            next_id: 0,
            last_frame: None,
        }
    }

    /// Associates one frame of detections; returns the track id given to each detection.
    pub fn step(&mut self, frame: u64, detections: &[PersonInstance]) -> Result<Vec<u64>> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(Error::NonMonotoneFrame { frame, previous });
            }
        }
        self.last_frame = Some(frame);

        let lookback = self.config.lookback;
        let (eligible, expired): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| frame - t.last_active <= lookback);
        self.finished.extend(expired);
        self.active = eligible;

        let prop = self.config.propagator.as_propagator();
        let mut sims = vec![0.0; self.active.len() * detections.len()];
        for (r, track) in self.active.iter().enumerate() {
            let predicted = prop.propagate(track, frame - track.last_active);
            for (c, det) in detections.iter().enumerate() {
                sims[r * detections.len() + c] = oks(&predicted, det, &self.consts)?;
            }
        }
        let cost = CostMatrix::new(self.active.len(), detections.len(), sims.iter().map(|s| 1.0 - s).collect())?;
        let assignment = match self.config.matcher {
            Matcher::Hungarian => solve_hungarian(&cost),
            Matcher::Greedy => solve_greedy(&cost),
        };

        let mut ids: Vec<Option<u64>> = vec![None; detections.len()];
        for (r, c) in assignment.pairs() {
            let sim = sims[r * detections.len() + c];
            if sim > 0.0 && sim >= self.config.sim_threshold {
                let track = &mut self.active[r];
                let mut det = detections[c].clone();
                det.track_id = Some(track.id);
                track.history.insert(frame, det);
                track.last_active = frame;
                ids[c] = Some(track.id);
            }
        }
        for (c, det) in detections.iter().enumerate() {
            if ids[c].is_none() {
                let id = self.next_id;
                self.next_id += 1;
                let mut det = det.clone();
                det.track_id = Some(id);
                self.active.push(Track::start(id, frame, det));
                ids[c] = Some(id);
            }
        }
        Ok(ids.into_iter().map(|id| id.expect("every detection gets an id")).collect())
    }

    /// All tracks with at least `min_len` stored frames, by id.
    pub fn finalize(&self, min_len: usize) -> Vec<Track> {
        let mut tracks: Vec<Track> = self
            .finished
            .iter()
            .chain(&self.active)
            .filter(|t| t.len() >= min_len.max(1))
            .cloned()
            .collect();
        tracks.sort_by_key(|t| t.id);
        tracks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{BBox, Keypoint};
    use crate::skeleton::{builtin_joint_set, POSETRACK};

    fn consts() -> OksConstants {
        OksConstants::for_set(&builtin_joint_set(POSETRACK).unwrap())
    }

    /// A 15-joint pose centered at (cx, cy).
    fn person(cx: f64, cy: f64) -> PersonInstance {
        let kps = (0..15)
            .map(|i| Keypoint::new(cx + (i % 3) as f64 * 6.0 - 6.0, cy + (i / 3) as f64 * 8.0 - 16.0, 0.9))
            .collect();
        PersonInstance::new(POSETRACK, BBox::new(cx - 15.0, cy - 25.0, 30.0, 50.0), 0.9, kps)
    }

    fn track_of(frames: &[(u64, PersonInstance)]) -> Track {
        let mut t = Track::start(0, frames[0].0, frames[0].1.clone());
        for (f, p) in &frames[1..] {
            t.history.insert(*f, p.clone());
            t.last_active = *f;
        }
        t
    }

    #[test]
    fn similarity_cases() {
        let c = consts();
        let p = person(50.0, 50.0);
        let t = track_of(&[(3, p.clone())]);
        assert_eq!(similarity(&t, &p, 4, 8, &IdentityPropagator, &c).unwrap(), 1.0);
        assert_eq!(similarity(&t, &p, 12, 8, &IdentityPropagator, &c).unwrap(), 0.0);
        assert_eq!(similarity(&t, &p, 11, 8, &IdentityPropagator, &c).unwrap(), 1.0);

        let moving = track_of(&[(0, person(10.0, 20.0)), (2, person(16.0, 24.0))]);
        for frame in [3u64, 5, 10] {
            let dt = (frame - 2) as f64;
            let expected = person(16.0 + 3.0 * dt, 24.0 + 2.0 * dt);
            assert!((similarity(&moving, &expected, frame, 8, &VelocityPropagator, &c).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(VelocityPropagator.propagate(&moving, 0), *moving.last());
    }

    #[test]
    fn new_tracks_and_persistence() {
        let mut s = TrackerState::new(TrackerConfig::default(), consts());
        let dets = vec![person(20.0, 40.0), person(120.0, 40.0)];
        assert_eq!(s.step(0, &dets).unwrap(), vec![0, 1]);
        assert_eq!(s.step(1, &dets).unwrap(), vec![0, 1]);
        let swapped = vec![dets[1].clone(), dets[0].clone()];
        assert_eq!(s.step(2, &swapped).unwrap(), vec![1, 0]);
        assert!(matches!(s.step(2, &dets), Err(Error::NonMonotoneFrame { .. })));
        assert_eq!(s.next_id, 2);
    }

    #[test]
    fn lookback_expires_tracks() {
        let mut s = TrackerState::new(TrackerConfig::default(), consts());
        let p = person(20.0, 40.0);
        s.step(0, &[p.clone()]).unwrap();
        assert_eq!(s.step(8, &[p.clone()]).unwrap(), vec![0]);
        assert_eq!(s.step(17, &[p.clone()]).unwrap(), vec![1]);
        assert_eq!(s.finished.len(), 1);
    }

    /// Two people walking toward each other along x at 10 px per frame.
    /// A starts at x = 10, B at x = 95; they pass between frames 4 and 5.
    fn crossing(frame: u64) -> Vec<PersonInstance> {
        let t = frame as f64;
        vec![big_person(10.0 + 10.0 * t, 150.0), big_person(95.0 - 10.0 * t, 150.0)]
    }

    fn big_person(cx: f64, cy: f64) -> PersonInstance {
        let kps = (0..15)
            .map(|i| Keypoint::new(cx + (i % 3) as f64 * 30.0 - 30.0, cy + (i / 3) as f64 * 40.0 - 80.0, 0.9))
            .collect();
        PersonInstance::new(POSETRACK, BBox::new(cx - 50.0, cy - 100.0, 100.0, 200.0), 0.9, kps)
    }

    /// Counts per-person changes of the assigned track id.
    fn id_switches(config: TrackerConfig) -> usize {
        let mut s = TrackerState::new(config, consts());
        let mut owner: [Option<u64>; 2] = [None, None];
        let mut switches = 0;
        for frame in 0..10 {
            let ids = s.step(frame, &crossing(frame)).unwrap();
            for person in 0..2 {
                if owner[person].is_some_and(|prev| prev != ids[person]) {
                    switches += 1;
                }
                owner[person] = Some(ids[person]);
            }
        }
        switches
    }

    #[test]
    fn crossing_targets() {
        assert_eq!(id_switches(TrackerConfig::default()), 0);
        // Without a motion model, frame 5 puts A at 60 and B at 45 while the
        // tracks last saw 50 (A) and 55 (B). Swapping costs 5 + 5 px against
        // 10 + 10 px for keeping, so both ids change once. Afterwards every
        // track follows the person nearest its last position: 2 switches total.
        let identity = TrackerConfig {
            propagator: PropagatorKind::Identity,
            sim_threshold: 0.5,
            ..TrackerConfig::default()
        };
        assert_eq!(id_switches(identity), 2);
        let c = consts();
        let t = track_of(&[(0, big_person(50.0, 150.0))]);
        assert!(similarity(&t, &big_person(60.0, 150.0), 1, 8, &IdentityPropagator, &c).unwrap() >= 0.5);
    }

    #[test]
    fn finalize_prunes_short_tracks() {
        let mut s = TrackerState::new(TrackerConfig::default(), consts());
        let a = person(20.0, 40.0);
        let b = person(300.0, 40.0);
        s.step(0, &[a.clone(), b]).unwrap();
        s.step(1, &[a.clone()]).unwrap();
        s.step(3, &[a.clone()]).unwrap();
        let kept = s.finalize(2);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, 0);
        assert_eq!(kept[0].len(), 3);
        assert_eq!(kept[0].last_active, 3);
        assert_eq!(s.finalize(1).len(), 2);
    }

    #[test]
    fn greedy_matcher_runs() {
        let cfg = TrackerConfig {
            matcher: Matcher::Greedy,
            ..TrackerConfig::default()
        };
        assert_eq!(id_switches(cfg), 0);
    }
}
