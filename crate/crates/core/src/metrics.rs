//! PoseTrack-style evaluation: per-joint AP after PCKh pose matching, and
//! per-joint MOTA, MOTP, precision and recall.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Keypoint, PersonInstance};
use crate::skeleton::{builtin_joint_set, canonical};

/// Head segment length is this fraction of the annotated head-box diagonal.
pub const HEAD_SIZE_FACTOR: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPerson {
    pub person_id: u64,
    /// PCKh reference length in pixels.
    pub head_size: f64,
    pub keypoints: Vec<Keypoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame: u64,
    pub persons: Vec<GtPerson>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub frame: u64,
    pub instances: Vec<PersonInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// A joint is correct when its distance is at most this fraction of the head size.
    pub pckh_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { pckh_threshold: 0.5 }
    }
}

/// Distance normalized by the head size.
pub fn pckh_distance(pred: &Keypoint, gt: &Keypoint, head_size: f64) -> f64 {
    pred.distance(gt) / head_size
}

pub fn pckh_correct(pred: &Keypoint, gt: &Keypoint, head_size: f64, threshold: f64) -> bool {
    pred.annotated && gt.annotated && pckh_distance(pred, gt, head_size) <= threshold
}

/// Greedy pose-level matching inside one frame: most PCKh-correct joints
/// first, then smaller mean normalized distance, then higher instance score.
pub fn match_frame(preds: &[PersonInstance], gts: &[GtPerson], threshold: f64) -> Vec<Option<usize>> {
    struct Candidate {
        correct: usize,
        mean_dist: f64,
        score: f64,
        pred: usize,
        gt: usize,
    }
    let mut candidates = Vec::new();
    for (p, pred) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let mut correct = 0;
            let mut dist = 0.0;
            let mut shared = 0;
            for (kp, kg) in pred.keypoints.iter().zip(&gt.keypoints) {
                if kp.annotated && kg.annotated {
                    let d = pckh_distance(kp, kg, gt.head_size);
                    dist += d;
                    shared += 1;
                    if d <= threshold {
                        correct += 1;
                    }
                }
            }
            if correct > 0 {
                candidates.push(Candidate {
                    correct,
                    mean_dist: dist / shared as f64,
                    score: pred.score,
                    pred: p,
                    gt: g,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.correct
            .cmp(&a.correct)
            .then(a.mean_dist.total_cmp(&b.mean_dist))
            .then(b.score.total_cmp(&a.score))
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut pred_to_gt = vec![None; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    for c in candidates {
        if pred_to_gt[c.pred].is_none() && !gt_used[c.gt] {
            pred_to_gt[c.pred] = Some(c.gt);
            gt_used[c.gt] = true;
        }
    }
    pred_to_gt
}

/// Table columns: joint groups in display order.
pub const GROUPS: [&str; 7] = ["Head", "Shoulder", "Elbow", "Wrist", "Hip", "Knee", "Ankle"];

fn group_of(joint: &str) -> Option<usize> {
    let name = canonical(joint);
    let part = name.strip_prefix("left_").or_else(|| name.strip_prefix("right_")).unwrap_or(name);
    match part {
        "head_top" | "upper_neck" | "nose" | "eye" | "ear" => Some(0),
        "shoulder" => Some(1),
        "elbow" => Some(2),
        "wrist" => Some(3),
        "hip" => Some(4),
        "knee" => Some(5),
        "ankle" => Some(6),
        _ => None,
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn group_means(joints: &[String], per_joint: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..GROUPS.len())
        .map(|g| {
            mean_defined(
                joints
                    .iter()
                    .zip(per_joint)
                    .filter(|(j, _)| group_of(j) == Some(g))
                    .map(|(_, v)| *v),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub joints: Vec<String>,
    /// Per-joint AP in percent; `None` where the ground truth has no such joint.
    pub ap: Vec<Option<f64>>,
    pub groups: Vec<Option<f64>>,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt: usize,
    pub matches: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotaReport {
    pub joints: Vec<String>,
    pub counts: Vec<MotCounts>,
    pub mota: Vec<Option<f64>>,
    pub motp: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub groups: Vec<Option<f64>>,
    pub total_mota: f64,
    pub total_motp: f64,
    pub total_precision: f64,
    pub total_recall: f64,
    pub total_counts: MotCounts,
}

/// Lines up prediction and ground-truth frames by index; prediction frames without ground truth are ignored.
fn align<'a>(
    preds: &'a [PredictionFrame],
    gts: &'a [GroundTruthFrame],
) -> Result<Vec<(&'a [PersonInstance], &'a GroundTruthFrame)>> {
    let mut by_frame: HashMap<u64, &[PersonInstance]> = HashMap::new();
    for p in preds {
        if by_frame.insert(p.frame, &p.instances).is_some() {
            return Err(Error::InvalidValue(format!("duplicate prediction frame {}", p.frame)));
        }
    }
    let mut ordered: BTreeMap<u64, &GroundTruthFrame> = BTreeMap::new();
    for g in gts {
        if ordered.insert(g.frame, g).is_some() {
            return Err(Error::InvalidValue(format!("duplicate ground-truth frame {}", g.frame)));
        }
        for person in &g.persons {
            if !(person.head_size > 0.0) {
                return Err(Error::InvalidValue(format!(
                    "person {} in frame {} has head size {}",
                    person.person_id, g.frame, person.head_size
                )));
            }
        }
    }
    Ok(ordered
        .into_iter()
        .map(|(f, g)| (by_frame.get(&f).copied().unwrap_or(&[]), g))
        .collect())
}

fn joint_names(joint_set: &str, count: usize) -> Result<Vec<String>> {
    let set = builtin_joint_set(joint_set)?;
    if set.count() != count {
        return Err(Error::ShapeMismatch(format!(
            "`{joint_set}` has {} joints, data has {count}",
            set.count()
        )));
    }
    Ok(set.joints)
}

fn check_keypoint_counts(frames: &[(&[PersonInstance], &GroundTruthFrame)], count: usize) -> Result<()> {
    for (preds, gt) in frames {
        let bad = preds.iter().map(|p| p.keypoints.len()).chain(gt.persons.iter().map(|p| p.keypoints.len()));
        if let Some(n) = bad.into_iter().find(|&n| n != count) {
            return Err(Error::ShapeMismatch(format!("frame {}: {n} keypoints, expected {count}", gt.frame)));
        }
    }
    Ok(())
}

/// Area under the monotone precision envelope.
fn average_precision(mut detections: Vec<(f64, bool)>, positives: usize) -> f64 {
    detections.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(detections.len());
    let mut recall = Vec::with_capacity(detections.len());
    for (i, &(_, hit)) in detections.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / positives as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    100.0 * ap
}

/// Per-joint average precision over the whole sequence.
pub fn compute_map(
    joint_set: &str,
    preds: &[PredictionFrame],
    gts: &[GroundTruthFrame],
    config: &EvalConfig,
) -> Result<MapReport> {
    let count = builtin_joint_set(joint_set)?.count();
    let joints = joint_names(joint_set, count)?;
    let frames = align(preds, gts)?;
    check_keypoint_counts(&frames, count)?;
    let thr = config.pckh_threshold;

    let mut detections: Vec<Vec<(f64, bool)>> = vec![Vec::new(); count];
    let mut positives = vec![0usize; count];
    for (preds, gt) in &frames {
        let matching = match_frame(preds, &gt.persons, thr);
        for person in &gt.persons {
            for (j, k) in person.keypoints.iter().enumerate() {
                positives[j] += usize::from(k.annotated);
            }
        }
        for (p, pred) in preds.iter().enumerate() {
            for (j, kp) in pred.keypoints.iter().enumerate() {
                if !kp.annotated {
                    continue;
                }
                let hit = matching[p].is_some_and(|g| {
                    let person = &gt.persons[g];
                    pckh_correct(kp, &person.keypoints[j], person.head_size, thr)
                });
                detections[j].push((kp.score, hit));
            }
        }
    }
    let ap: Vec<Option<f64>> = detections
        .into_iter()
        .zip(&positives)
        .map(|(d, &n)| (n > 0).then(|| average_precision(d, n)))
        .collect();
    let groups = group_means(&joints, &ap);
    let total = mean_defined(ap.iter().copied()).unwrap_or(0.0);
    Ok(MapReport {
        joints,
        ap,
        groups,
        total,
    })
}

/// Per-joint tracking accuracy; identity switches are counted per (person, joint).
pub fn compute_mota(
    joint_set: &str,
    preds: &[PredictionFrame],
    gts: &[GroundTruthFrame],
    config: &EvalConfig,
) -> Result<MotaReport> {
    let count = builtin_joint_set(joint_set)?.count();
    let joints = joint_names(joint_set, count)?;
    let frames = align(preds, gts)?;
    check_keypoint_counts(&frames, count)?;
    let thr = config.pckh_threshold;

    let mut counts = vec![MotCounts::default(); count];
    let mut dist_sum = vec![0.0; count];
    let mut last_track: HashMap<(u64, usize), u64> = HashMap::new();
    for (preds, gt) in &frames {
        if let Some(p) = preds.iter().find(|p| p.track_id.is_none()) {
            return Err(Error::InvalidValue(format!(
                "frame {}: prediction without a track id (box {:?})",
                gt.frame, p.bbox
            )));
        }
        let matching = match_frame(preds, &gt.persons, thr);
        let mut gt_hit = vec![vec![false; count]; gt.persons.len()];
        for (p, pred) in preds.iter().enumerate() {
            let track = pred.track_id.expect("checked above");
            for (j, kp) in pred.keypoints.iter().enumerate() {
                if !kp.annotated {
                    continue;
                }
                let hit = matching[p].filter(|&g| {
                    let person = &gt.persons[g];
                    pckh_correct(kp, &person.keypoints[j], person.head_size, thr)
                });
                let Some(g) = hit else {
                    counts[j].false_positives += 1;
                    continue;
                };
                let person = &gt.persons[g];
                gt_hit[g][j] = true;
                counts[j].matches += 1;
                dist_sum[j] += pckh_distance(kp, &person.keypoints[j], person.head_size) / thr;
                if let Some(prev) = last_track.insert((person.person_id, j), track) {
                    if prev != track {
                        counts[j].id_switches += 1;
                    }
                }
            }
        }
        for (g, person) in gt.persons.iter().enumerate() {
            for (j, k) in person.keypoints.iter().enumerate() {
                if k.annotated {
                    counts[j].gt += 1;
                    if !gt_hit[g][j] {
                        counts[j].misses += 1;
                    }
                }
            }
        }
    }

    let mut mota = Vec::with_capacity(count);
    let mut motp = Vec::with_capacity(count);
    let mut precision = Vec::with_capacity(count);
    let mut recall = Vec::with_capacity(count);
    for (c, d) in counts.iter().zip(&dist_sum) {
        if c.gt == 0 {
            mota.push(None);
            motp.push(None);
            precision.push(None);
            recall.push(None);
            continue;
        }
        let errors = c.misses + c.false_positives + c.id_switches;
        mota.push(Some(100.0 * (1.0 - errors as f64 / c.gt as f64)));
        motp.push(Some(if c.matches > 0 { 100.0 * (1.0 - d / c.matches as f64) } else { 0.0 }));
        let detected = c.matches + c.false_positives;
        precision.push(Some(if detected > 0 { 100.0 * c.matches as f64 / detected as f64 } else { 0.0 }));
        recall.push(Some(100.0 * c.matches as f64 / c.gt as f64));
    }
    let total_counts = counts.iter().fold(MotCounts::default(), |a, c| MotCounts {
        gt: a.gt + c.gt,
        matches: a.matches + c.matches,
        false_positives: a.false_positives + c.false_positives,
        misses: a.misses + c.misses,
        id_switches: a.id_switches + c.id_switches,
    });
    Ok(MotaReport {
        groups: group_means(&joints, &mota),
        total_mota: mean_defined(mota.iter().copied()).unwrap_or(0.0),
        total_motp: mean_defined(motp.iter().copied()).unwrap_or(0.0),
        total_precision: mean_defined(precision.iter().copied()).unwrap_or(0.0),
        total_recall: mean_defined(recall.iter().copied()).unwrap_or(0.0),
        joints,
        counts,
        mota,
        motp,
        precision,
        recall,
        total_counts,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

fn table(header: &[&str], row: &[String]) -> String {
    let widths: Vec<usize> = header.iter().zip(row).map(|(h, r)| h.len().max(r.len())).collect();
    let mut out = String::new();
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let _ = writeln!(out, "{}", line(header.iter().map(|s| s.to_string()).collect()));
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
    let _ = writeln!(out, "{}", line(row.to_vec()));
    out
}

impl MapReport {
    /// Head / Shoulder / ... / Ankle / Total mAP as an aligned text table.
    pub fn to_table(&self) -> String {
        let mut header: Vec<String> = GROUPS.iter().map(|g| format!("{g} mAP")).collect();
        header.push("Total mAP".into());
        let mut row: Vec<String> = self.groups.iter().map(|v| cell(*v)).collect();
        row.push(cell(Some(self.total)));
        table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &row)
    }
}

impl MotaReport {
    pub fn to_table(&self) -> String {
        let mut header: Vec<String> = GROUPS.iter().map(|g| format!("{g} MOTA")).collect();
        header.extend(["Total MOTA", "Total MOTP", "Total Prec", "Total Rec"].map(String::from));
        let mut row: Vec<String> = self.groups.iter().map(|v| cell(*v)).collect();
        for v in [self.total_mota, self.total_motp, self.total_precision, self.total_recall] {
            row.push(cell(Some(v)));
        }
        table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::BBox;
    use crate::skeleton::POSETRACK;

    const HEAD: f64 = 20.0;

    fn gt_person(id: u64, cx: f64) -> GtPerson {
        GtPerson {
            person_id: id,
            head_size: HEAD,
            keypoints: (0..15).map(|i| Keypoint::new(cx + i as f64 * 3.0, 50.0 + i as f64 * 10.0, 1.0)).collect(),
        }
    }

    fn as_pred(p: &GtPerson, track: u64, score: f64) -> PersonInstance {
        let mut inst = PersonInstance::new(POSETRACK, BBox::new(0.0, 0.0, 50.0, 200.0), score, p.keypoints.clone());
        inst.track_id = Some(track);
        inst
    }

    #[test]
    fn pckh_examples() {
        let a = Keypoint::new(3.0, 4.0, 1.0);
        assert_eq!(pckh_distance(&a, &a, 10.0), 0.0);
        assert!(pckh_correct(&a, &a, 10.0, 0.5));
        let b = Keypoint::new(3.0, 14.0, 1.0);
        assert_eq!(pckh_distance(&a, &b, 10.0), 1.0);
        assert!(!pckh_correct(&a, &b, 10.0, 0.5));
        let c = Keypoint::new(3.0, 8.0, 1.0);
        assert!((pckh_distance(&a, &c, 10.0) - 0.4).abs() < 1e-12);
        assert!(pckh_correct(&a, &c, 10.0, 0.5));
    }

    fn perfect_sequence() -> (Vec<PredictionFrame>, Vec<GroundTruthFrame>) {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for f in 0..4u64 {
            let persons = vec![gt_person(0, 100.0 + f as f64), gt_person(1, 300.0)];
            preds.push(PredictionFrame {
                frame: f,
                instances: persons.iter().map(|p| as_pred(p, p.person_id + 10, 1.0)).collect(),
            });
            gts.push(GroundTruthFrame { frame: f, persons });
        }
        (preds, gts)
    }

    #[test]
    fn perfect_predictions() {
        let (preds, gts) = perfect_sequence();
        let cfg = EvalConfig::default();
        let map = compute_map(POSETRACK, &preds, &gts, &cfg).unwrap();
        assert!(map.ap.iter().all(|&v| v == Some(100.0)));
        assert_eq!(map.total, 100.0);
        let mot = compute_mota(POSETRACK, &preds, &gts, &cfg).unwrap();
        assert!(mot.mota.iter().all(|&v| v == Some(100.0)));
        assert_eq!((mot.total_precision, mot.total_recall, mot.total_motp), (100.0, 100.0, 100.0));
        assert!(map.to_table().contains("Total mAP"));
        assert!(mot.to_table().contains("Total MOTP"));
    }

    #[test]
    fn far_predictions_score_zero() {
        let (mut preds, gts) = perfect_sequence();
        for f in &mut preds {
            for p in &mut f.instances {
                p.keypoints.iter_mut().for_each(|k| k.x += 0.6 * HEAD);
            }
        }
        let map = compute_map(POSETRACK, &preds, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(map.total, 0.0);
    }

    #[test]
    fn dropped_predictions() {
        let (mut preds, gts) = perfect_sequence();
        preds.clear();
        let mot = compute_mota(POSETRACK, &preds, &gts, &EvalConfig::default()).unwrap();
        assert!(mot.mota.iter().all(|&v| v == Some(0.0)));
        assert_eq!(mot.total_precision, 0.0);
        assert_eq!(mot.total_counts.misses, mot.total_counts.gt);
    }

    #[test]
    fn hand_built_ap() {
        // One frame, three GT people; three predictions: two correct (scores
        // 0.9 and 0.5), one far away (0.7). Per joint: ranked hits T, F, T
        // over 3 positives. Precision 1, 1/2, 2/3; envelope 1, 2/3, 2/3;
        // recall steps 1/3 at p=1 and 1/3 at p=2/3 -> AP = 5/9.
        let persons = vec![gt_person(0, 0.0), gt_person(1, 200.0), gt_person(2, 400.0)];
        let preds = vec![
            as_pred(&persons[0], 0, 0.9),
            as_pred(&gt_person(9, 700.0), 1, 0.7),
            as_pred(&persons[1], 2, 0.5),
        ];
        let mut preds = preds;
        for (p, s) in preds.iter_mut().zip([0.9, 0.7, 0.5]) {
            p.keypoints.iter_mut().for_each(|k| k.score = s);
        }
        let report = compute_map(
            POSETRACK,
            &[PredictionFrame { frame: 0, instances: preds }],
            &[GroundTruthFrame { frame: 0, persons }],
            &EvalConfig::default(),
        )
        .unwrap();
        for ap in &report.ap {
            assert!((ap.unwrap() - 500.0 / 9.0).abs() < 1e-9);
        }
    }

    #[test]
    fn swapped_ids_mota() {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for f in 0..10u64 {
            let persons = vec![gt_person(0, 100.0), gt_person(1, 300.0)];
            let swap = f >= 5;
            preds.push(PredictionFrame {
                frame: f,
                instances: vec![
                    as_pred(&persons[0], if swap { 1 } else { 0 }, 1.0),
                    as_pred(&persons[1], if swap { 0 } else { 1 }, 1.0),
                ],
            });
            gts.push(GroundTruthFrame { frame: f, persons });
        }
        let mot = compute_mota(POSETRACK, &preds, &gts, &EvalConfig::default()).unwrap();
        for (c, m) in mot.counts.iter().zip(&mot.mota) {
            assert_eq!((c.gt, c.id_switches, c.misses, c.false_positives), (20, 2, 0, 0));
            assert_eq!(*m, Some(90.0));
        }
    }

    #[test]
    fn frame_order_does_not_matter() {
        let (mut preds, mut gts) = perfect_sequence();
        preds[1].instances[0].keypoints[3].x += 5.0;
        preds[2].instances[1].track_id = Some(99);
        let cfg = EvalConfig::default();
        let a = compute_mota(POSETRACK, &preds, &gts, &cfg).unwrap();
        let m = compute_map(POSETRACK, &preds, &gts, &cfg).unwrap();
        preds.reverse();
        gts.rotate_left(1);
        assert_eq!(compute_mota(POSETRACK, &preds, &gts, &cfg).unwrap(), a);
        assert_eq!(compute_map(POSETRACK, &preds, &gts, &cfg).unwrap(), m);
    }

    #[test]
    fn missing_track_id_is_rejected() {
        let (mut preds, gts) = perfect_sequence();
        preds[0].instances[0].track_id = None;
        assert!(compute_mota(POSETRACK, &preds, &gts, &EvalConfig::default()).is_err());
    }
}
