//! OKS similarity, pose and box NMS, box re-scoring and score thresholds.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::instance::{BBox, PersonInstance};
use crate::skeleton::{canonical, JointSet};

/// Per-keypoint standard deviations published with the COCO keypoint benchmark.
const COCO_SIGMAS: [(&str, f64); 11] = [
    ("nose", 0.026),
    ("left_eye", 0.025),
    ("right_eye", 0.025),
    ("left_ear", 0.035),
    ("right_ear", 0.035),
    ("shoulder", 0.079),
    ("elbow", 0.072),
    ("wrist", 0.062),
    ("hip", 0.107),
    ("knee", 0.087),
    ("ankle", 0.089),
];

/// Sigma used for joints COCO does not annotate (head top, neck, thorax, pelvis).
pub const DEFAULT_EXTRA_SIGMA: f64 = 0.079;

fn coco_sigma(joint: &str) -> Option<f64> {
    let name = canonical(joint);
    if let Some(&(_, s)) = COCO_SIGMAS.iter().find(|(n, _)| *n == name) {
        return Some(s);
    }
    let limb = name.strip_prefix("left_").or_else(|| name.strip_prefix("right_"))?;
    COCO_SIGMAS.iter().find(|(n, _)| *n == limb).map(|&(_, s)| s)
}

/// Per-joint fall-off constants `k_i` of the OKS kernel for one joint set.
///
/// COCO defines `k_i = 2 sigma_i`; joints outside COCO use
/// `2 * extra_sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct OksConstants {
    pub joint_set: String,
    pub k: Vec<f64>,
}

impl OksConstants {
    pub fn for_set(set: &JointSet) -> Self {
        OksConstants::with_extra_sigma(set, DEFAULT_EXTRA_SIGMA)
    }

    pub fn with_extra_sigma(set: &JointSet, extra_sigma: f64) -> Self {
        let k = set
            .joints
            .iter()
            .map(|j| 2.0 * coco_sigma(j).unwrap_or(extra_sigma))
            .collect();
        OksConstants {
            joint_set: set.name.clone(),
            k,
        }
    }

    pub fn from_values(joint_set: impl Into<String>, k: Vec<f64>) -> Result<Self> {
        if k.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidValue("OKS constants must be positive".into()));
        }
        Ok(OksConstants {
            joint_set: joint_set.into(),
            k,
        })
    }
}

/// Object keypoint similarity of `b` against the reference instance `a`.
///
/// Scale is `a`'s area; joints annotated in only one instance are ignored.
pub fn oks(a: &PersonInstance, b: &PersonInstance, consts: &OksConstants) -> Result<f64> {
    for inst in [a, b] {
        if inst.joint_set != consts.joint_set {
            return Err(Error::JointSetMismatch {
                expected: consts.joint_set.clone(),
                found: inst.joint_set.clone(),
            });
        }
        if inst.keypoints.len() != consts.k.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} keypoints for {} OKS constants",
                inst.keypoints.len(),
                consts.k.len()
            )));
        }
    }
    let area = a.area();
    if !(area > 0.0) {
        return Err(Error::InvalidValue(format!("OKS reference area must be positive, got {area}")));
    }
    let mut total = 0.0;
    let mut shared = 0usize;
    for ((ka, kb), k) in a.keypoints.iter().zip(&b.keypoints).zip(&consts.k) {
        if !(ka.annotated && kb.annotated) {
            continue;
        }
        let d2 = (ka.x - kb.x).powi(2) + (ka.y - kb.y).powi(2);
        total += (-d2 / (2.0 * area * k * k)).exp();
        shared += 1;
    }
    Ok(if shared == 0 { 0.0 } else { total / shared as f64 })
}

/// Indices sorted by descending score; equal scores keep input order.
fn rank_by_score(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal));
    order
}

/// Greedy suppression driven by a pairwise "reference suppresses candidate" test.
fn greedy_nms(order: Vec<usize>, mut suppresses: impl FnMut(usize, usize) -> Result<bool>) -> Result<Vec<usize>> {
    let mut kept: Vec<usize> = Vec::new();
    for cand in order {
        let mut alive = true;
        for &k in &kept {
            if suppresses(k, cand)? {
                alive = false;
                break;
            }
        }
        if alive {
            kept.push(cand);
        }
    }
    Ok(kept)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("NMS threshold must lie in (0, 1], got {threshold}")))
    }
}

/// OKS-NMS: returns kept indices in descending score order.
pub fn oks_nms(instances: &[PersonInstance], threshold: f64, consts: &OksConstants) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    let order = rank_by_score(instances.iter().map(|p| p.score));
    greedy_nms(order, |kept, cand| Ok(oks(&instances[kept], &instances[cand], consts)? >= threshold))
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// IoU-NMS over boxes: returns kept indices in descending score order.
pub fn box_nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    if boxes.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!("{} boxes with {} scores", boxes.len(), scores.len())));
    }
    let order = rank_by_score(scores.iter().copied());
    greedy_nms(order, |kept, cand| Ok(box_iou(&boxes[kept], &boxes[cand]) >= threshold))
}

/// Instance score := box score x mean score of annotated keypoints (0 when none).
pub fn rescore(p: &PersonInstance) -> PersonInstance {
    let scores: Vec<f64> = p.keypoints.iter().filter(|k| k.annotated).map(|k| k.score).collect();
    let score = if scores.is_empty() {
        0.0
    } else {
        p.box_score * scores.iter().sum::<f64>() / scores.len() as f64
    };
    PersonInstance { score, ..p.clone() }
}

/// Drops instances scoring below `box_thr` and un-annotates keypoints below `kp_thr`.
pub fn apply_thresholds(instances: &[PersonInstance], box_thr: f64, kp_thr: f64) -> Vec<PersonInstance> {
    instances
        .iter()
        .filter(|p| p.score >= box_thr)
        .map(|p| {
            let mut p = p.clone();
            for k in p.keypoints.iter_mut().filter(|k| k.score < kp_thr) {
                k.annotated = false;
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Keypoint;
    use crate::skeleton::{builtin_joint_set, COCO, MERGED};
    use proptest::prelude::*;

    fn coco_instance(offset: f64, score: f64) -> PersonInstance {
        let kps = (0..17)
            .map(|i| Keypoint::new(10.0 + i as f64 * 3.0 + offset, 20.0 + (i % 5) as f64 * 7.0, 0.9))
            .collect();
        let mut p = PersonInstance::new(COCO, BBox::new(0.0, 0.0, 80.0, 100.0), score, kps);
        p.score = score;
        p
    }

    #[test]
    fn constants_follow_coco() {
        let c = OksConstants::for_set(&builtin_joint_set(COCO).unwrap());
        assert_eq!(c.k[0], 0.052);
        assert_eq!(c.k[11], 0.214);
        assert_eq!(c.k[16], 0.178);
        let m = OksConstants::for_set(&builtin_joint_set(MERGED).unwrap());
        assert_eq!(&m.k[17..], &[0.158; 4]);
        assert!(OksConstants::from_values(COCO, vec![0.0]).is_err());
    }

    #[test]
    fn oks_identity_and_closed_form() {
        let set = builtin_joint_set(COCO).unwrap();
        let c = OksConstants::for_set(&set);
        let p = coco_instance(0.0, 0.9);
        assert_eq!(oks(&p, &p, &c).unwrap(), 1.0);

        // Displace joint i along x by sqrt(2 * area) * k_i so each term is exp(-1).
        let mut q = p.clone();
        let area = p.area();
        for (kp, k) in q.keypoints.iter_mut().zip(&c.k) {
            kp.x += (2.0 * area).sqrt() * k;
        }
        assert!((oks(&p, &q, &c).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!((oks(&p, &q, &c).unwrap() - 0.367_879_441).abs() < 1e-9);
    }

    #[test]
    fn oks_disjoint_and_errors() {
        let c = OksConstants::for_set(&builtin_joint_set(COCO).unwrap());
        let mut a = coco_instance(0.0, 0.9);
        let mut b = coco_instance(0.0, 0.9);
        for i in 0..17 {
            if i % 2 == 0 {
                a.keypoints[i].annotated = false;
            } else {
                b.keypoints[i].annotated = false;
            }
        }
        assert_eq!(oks(&a, &b, &c).unwrap(), 0.0);
        let mut other = coco_instance(0.0, 0.9);
        other.joint_set = "mpii".into();
        assert!(matches!(oks(&a, &other, &c), Err(Error::JointSetMismatch { .. })));
        a.area = Some(0.0);
        assert!(oks(&a, &b, &c).is_err());
    }

    #[test]
    fn oks_nms_keeps_best_duplicate() {
        let c = OksConstants::for_set(&builtin_joint_set(COCO).unwrap());
        let a = coco_instance(0.0, 0.6);
        let b = coco_instance(0.0, 0.8);
        assert_eq!(oks_nms(&[a.clone(), b.clone()], 0.4, &c).unwrap(), vec![1]);
        let far = coco_instance(500.0, 0.7);
        assert_eq!(oks_nms(&[a, b, far], 1.0, &c).unwrap(), vec![1, 2]);
        assert!(oks_nms(&[], 0.0, &c).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((box_iou(&a, &BBox::new(1.0, 0.0, 2.0, 2.0)) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(box_nms(&[a, a], &[0.5, 0.7], 0.6).unwrap(), vec![1]);
        assert_eq!(box_nms(&[a, BBox::new(5.0, 5.0, 1.0, 1.0)], &[0.5, 0.5], 0.6).unwrap(), vec![0, 1]);
    }

    #[test]
    fn rescore_examples() {
        let mut p = coco_instance(0.0, 0.8);
        p.keypoints.iter_mut().for_each(|k| k.score = 0.5);
        assert_eq!(rescore(&p).score, 0.4);
        p.box_score = 1.0;
        p.keypoints.iter_mut().for_each(|k| k.score = 1.0);
        assert_eq!(rescore(&p).score, 1.0);
        p.box_score = 0.9;
        p.keypoints.truncate(3);
        for (k, s) in p.keypoints.iter_mut().zip([0.2, 0.4, 0.6]) {
            k.score = s;
        }
        assert!((rescore(&p).score - 0.36).abs() < 1e-12);
        p.keypoints.iter_mut().for_each(|k| k.annotated = false);
        assert_eq!(rescore(&p).score, 0.0);
    }

    #[test]
    fn threshold_examples() {
        let a = coco_instance(0.0, 0.2);
        let b = coco_instance(0.0, 0.5);
        let all = vec![a, b];
        assert_eq!(apply_thresholds(&all, 0.0, 0.0), all);
        let kept = apply_thresholds(&all, 0.3, 0.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.5);
        let stripped = apply_thresholds(&all, 0.0, 0.95);
        assert_eq!(stripped.len(), 2);
        assert!(stripped.iter().all(|p| p.annotated_count() == 0));
    }

    proptest! {
        #[test]
        fn rescore_ranking_scale_invariant(
            box_score in 0.05f64..1.0,
            scores in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 17), 2..6),
            factor in 0.05f64..1.0,
        ) {
            let instances: Vec<PersonInstance> = scores.iter().map(|s| {
                let mut p = coco_instance(0.0, box_score);
                for (k, &v) in p.keypoints.iter_mut().zip(s) { k.score = v; }
                p
            }).collect();
            let scaled: Vec<PersonInstance> = instances.iter().map(|p| {
                let mut q = p.clone();
                q.keypoints.iter_mut().for_each(|k| k.score *= factor);
                q
            }).collect();
            let order = |v: &[PersonInstance]| {
                let r: Vec<PersonInstance> = v.iter().map(rescore).collect();
                rank_by_score(r.iter().map(|p| p.score))
            };
            let a = order(&instances);
            let b = order(&scaled);
            let base: Vec<f64> = instances.iter().map(|p| rescore(p).score).collect();
            // Orders agree wherever the original scores are not near-ties.
            for w in a.windows(2) {
                if base[w[0]] - base[w[1]] > 1e-9 {
                    let pa = b.iter().position(|&i| i == w[0]).unwrap();
                    let pb = b.iter().position(|&i| i == w[1]).unwrap();
                    prop_assert!(pa < pb);
                }
            }
        }
    }
}
