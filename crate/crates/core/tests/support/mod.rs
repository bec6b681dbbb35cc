//! Reference implementations used as test oracles. They are written from the
//! definitions, not from the library code, and favor clarity over speed.

#![allow(dead_code)]

use std::collections::BTreeMap;

use posekit::instance::{BBox, Keypoint, PersonInstance};
use posekit::train::{Block, Gradients, LossSpec, Sample, ToyNetwork};
use rand::Rng;

/// Minimum total cost over every injective row-to-column map of an `r x c`
/// matrix with `r <= c`, and the lexicographically first map reaching it.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(rows <= cols, "oracle expects rows <= cols");
    let mut best = (f64::INFINITY, Vec::new());
    let mut current = Vec::with_capacity(rows);
    let mut used = vec![false; cols];
    fn walk(
        cost: &[Vec<f64>],
        row: usize,
        acc: f64,
        used: &mut [bool],
        current: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if row == cost.len() {
            // strict: the first (lexicographically smallest) optimum wins
            if acc < best.0 {
                *best = (acc, current.clone());
            }
            return;
        }
        for c in 0..used.len() {
            if used[c] {
                continue;
            }
            used[c] = true;
            current.push(c);
            walk(cost, row + 1, acc + cost[row][c], used, current, best);
            current.pop();
            used[c] = false;
        }
    }
    walk(cost, 0, 0.0, &mut used, &mut current, &mut best);
    if rows == 0 {
        best.0 = 0.0;
    }
    best
}

pub fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = m.first().map_or(0, Vec::len);
    (0..cols).map(|c| m.iter().map(|row| row[c]).collect()).collect()
}

/// COCO keypoint standard deviations, by joint name.
pub fn coco_sigma(joint: &str) -> Option<f64> {
    let table = [
        ("nose", 0.026),
        ("left_eye", 0.025),
        ("right_eye", 0.025),
        ("left_ear", 0.035),
        ("right_ear", 0.035),
        ("left_shoulder", 0.079),
        ("right_shoulder", 0.079),
        ("left_elbow", 0.072),
        ("right_elbow", 0.072),
        ("left_wrist", 0.062),
        ("right_wrist", 0.062),
        ("left_hip", 0.107),
        ("right_hip", 0.107),
        ("left_knee", 0.087),
        ("right_knee", 0.087),
        ("left_ankle", 0.089),
        ("right_ankle", 0.089),
    ];
    table.iter().find(|(n, _)| *n == joint).map(|&(_, s)| s)
}

/// Fall-off constants `2 sigma` for a list of joint names.
pub fn reference_k(joints: &[String], extra_sigma: f64) -> Vec<f64> {
    joints.iter().map(|j| 2.0 * coco_sigma(j).unwrap_or(extra_sigma)).collect()
}

/// OKS of `b` measured against `a`, written straight from the definition.
pub fn reference_oks(a: &PersonInstance, b: &PersonInstance, k: &[f64]) -> f64 {
    let scale = match a.area {
        Some(s) => s,
        None => a.bbox.w * a.bbox.h,
    };
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..k.len() {
        let (p, q) = (&a.keypoints[i], &b.keypoints[i]);
        if p.annotated && q.annotated {
            let d2 = (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
            sum += (-d2 / (2.0 * scale * k[i] * k[i])).exp();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn reference_iou(a: &BBox, b: &BBox) -> f64 {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = (a.x + a.w).min(b.x + b.w);
    let y1 = (a.y + a.h).min(b.y + b.h);
    let inter = if x1 > x0 && y1 > y0 { (x1 - x0) * (y1 - y0) } else { 0.0 };
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Greedy NMS evaluated from the full similarity matrix: walk candidates by
/// descending score (ties by index) and keep one unless some already kept
/// entry reaches `threshold` against it.
pub fn reference_nms(scores: &[f64], sim: &dyn Fn(usize, usize) -> f64, threshold: f64) -> Vec<usize> {
    let n = scores.len();
    let table: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sim(i, j)).collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // insertion sort keeps equal scores in index order
    for i in 1..n {
        let mut j = i;
        while j > 0 && scores[order[j]] > scores[order[j - 1]] {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    for &c in &order {
        if kept.iter().all(|&k| table[k][c] < threshold) {
            kept.push(c);
        }
    }
    kept
}

/// Batch loss of the toy network computed without the library loss code: per
/// domain, the mean over its samples of the L2 or OHKM joint loss, summed
/// over domains.
pub fn reference_batch_loss(net: &ToyNetwork, batch: &[&Sample], loss: LossSpec) -> f64 {
    let mut per_domain: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let plane = net.config.height * net.config.width;
    for s in batch {
        let out = net.forward_head(&s.input, &s.domain).unwrap();
        let k = out.len() / plane;
        let mut joint_losses: Vec<f64> = Vec::new();
        for j in 0..k {
            if !s.mask[j] {
                continue;
            }
            let mut sq = 0.0;
            for p in 0..plane {
                let d = out[j * plane + p] - s.target.values[j * plane + p] as f64;
                sq += d * d;
            }
            joint_losses.push(sq / plane as f64);
        }
        if let LossSpec::Ohkm(top) = loss {
            joint_losses.sort_by(|a, b| b.partial_cmp(a).unwrap());
            joint_losses.truncate(top);
        }
        let value = if joint_losses.is_empty() {
            0.0
        } else {
            joint_losses.iter().sum::<f64>() / joint_losses.len() as f64
        };
        let e = per_domain.entry(s.domain.as_str()).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }
    per_domain.values().map(|(sum, n)| sum / *n as f64).sum()
}

/// Central differences of [`reference_batch_loss`] for every parameter; the
/// step is `eps` relative to the parameter's magnitude (at least `eps`).
pub fn numeric_gradients(net: &ToyNetwork, batch: &[&Sample], loss: LossSpec, eps: f64) -> Gradients {
    let mut probe = net.clone();
    let mut out = Gradients::new();
    let blocks: Vec<Block> = net.params.keys().cloned().collect();
    for b in blocks {
        let len = net.params[&b].len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.params[&b][i];
            let h = eps * orig.abs().max(1.0);
            probe.params.get_mut(&b).unwrap()[i] = orig + h;
            let up = reference_batch_loss(&probe, batch, loss);
            probe.params.get_mut(&b).unwrap()[i] = orig - h;
            let down = reference_batch_loss(&probe, batch, loss);
            probe.params.get_mut(&b).unwrap()[i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.insert(b, g);
    }
    out
}

/// `|a - n| / max(|a|, |n|)` over a whole block, in the Euclidean norm.
pub fn block_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// A small random network with three heads and a mixed-domain batch for it.
/// Biases are randomized too so every parameter has a nonzero gradient path.
pub fn gradient_case(seed: u64) -> (ToyNetwork, Vec<Sample>) {
    use posekit::train::{gen_synthetic, DomainSpec, ToyConfig};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let config = ToyConfig {
        in_channels: rng.random_range(1..=3),
        height: rng.random_range(8..=12),
        width: rng.random_range(6..=9),
        features: rng.random_range(2..=5),
        target_sigma: rng.random_range(0.8..1.6),
    };
    let domains = [("A", "coco"), ("B", "mpii"), ("C", "posetrack")];
    let heads = domains.iter().map(|(d, s)| (d.to_string(), s.to_string())).collect();
    let mut net = ToyNetwork::new(config, heads, seed).unwrap();
    for v in net.params.values_mut().flatten() {
        *v += rng.random_range(-0.3..0.3);
    }
    let mut batch = Vec::new();
    for (i, (d, s)) in domains.iter().enumerate() {
        let n = rng.random_range(1..=2);
        let spec = DomainSpec::new(d, s, 1.0, 0.05, [0.0, 0.0]);
        batch.extend(gen_synthetic(&spec, &config, n, seed * 10 + i as u64).unwrap());
    }
    (net, batch)
}

/// Up to three base poses and noisy copies of them, with coarse scores so ties are common.
pub fn random_instances(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<PersonInstance> {
    let k = 17;
    let bases: Vec<Vec<(f64, f64)>> = (0..rng.random_range(1..=3))
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            (0..k)
                .map(|_| (cx + rng.random_range(-30.0..30.0), cy + rng.random_range(-40.0..40.0)))
                .collect()
        })
        .collect();
    (0..n)
        .map(|_| {
            let base = &bases[rng.random_range(0..bases.len())];
            let jitter = [0.0, 0.5, 2.0, 8.0][rng.random_range(0..4)];
            let keypoints = base
                .iter()
                .map(|&(x, y)| {
                    let mut kp = Keypoint::new(
                        x + rng.random_range(-1.0..=1.0) * jitter,
                        y + rng.random_range(-1.0..=1.0) * jitter,
                        rng.random_range(0.0..1.0),
                    );
                    kp.annotated = rng.random_bool(0.85);
                    kp
                })
                .collect();
            let bbox = BBox::new(0.0, 0.0, rng.random_range(20.0..80.0), rng.random_range(40.0..120.0));
            // coarse scores so ties are common
            let score = rng.random_range(1..=5) as f64 / 5.0;
            let mut p = PersonInstance::new("coco", bbox, score, keypoints);
            if rng.random_bool(0.3) {
                p.area = Some(rng.random_range(500.0..5000.0));
            }
            p
        })
        .collect()
}

/// Random boxes, half of them near-duplicates of earlier ones.
pub fn random_boxes(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> (Vec<BBox>, Vec<f64>) {
    let mut boxes: Vec<BBox> = Vec::new();
    for _ in 0..n {
        if !boxes.is_empty() && rng.random_bool(0.5) {
            // near-duplicate of an earlier box
            let b = boxes[rng.random_range(0..boxes.len())];
            let d = [0.0, 1.0, 5.0][rng.random_range(0..3)];
            boxes.push(BBox::new(b.x + rng.random_range(-d..=d), b.y + rng.random_range(-d..=d), b.w, b.h));
        } else {
            boxes.push(BBox::new(
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..100.0),
                rng.random_range(5.0..60.0),
                rng.random_range(5.0..60.0),
            ));
        }
    }
    let scores = (0..n).map(|_| rng.random_range(1..=4) as f64 / 4.0).collect();
    (boxes, scores)
}
