use posekit::heatmap::{decode, flip_merge, mirror, render_target, unmirror};
use posekit::instance::BBox;
use posekit::{builtin_joint_set, Error, Geometry, Heatmap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Decoding error, in cells, of `n` random keypoints on a rendered target.
fn decode_errors(sigma: f64, smooth: f64, quarter: bool, margin: f64, n: usize, seed: u64) -> Vec<f64> {
    let (h, w) = (64, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = (
                rng.random_range(margin..w as f64 - 1.0 - margin),
                rng.random_range(margin..h as f64 - 1.0 - margin),
            );
            let t = render_target("mpii", &[Some(p); 16], sigma, h, w).unwrap();
            let kp = decode(&t.heatmap, smooth, quarter).unwrap().keypoints[0];
            // identity geometry maps cell g to pixel g + 0.5
            (kp.x - 0.5 - p.0).hypot(kp.y - 0.5 - p.1)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn quarter_offset_tightens_localization() {
    let with = decode_errors(2.0, 0.0, true, 1.0, 400, 11);
    let without = decode_errors(2.0, 0.0, false, 1.0, 400, 11);
    assert!(with.iter().all(|&e| e <= 0.5), "max {}", with.iter().cloned().fold(0.0, f64::max));
    assert!(without.iter().all(|&e| e <= 0.5f64.hypot(0.5) + 1e-12));
    assert!(mean(&with) < mean(&without));
}

#[test]
fn smoothing_keeps_interior_peaks_in_place() {
    // the filter is symmetric, so away from the border the argmax cell does not move
    let errs = decode_errors(1.5, 1.0, true, 4.0, 300, 12);
    assert!(errs.iter().all(|&e| e <= 0.5));
}

#[test]
fn decoded_score_is_the_smoothed_peak() {
    let t = render_target("coco", &[Some((10.3, 7.8)); 17], 1.2, 16, 20).unwrap();
    for smooth in [0.0, 1.0] {
        let pose = decode(&t.heatmap, smooth, true).unwrap();
        let sm = posekit::heatmap::smooth(&t.heatmap, smooth).unwrap();
        let peak = sm.channel(0).iter().cloned().fold(f32::MIN, f32::max);
        // decoding keeps the smoothed map in f64; the public filter rounds to f32
        assert!((pose.keypoints[0].score - peak as f64).abs() <= 1e-6, "{smooth}");
    }
}

#[test]
fn truncated_payload_is_a_deterministic_error() {
    let t = render_target("posetrack", &[Some((3.0, 4.0)); 15], 1.0, 8, 6).unwrap();
    let mut h = t.heatmap;
    h.geometry = Geometry::for_crop(BBox::new(5.0, 6.0, 24.0, 32.0), 8, 6);
    let bytes = h.to_bytes();
    assert_eq!(Heatmap::from_bytes(&bytes).unwrap(), h);
    for cut in [0, 3, 20, 60, bytes.len() - 5, bytes.len() - 1] {
        let first = Heatmap::from_bytes(&bytes[..cut]).unwrap_err();
        let second = Heatmap::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(first, Error::MalformedHeatmap(_)), "cut {cut}: {first}");
        assert_eq!(first.to_string(), second.to_string());
    }
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(matches!(Heatmap::from_bytes(&extended), Err(Error::MalformedHeatmap(_))));
}

#[test]
fn truncated_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.pkhm");
    let t = render_target("mpii", &[None; 16], 1.0, 4, 4).unwrap();
    let bytes = t.heatmap.to_bytes();
    std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    let err = Heatmap::load(&path).unwrap_err().to_string();
    assert!(err.contains("cut.pkhm") && err.contains("payload"), "{err}");
}

#[test]
fn flip_merge_of_a_mirrored_map_is_the_map() {
    let set = builtin_joint_set("coco").unwrap();
    let joints: Vec<Option<(f64, f64)>> = (0..17).map(|j| Some((4.0 + (j % 9) as f64, 3.0 + (j / 3) as f64))).collect();
    let h = render_target("coco", &joints, 1.0, 12, 16).unwrap().heatmap;
    let flipped = mirror(&h, &set.flip_pairs, 1);
    // only the first `shift` columns are lost to the edge
    let back = unmirror(&flipped, &set.flip_pairs, 1);
    for k in 0..17 {
        for y in 0..12 {
            for x in 1..16 {
                assert_eq!(back.at(k, y, x), h.at(k, y, x));
            }
        }
    }
    let merged = flip_merge(&h, &flipped, &set.flip_pairs).unwrap();
    assert_eq!(decode(&merged, 0.0, true).unwrap(), decode(&h, 0.0, true).unwrap());
}

proptest! {
    #[test]
    fn pkhm_round_trips(
        c in 1usize..4, hh in 3usize..7, ww in 3usize..7,
        seed in any::<u64>(), ox in -50.0f64..50.0, stride in 0.5f64..8.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..c * hh * ww).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let g = Geometry { crop: BBox::new(ox, -ox, 10.0, 12.0), stride_x: stride, stride_y: stride * 1.5 };
        let h = Heatmap::from_values("custom", c, hh, ww, g, values).unwrap();
        prop_assert_eq!(Heatmap::from_bytes(&h.to_bytes()).unwrap(), h);
    }

    #[test]
    fn render_peaks_at_the_nearest_cell(x in 0.0f64..15.0, y in 0.0f64..11.0, sigma in 0.5f64..9.0) {
        let t = render_target("mpii", &[Some((x, y)); 16], sigma, 12, 16).unwrap();
        prop_assert!(t.mask.iter().all(|&m| m));
        let ch = t.heatmap.channel(0);
        let best = (0..ch.len()).fold(0, |b, i| if ch[i] > ch[b] { i } else { b });
        prop_assert!(((best % 16) as f64 - x).abs() <= 0.5 + 1e-9);
        prop_assert!(((best / 16) as f64 - y).abs() <= 0.5 + 1e-9);
    }
}
