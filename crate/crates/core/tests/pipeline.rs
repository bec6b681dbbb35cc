use std::path::{Path, PathBuf};

use posekit::io::{PoseFile, SequenceManifest};
use posekit::pipeline::{decode_detection, STAGE_ORDER};
use posekit::synth::{synth_sequence, Injections, SynthConfig, MANIFEST_FILE};
use posekit::{run_pipeline, Error, Heatmap, PipelineConfig, Stages};

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_poses.json")
}

fn write_sequence(cfg: &SynthConfig) -> (tempfile::TempDir, SequenceManifest) {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_sequence(cfg).unwrap();
    seq.write(dir.path()).unwrap();
    let manifest = SequenceManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    (dir, manifest)
}

/// Set `POSEKIT_BLESS=1` to rewrite the golden file after an intended change.
#[test]
fn default_pipeline_reproduces_the_golden_file() {
    let (dir, manifest) = write_sequence(&SynthConfig::default());
    let out = run_pipeline(&PipelineConfig::default(), &manifest, dir.path()).unwrap();
    let text = out.poses.to_json();
    if std::env::var_os("POSEKIT_BLESS").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file; run once with POSEKIT_BLESS=1");
    assert!(text == golden, "pipeline output differs from {}", golden_path().display());
    // the committed file is canonical
    assert_eq!(PoseFile::from_json(&golden).unwrap().to_json(), golden);
    let stages: Vec<&str> = out.log.iter().map(|l| l.stage).collect();
    assert_eq!(stages, STAGE_ORDER);
}

#[test]
fn decode_only_yields_raw_poses() {
    let (dir, manifest) = write_sequence(&SynthConfig::default());
    let config = PipelineConfig {
        stages: Stages::decode_only(),
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&config, &manifest, dir.path()).unwrap();
    let frames = out.poses.to_frames().unwrap();
    for (f, m) in frames.iter().zip(&manifest.frames) {
        assert_eq!(f.instances.len(), m.detections.len());
        for (i, (inst, det)) in f.instances.iter().zip(&m.detections).enumerate() {
            let raw = decode_detection(&config, det, dir.path(), m.frame_index, i).unwrap();
            assert_eq!(inst.keypoints, raw.keypoints);
            assert_eq!((inst.score, inst.box_score), (det.box_score, det.box_score));
            assert_eq!(inst.track_id, None);
        }
    }
    assert!(out.log[1..].iter().all(|l| !l.enabled));
}

#[test]
fn duplicated_detections_survive_only_without_oks_nms() {
    let cfg = SynthConfig {
        frames: 1,
        inject: Injections {
            duplicate: false,
            spurious: false,
            wrong_joints: false,
            low_box: false,
            ..Injections::default()
        },
        ..SynthConfig::default()
    };
    let (dir, mut manifest) = write_sequence(&cfg);
    let dets = manifest.frames[0].detections.clone();
    manifest.frames[0].detections.extend(dets);
    let mut config = PipelineConfig::default();
    config.stages.track = false;
    let with = run_pipeline(&config, &manifest, dir.path()).unwrap();
    config.stages.oks_nms = false;
    let without = run_pipeline(&config, &manifest, dir.path()).unwrap();
    let count = |p: &PoseFile| p.frames[0].instances.len();
    assert_eq!(count(&with.poses), cfg.persons);
    assert_eq!(count(&without.poses), 2 * cfg.persons);
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, manifest) = write_sequence(&SynthConfig { frames: 6, ..SynthConfig::default() });
    let config = PipelineConfig::default();
    let a = run_pipeline(&config, &manifest, dir.path()).unwrap();
    let b = run_pipeline(&config, &manifest, dir.path()).unwrap();
    assert_eq!(a.poses.to_json(), b.poses.to_json());
    assert_eq!(a.log, b.log);
}

#[test]
fn broken_heatmap_is_reported_with_file_and_frame() {
    let (dir, manifest) = write_sequence(&SynthConfig { frames: 4, ..SynthConfig::default() });
    let det = &manifest.frames[2].detections[1];
    let victim = dir.path().join(det.heatmaps.values().next().unwrap());
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    let err = run_pipeline(&PipelineConfig::default(), &manifest, dir.path()).unwrap_err();
    match &err {
        Error::File { path, message } => {
            assert_eq!(Path::new(path), victim);
            assert!(message.starts_with("frame 2, detection 1:"), "{message}");
            assert!(message.contains("payload"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
    // the same input fails the same way
    let again = run_pipeline(&PipelineConfig::default(), &manifest, dir.path()).unwrap_err();
    assert_eq!(err.to_string(), again.to_string());
}

#[test]
fn wrong_branch_tag_is_rejected() {
    let (dir, manifest) = write_sequence(&SynthConfig { frames: 1, ..SynthConfig::default() });
    let det = &manifest.frames[0].detections[0];
    let (coco, mpii) = (dir.path().join(&det.heatmaps["coco"]), dir.path().join(&det.heatmaps["mpii"]));
    let other = Heatmap::load(&mpii).unwrap();
    other.save(&coco).unwrap();
    let err = run_pipeline(&PipelineConfig::default(), &manifest, dir.path()).unwrap_err();
    assert!(err.to_string().contains("joint set mismatch"), "{err}");
}

#[test]
fn omitted_config_keys_take_defaults() {
    let config = PipelineConfig::from_json(r#"{"oks_nms_threshold": 0.5, "stages": {"flow_track": false}}"#).unwrap();
    let expected = PipelineConfig {
        oks_nms_threshold: 0.5,
        stages: Stages {
            flow_track: false,
            ..Stages::default()
        },
        ..PipelineConfig::default()
    };
    assert_eq!(config, expected);
    let d = PipelineConfig::from_json("{}").unwrap();
    assert_eq!((d.sigma, d.oks_nms_threshold, d.box_nms_threshold, d.ohkm_k, d.lookback, d.min_len), (9.0, 0.4, 0.6, 8, 8, 2));
    assert!(PipelineConfig::from_json(r#"{"sigmaa": 3}"#).is_err());
    assert!(PipelineConfig::from_json(r#"{"output_joint_set": "h36m"}"#).and_then(|c| c.validate()).is_err());
}
