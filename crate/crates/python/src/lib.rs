//! Python bindings: joint sets, heatmaps, suppression, tracking, the sequence
//! pipeline, evaluation and the toy trainer.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use posekit::assignment::{solve_hungarian, CostMatrix};
use posekit::config::PipelineConfig;
use posekit::heatmap::{decode, render_target};
use posekit::io::{GroundTruthFile, PoseFile, SequenceManifest};
use posekit::metrics::{compute_map, compute_mota, EvalConfig};
use posekit::suppression::{self, OksConstants};
use posekit::synth::{synth_sequence, SynthConfig};
use posekit::tracker::{TrackerConfig, TrackerState};
use posekit::train::{train, ToyBenchmark, TrainSchedule};
use posekit::{builtin_joint_set, BBox, Keypoint, PersonInstance};

create_exception!(posekit_py, PosekitError, PyException);

fn err(e: posekit::Error) -> PyErr {
    PosekitError::new_err(format!("{}: {e}", e.kind()))
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// One person: box, scores and `(x, y, score)` keypoints in a named joint set.
#[pyclass(name = "Person", skip_from_py_object)]
#[derive(Clone)]
struct PyPerson {
    inner: PersonInstance,
}

#[pymethods]
impl PyPerson {
    #[new]
    #[pyo3(signature = (joint_set, bbox, box_score, keypoints))]
    fn new(joint_set: String, bbox: (f64, f64, f64, f64), box_score: f64, keypoints: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let count = builtin_joint_set(&joint_set).map_err(err)?.count();
        if keypoints.len() != count {
            return Err(err(posekit::Error::ShapeMismatch(format!(
                "{} keypoints for `{joint_set}`, expected {count}",
                keypoints.len()
            ))));
        }
        let kps = keypoints.into_iter().map(|(x, y, s)| Keypoint::new(x, y, s)).collect();
        Ok(PyPerson {
            inner: PersonInstance::new(joint_set, BBox::new(bbox.0, bbox.1, bbox.2, bbox.3), box_score, kps),
        })
    }

    #[getter]
    fn joint_set(&self) -> String {
        self.inner.joint_set.clone()
    }

    #[getter]
    fn bbox(&self) -> (f64, f64, f64, f64) {
        let b = self.inner.bbox;
        (b.x, b.y, b.w, b.h)
    }

    #[getter]
    fn box_score(&self) -> f64 {
        self.inner.box_score
    }

    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }

    #[getter]
    fn track_id(&self) -> Option<u64> {
        self.inner.track_id
    }

    /// `(x, y, score, annotated)` per joint.
    #[getter]
    fn keypoints(&self) -> Vec<(f64, f64, f64, bool)> {
        self.inner.keypoints.iter().map(|k| (k.x, k.y, k.score, k.annotated)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Person(joint_set={:?}, score={:.4}, annotated={})",
            self.inner.joint_set,
            self.inner.score,
            self.inner.annotated_count()
        )
    }
}

/// `K x H x W` heatmap with its grid-to-image geometry.
#[pyclass(name = "Heatmap")]
struct PyHeatmap {
    inner: posekit::Heatmap,
}

#[pymethods]
impl PyHeatmap {
    /// Renders unit-peak Gaussians at grid positions; `None` leaves a channel empty.
    #[staticmethod]
    fn render(joint_set: &str, joints: Vec<Option<(f64, f64)>>, sigma: f64, height: usize, width: usize) -> PyResult<Self> {
        let t = render_target(joint_set, &joints, sigma, height, width).map_err(err)?;
        Ok(PyHeatmap { inner: t.heatmap })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyHeatmap {
            inner: posekit::Heatmap::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn joint_set(&self) -> String {
        self.inner.joint_set.clone()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.channels, self.inner.height, self.inner.width)
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values.clone()
    }

    /// `(x, y, score, annotated)` per joint, in image pixels.
    #[pyo3(signature = (smooth_sigma=1.0, quarter_offset=true))]
    fn decode(&self, smooth_sigma: f64, quarter_offset: bool) -> PyResult<Vec<(f64, f64, f64, bool)>> {
        let pose = decode(&self.inner, smooth_sigma, quarter_offset).map_err(err)?;
        Ok(pose.keypoints.iter().map(|k| (k.x, k.y, k.score, k.annotated)).collect())
    }
}

/// Online tracker with Hungarian or greedy matching.
#[pyclass(name = "Tracker")]
struct PyTracker {
    state: TrackerState,
}

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (joint_set="posetrack", sim_threshold=0.3, lookback=8, matcher="hungarian", propagator="velocity"))]
    fn new(joint_set: &str, sim_threshold: f64, lookback: u64, matcher: &str, propagator: &str) -> PyResult<Self> {
        let config = TrackerConfig {
            sim_threshold,
            lookback,
            matcher: matcher.parse().map_err(err)?,
            propagator: propagator.parse().map_err(err)?,
            ..TrackerConfig::default()
        };
        let consts = OksConstants::for_set(&builtin_joint_set(joint_set).map_err(err)?);
        Ok(PyTracker {
            state: TrackerState::new(config, consts),
        })
    }

    /// Track id for each detection of the frame.
    fn step(&mut self, frame: u64, detections: Vec<PyRef<'_, PyPerson>>) -> PyResult<Vec<u64>> {
        let dets: Vec<PersonInstance> = detections.iter().map(|p| p.inner.clone()).collect();
        self.state.step(frame, &dets).map_err(err)
    }

    /// `(track_id, [frame, ...])` for tracks with at least `min_len` frames.
    #[pyo3(signature = (min_len=2))]
    fn finalize(&self, min_len: usize) -> Vec<(u64, Vec<u64>)> {
        self.state
            .finalize(min_len)
            .iter()
            .map(|t| (t.id, t.history.keys().copied().collect()))
            .collect()
    }
}

#[pyfunction]
fn joint_names(name: &str) -> PyResult<Vec<String>> {
    Ok(builtin_joint_set(name).map_err(err)?.joints)
}

/// `(from_index, to_index)` pairs between two builtin joint sets.
#[pyfunction]
fn mapping(from_set: &str, to_set: &str) -> PyResult<Vec<(usize, usize)>> {
    Ok(posekit::mapping(from_set, to_set).map_err(err)?.index_map)
}

#[pyfunction]
fn oks(a: PyRef<'_, PyPerson>, b: PyRef<'_, PyPerson>) -> PyResult<f64> {
    let consts = OksConstants::for_set(&builtin_joint_set(&a.inner.joint_set).map_err(err)?);
    suppression::oks(&a.inner, &b.inner, &consts).map_err(err)
}

/// Kept indices, highest score first.
#[pyfunction]
#[pyo3(signature = (persons, threshold=0.4))]
fn oks_nms(persons: Vec<PyRef<'_, PyPerson>>, threshold: f64) -> PyResult<Vec<usize>> {
    let Some(first) = persons.first() else { return Ok(Vec::new()) };
    let consts = OksConstants::for_set(&builtin_joint_set(&first.inner.joint_set).map_err(err)?);
    let instances: Vec<PersonInstance> = persons.iter().map(|p| p.inner.clone()).collect();
    suppression::oks_nms(&instances, threshold, &consts).map_err(err)
}

#[pyfunction]
fn box_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    suppression::box_iou(&BBox::new(a.0, a.1, a.2, a.3), &BBox::new(b.0, b.1, b.2, b.3))
}

#[pyfunction]
#[pyo3(signature = (boxes, scores, threshold=0.6))]
fn box_nms(boxes: Vec<(f64, f64, f64, f64)>, scores: Vec<f64>, threshold: f64) -> PyResult<Vec<usize>> {
    let boxes: Vec<BBox> = boxes.into_iter().map(|b| BBox::new(b.0, b.1, b.2, b.3)).collect();
    suppression::box_nms(&boxes, &scores, threshold).map_err(err)
}

#[pyfunction]
fn rescore(p: PyRef<'_, PyPerson>) -> PyPerson {
    PyPerson {
        inner: suppression::rescore(&p.inner),
    }
}

/// Minimum-cost assignment of a rectangular cost matrix as `(row, col)` pairs.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    let m = CostMatrix::from_rows(&cost).map_err(err)?;
    Ok(solve_hungarian(&m).pairs())
}

/// Writes a synthetic sequence into `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=7, frames=12, persons=3))]
fn synth(out_dir: PathBuf, seed: u64, frames: usize, persons: usize) -> PyResult<()> {
    let cfg = SynthConfig {
        seed,
        frames,
        persons,
        ..SynthConfig::default()
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| err(e.into()))?;
    synth_sequence(&cfg).and_then(|s| s.write(&out_dir)).map_err(err)
}

/// Runs the full pipeline and returns the pose file as a dict.
#[pyfunction]
#[pyo3(signature = (manifest, config=None))]
fn run_pipeline<'py>(py: Python<'py>, manifest: PathBuf, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let config = match config {
        Some(text) => PipelineConfig::from_json(text).map_err(err)?,
        None => PipelineConfig::default(),
    };
    let m = SequenceManifest::load(&manifest).map_err(err)?;
    let base = manifest.parent().map(PathBuf::from).unwrap_or_default();
    let out = posekit::run_pipeline(&config, &m, &base).map_err(err)?;
    json_to_py(py, &out.poses.to_json())
}

fn load_eval(pred: &PathBuf, gt: &PathBuf) -> PyResult<(String, Vec<posekit::metrics::PredictionFrame>, Vec<posekit::metrics::GroundTruthFrame>)> {
    let p = PoseFile::load(pred).map_err(err)?;
    let g = GroundTruthFile::load(gt).map_err(err)?;
    Ok((
        g.joint_set.clone(),
        p.to_frames().map_err(err)?,
        g.to_frames().map_err(err)?,
    ))
}

#[pyfunction]
fn eval_map<'py>(py: Python<'py>, pred: PathBuf, gt: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (set, p, g) = load_eval(&pred, &gt)?;
    let r = compute_map(&set, &p, &g, &EvalConfig::default()).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&r).expect("report serializes"))
}

#[pyfunction]
fn eval_mota<'py>(py: Python<'py>, pred: PathBuf, gt: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (set, p, g) = load_eval(&pred, &gt)?;
    let r = compute_mota(&set, &p, &g, &EvalConfig::default()).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&r).expect("report serializes"))
}

/// Trains a preset on the synthetic benchmark; returns the metrics log as a list of dicts.
#[pyfunction]
#[pyo3(signature = (schedule="mdpn", seed=0, benchmark=None, checkpoint=None))]
fn train_toy<'py>(
    py: Python<'py>,
    schedule: &str,
    seed: u64,
    benchmark: Option<&str>,
    checkpoint: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let bench = match benchmark {
        Some(text) => ToyBenchmark::from_json(text).map_err(err)?,
        None => ToyBenchmark::default(),
    };
    let sched = TrainSchedule::preset(schedule, &bench.schedule).map_err(err)?;
    let data = bench.datasets(seed).map_err(err)?;
    let outcome = py.detach(|| train(&bench.network, &sched, &data, seed)).map_err(err)?;
    if let Some(path) = checkpoint {
        outcome.network.save_checkpoint(&path).map_err(err)?;
    }
    json_to_py(py, &serde_json::to_string(&outcome.log).expect("log serializes"))
}

#[pymodule]
fn posekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PosekitError", m.py().get_type::<PosekitError>())?;
    m.add_class::<PyPerson>()?;
    m.add_class::<PyHeatmap>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(joint_names, m)?)?;
    m.add_function(wrap_pyfunction!(mapping, m)?)?;
    m.add_function(wrap_pyfunction!(oks, m)?)?;
    m.add_function(wrap_pyfunction!(oks_nms, m)?)?;
    m.add_function(wrap_pyfunction!(box_iou, m)?)?;
    m.add_function(wrap_pyfunction!(box_nms, m)?)?;
    m.add_function(wrap_pyfunction!(rescore, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(eval_map, m)?)?;
    m.add_function(wrap_pyfunction!(eval_mota, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    Ok(())
}
