//! Python bindings: geometry types, the association and alignment building
//! blocks, metrics, the simulator and a whole-run entry point.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use poleloc::alignment::{self, AlignParams, MatchedPair};
use poleloc::config::{KeyValues, LocalizerSettings, ScenarioConfig, CAMERA_KEYS};
use poleloc::extraction::{self, ExtractionParams, Observation};
use poleloc::map::{self, Point2, Projection};
use poleloc::{filter, localize};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn label(s: &str) -> PyResult<poleloc::SemanticLabel> {
    s.parse().map_err(err)
}

fn point((east, north): (f64, f64)) -> Point2 {
    Point2 { east, north }
}

#[pyclass(name = "Pose2", module = "poleloc_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPose2(poleloc::Pose2);

#[pymethods]
impl PyPose2 {
    #[new]
    fn new(east: f64, north: f64, heading: f64) -> Self {
        Self(poleloc::Pose2::new(east, north, heading))
    }
    #[getter]
    fn east(&self) -> f64 {
        self.0.east
    }
    #[getter]
    fn north(&self) -> f64 {
        self.0.north
    }
    /// Heading in radians, wrapped into (-pi, pi].
    #[getter]
    fn heading(&self) -> f64 {
        self.0.heading()
    }
    fn __repr__(&self) -> String {
        format!("Pose2(east={}, north={}, heading={})", self.0.east, self.0.north, self.0.heading())
    }
}

#[pyclass(name = "Pole", module = "poleloc_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPole(poleloc::Pole);

#[pymethods]
impl PyPole {
    #[new]
    #[pyo3(signature = (id, east, north, label = "Pole"))]
    fn new(id: u32, east: f64, north: f64, label: &str) -> PyResult<Self> {
        Ok(Self(poleloc::Pole::new(id, east, north, self::label(label)?)))
    }
    #[getter]
    fn id(&self) -> u32 {
        self.0.id
    }
    #[getter]
    fn east(&self) -> f64 {
        self.0.position.east
    }
    #[getter]
    fn north(&self) -> f64 {
        self.0.position.north
    }
    #[getter]
    fn label(&self) -> &'static str {
        self.0.label.as_str()
    }
    fn __repr__(&self) -> String {
        format!("Pole(id={}, east={}, north={}, label={:?})", self.0.id, self.0.position.east, self.0.position.north, self.0.label.as_str())
    }
}

#[pyclass(name = "CameraIntrinsics", module = "poleloc_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyIntrinsics(poleloc::CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, cx: f64, image_width: u32, image_height: u32) -> PyResult<Self> {
        poleloc::CameraIntrinsics::new(fx, cx, image_width, image_height).map(Self).map_err(err)
    }
    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }
    #[getter]
    fn image_width(&self) -> u32 {
        self.0.image_width
    }
    #[getter]
    fn image_height(&self) -> u32 {
        self.0.image_height
    }
}

/// Image column of `pole` seen from `pose`, or None when it is not in view.
#[pyfunction]
fn project_pole(pose: PyPose2, intrinsics: PyIntrinsics, pole: PyPole) -> Option<f64> {
    map::project_pole(&pose.0, &intrinsics.0, &pole.0).map(|p| p.u)
}

/// Associates `(u, label)` observations with the poles visible from `pose`.
/// Returns the matched pole id per observation (None for clutter).
#[pyfunction]
#[pyo3(signature = (observations, pose, poles, intrinsics, gate_px = 40.0, max_range = f64::INFINITY))]
fn associate(
    observations: Vec<(f64, String)>,
    pose: PyPose2,
    poles: Vec<PyPole>,
    intrinsics: PyIntrinsics,
    gate_px: f64,
    max_range: f64,
) -> PyResult<Vec<Option<u32>>> {
    let obs = observations
        .iter()
        .map(|(u, l)| Ok(Observation::new(*u, label(l)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let map = poleloc::CompactMap::new(poles.iter().map(|p| p.0).collect()).map_err(err)?;
    let projections: Vec<Projection> = map::visible_projections(&pose.0, &intrinsics.0, &map, max_range);
    Ok(filter::associate(&obs, &projections, gate_px).mapping)
}

/// Unsigned horizontal angle in radians between image columns `u1` and `u2`.
#[pyfunction]
fn horizontal_angle(u1: f64, u2: f64, intrinsics: PyIntrinsics) -> PyResult<f64> {
    alignment::horizontal_angle(u1, u2, &intrinsics.0).map_err(err)
}

/// Camera position from three poles ordered right to left and the angles
/// between them; the candidate nearest `coarse` wins.
#[pyfunction]
fn translation_from_triple(
    l1: (f64, f64),
    l2: (f64, f64),
    l3: (f64, f64),
    theta12: f64,
    theta23: f64,
    coarse: (f64, f64),
) -> Option<(f64, f64)> {
    alignment::translation_from_triple(point(l1), point(l2), point(l3), theta12, theta23, point(coarse))
        .map(|t| (t.east, t.north))
}

/// Gauss-Newton heading for a fixed translation and `(u, pole)` pairs.
/// Returns `(heading, cost, iterations, ok)`.
#[pyfunction]
fn optimize_rotation(
    translation: (f64, f64),
    pairs: Vec<(f64, PyPole)>,
    intrinsics: PyIntrinsics,
    psi_init: f64,
) -> (f64, f64, usize, bool) {
    let pairs: Vec<MatchedPair> = pairs
        .iter()
        .map(|(u, pole)| MatchedPair {
            observation: Observation::new(*u, pole.0.label),
            pole: pole.0,
        })
        .collect();
    let r = alignment::optimize_rotation(point(translation), &pairs, &intrinsics.0, psi_init, &AlignParams::default());
    (r.heading, r.cost, r.iterations, r.ok)
}

/// RMSE and recall tiers of `estimate` against `truth`, as a dict.
#[pyfunction]
fn compute_metrics<'py>(py: Python<'py>, estimate: Vec<PyPose2>, truth: Vec<PyPose2>) -> PyResult<Bound<'py, PyDict>> {
    let est: Vec<_> = estimate.iter().map(|p| p.0).collect();
    let tru: Vec<_> = truth.iter().map(|p| p.0).collect();
    let r = poleloc::eval::compute_metrics(&est, &tru).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("rmse_trans_m", r.rmse_trans_m)?;
    d.set_item("rmse_rot_deg", r.rmse_rot_deg)?;
    d.set_item("recall_trans", r.recall_trans.to_vec())?;
    d.set_item("recall_pose", r.recall_pose.to_vec())?;
    d.set_item("frame_count", r.frame_count)?;
    Ok(d)
}

type ObservationRow = (f64, &'static str, u32, u32);

fn observation_rows(frames: &[Vec<Observation>]) -> Vec<Vec<ObservationRow>> {
    frames
        .iter()
        .map(|f| f.iter().map(|o| (o.u, o.label.as_str(), o.group_width, o.pixel_count)).collect())
        .collect()
}

/// Observations `(u, label, group_width, pixel_count)` per mask file of `mask_dir`.
#[pyfunction]
#[pyo3(signature = (mask_dir, c1 = 60, c2 = 1, c3 = 15))]
fn extract(mask_dir: PathBuf, c1: u32, c2: u32, c3: u32) -> PyResult<Vec<Vec<ObservationRow>>> {
    let params = ExtractionParams { c1, c2, c3, ..ExtractionParams::default() };
    params.validate().map_err(err)?;
    extraction::extract_directory(&mask_dir, &params).map(|f| observation_rows(&f)).map_err(err)
}

fn key_values(options: Option<HashMap<String, Bound<'_, PyAny>>>) -> PyResult<KeyValues> {
    let mut kv = KeyValues::default();
    for (key, value) in options.unwrap_or_default() {
        let text = match value.extract::<bool>() {
            Ok(b) => b.to_string(),
            Err(_) => value.str()?.to_string(),
        };
        kv.set(&key, text).map_err(err)?;
    }
    Ok(kv)
}

/// Runs the simulator with scenario keys from `options`. Returns a dict with
/// `map`, `truth`, `odometry` (rows `(t, v, omega)`) and `observations`.
#[pyfunction]
#[pyo3(signature = (options = None))]
fn simulate<'py>(py: Python<'py>, options: Option<HashMap<String, Bound<'py, PyAny>>>) -> PyResult<Bound<'py, PyDict>> {
    let scenario = ScenarioConfig::from_key_values(&key_values(options)?).map_err(err)?;
    let sim = scenario.simulate().map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("map", sim.map.poles().iter().map(|p| PyPole(*p)).collect::<Vec<_>>())?;
    d.set_item("truth", sim.truth.iter().map(|s| PyPose2(s.pose)).collect::<Vec<_>>())?;
    d.set_item("odometry", sim.odometry.iter().map(|r| (r.t, r.v, r.omega)).collect::<Vec<_>>())?;
    d.set_item("observations", observation_rows(&sim.observations))?;
    Ok(d)
}

/// Simulates a scenario and localizes in it. `settings` takes run keys;
/// camera keys default to the scenario's. Returns a dict with `trajectory`,
/// `modes`, `truth`, `diverged` and `metrics`.
#[pyfunction]
#[pyo3(signature = (scenario = None, settings = None))]
fn localize_scenario<'py>(
    py: Python<'py>,
    scenario: Option<HashMap<String, Bound<'py, PyAny>>>,
    settings: Option<HashMap<String, Bound<'py, PyAny>>>,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario_kv = key_values(scenario)?;
    let mut run_kv = key_values(settings)?;
    for key in CAMERA_KEYS {
        if !run_kv.contains(key) {
            if let Some(v) = scenario_kv.raw(key) {
                run_kv.set(key, v).map_err(err)?;
            }
        }
    }
    let sim = ScenarioConfig::from_key_values(&scenario_kv).and_then(|s| s.simulate()).map_err(err)?;
    let settings = LocalizerSettings::from_key_values(&run_kv).map_err(err)?;
    let initial = settings.init.pose.unwrap_or(sim.truth[0].pose);
    let output = py
        .detach(|| localize::run(&sim.map, &sim.odometry, &sim.observations, &settings, &initial))
        .map_err(err)?;
    let truth: Vec<_> = sim.truth.iter().map(|s| s.pose).collect();
    let d = PyDict::new(py);
    d.set_item("trajectory", output.poses().into_iter().map(PyPose2).collect::<Vec<_>>())?;
    d.set_item("modes", output.trajectory.iter().map(|(_, m)| m.as_str()).collect::<Vec<_>>())?;
    d.set_item("truth", truth.iter().map(|p| PyPose2(*p)).collect::<Vec<_>>())?;
    d.set_item("diverged", output.diverged())?;
    let est = output.poses();
    let py_est: Vec<PyPose2> = est.into_iter().map(PyPose2).collect();
    let py_truth: Vec<PyPose2> = truth.into_iter().map(PyPose2).collect();
    d.set_item("metrics", compute_metrics(py, py_est, py_truth)?)?;
    Ok(d)
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> u8 {
    py.detach(|| poleloc::cli::run_cli(std::iter::once("poleloc".to_string()).chain(args)))
}

#[pymodule]
fn poleloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose2>()?;
    m.add_class::<PyPole>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_function(wrap_pyfunction!(project_pole, m)?)?;
    m.add_function(wrap_pyfunction!(associate, m)?)?;
    m.add_function(wrap_pyfunction!(horizontal_angle, m)?)?;
    m.add_function(wrap_pyfunction!(translation_from_triple, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_rotation, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(localize_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
