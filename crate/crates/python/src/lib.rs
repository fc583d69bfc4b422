//! Python bindings for the asyncbev workbench.
//!
//! Points cross the boundary as tuples: `(x, y, z)` for positions and
//! `(x, y, z, vx, vy)` for radar returns. Timestamps are integer
//! microseconds. Grids come back as nested lists indexed `[x][y]`.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use asyncbev::eval::{self, Ladders, SweepParams};
use asyncbev::frames::{self, Point3, Rotation, Timestamp};
use asyncbev::ingest::{self, LogMeta};
use asyncbev::sensors::{self, Payload, RadarPoint, SensorConfig};
use asyncbev::syncbuild::{self, LatencyConfig, Modality};
use asyncbev::worldsim::{self, ScenarioParams};

create_exception!(asyncbev, AsyncBevError, PyException);

fn fail(e: impl Display) -> PyErr {
    AsyncBevError::new_err(e.to_string())
}

fn tuple3(p: &Point3) -> (f64, f64, f64) {
    (p.x, p.y, p.z)
}

type RadarTuple = (f64, f64, f64, f64, f64);

fn radar_from(t: &RadarTuple) -> RadarPoint {
    RadarPoint { position: Point3::new(t.0, t.1, t.2), velocity: [t.3, t.4] }
}

fn radar_to(p: &RadarPoint) -> RadarTuple {
    (p.position.x, p.position.y, p.position.z, p.velocity[0], p.velocity[1])
}

/// Rigid transform: unit-quaternion rotation plus translation.
#[pyclass(name = "Pose", module = "asyncbev", frozen)]
struct PyPose(frames::Pose);

#[pymethods]
impl PyPose {
    /// Planar pose with heading `yaw` (radians) about +z.
    #[new]
    #[pyo3(signature = (x=0.0, y=0.0, z=0.0, yaw=0.0))]
    fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        PyPose(frames::Pose::planar(x, y, z, yaw))
    }

    #[staticmethod]
    fn from_quaternion(wxyz: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        let r = Rotation::from_wxyz(wxyz[0], wxyz[1], wxyz[2], wxyz[3]).map_err(fail)?;
        frames::Pose::new(r, Point3::from(translation)).map(PyPose).map_err(fail)
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        tuple3(&self.0.translation)
    }

    #[getter]
    fn rotation(&self) -> [f64; 4] {
        self.0.rotation.wxyz()
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.0.rotation.yaw()
    }

    fn apply(&self, point: [f64; 3]) -> (f64, f64, f64) {
        tuple3(&self.0.apply(&Point3::from(point)))
    }

    fn compose(&self, other: &PyPose) -> PyPose {
        PyPose(self.0.compose(&other.0))
    }

    fn inverse(&self) -> PyPose {
        PyPose(self.0.inverse())
    }

    fn __repr__(&self) -> String {
        let t = &self.0.translation;
        format!("Pose(t=({:.3}, {:.3}, {:.3}), yaw={:.4})", t.x, t.y, t.z, self.0.rotation.yaw())
    }
}

/// Dense BEV raster.
#[pyclass(name = "BevGrid", module = "asyncbev", frozen)]
struct PyBevGrid(asyncbev::BevGrid);

#[pymethods]
impl PyBevGrid {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.values.dim()
    }

    fn occupied(&self) -> usize {
        self.0.occupied()
    }

    fn total(&self) -> u64 {
        self.0.total()
    }

    fn to_list(&self) -> Vec<Vec<u32>> {
        self.0.values.outer_iter().map(|row| row.to_vec()).collect()
    }

    /// Binary PGM encoding of the grid.
    fn to_pgm<'py>(&self, py: Python<'py>) -> Bound<'py, pyo3::types::PyBytes> {
        pyo3::types::PyBytes::new(py, &self.0.to_pgm())
    }
}

/// Deterministic ego trajectory and traffic.
#[pyclass(name = "Scenario", module = "asyncbev", frozen)]
struct PyScenario(worldsim::Scenario);

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (seed=7, duration_s=20.0, agent_count=12, static_world=false))]
    fn new(seed: u64, duration_s: f64, agent_count: usize, static_world: bool) -> PyResult<Self> {
        let mut params = ScenarioParams { seed, duration_s, agent_count, ..Default::default() };
        if static_world {
            params = params.static_world();
        }
        worldsim::Scenario::generate(&params).map(PyScenario).map_err(fail)
    }

    #[getter]
    fn start_us(&self) -> u64 {
        self.0.start().micros()
    }

    #[getter]
    fn end_us(&self) -> u64 {
        self.0.end().micros()
    }

    fn ego_pose(&self, t_us: u64) -> PyResult<PyPose> {
        self.0.ego_pose_at(Timestamp(t_us)).map(PyPose).map_err(fail)
    }

    /// Ground-truth vehicle mask in the ego frame at `t_us`, default grid.
    fn gt_bev(&self, t_us: u64) -> PyResult<PyBevGrid> {
        worldsim::gt_bev_at(&self.0, Timestamp(t_us), &asyncbev::GridSpec::default())
            .map(PyBevGrid)
            .map_err(fail)
    }
}

/// One row of a latency sweep.
#[pyclass(name = "SweepRow", module = "asyncbev", frozen, get_all)]
struct PySweepRow {
    modality: String,
    target_latency_us: u64,
    achieved_latency_us: f64,
    compensate: bool,
    mean_iou: f64,
    degradation: f64,
    improvement: Option<f64>,
}

#[pymethods]
impl PySweepRow {
    fn __repr__(&self) -> String {
        format!(
            "SweepRow({} {}us comp={} iou={:.4})",
            self.modality, self.target_latency_us, self.compensate, self.mean_iou
        )
    }
}

/// Latency sweep output: per-rung rows plus the camera-only baseline.
#[pyclass(name = "Sweep", module = "asyncbev", frozen)]
struct PySweep(eval::SweepResult);

#[pymethods]
impl PySweep {
    #[getter]
    fn rows(&self) -> Vec<PySweepRow> {
        self.0
            .rows
            .iter()
            .map(|r| PySweepRow {
                modality: r.modality.name().to_string(),
                target_latency_us: r.target_latency_us,
                achieved_latency_us: r.achieved_latency_us,
                compensate: r.compensate,
                mean_iou: r.mean_iou,
                degradation: r.degradation,
                improvement: r.improvement,
            })
            .collect()
    }

    #[getter]
    fn camera_only_iou(&self) -> f64 {
        self.0.camera_only.mean()
    }

    fn csv(&self) -> PyResult<String> {
        let bytes = eval::report_csv(&self.0).map_err(fail)?;
        String::from_utf8(bytes).map_err(fail)
    }
}

/// Latency-shifted dataset variant built from a capture log.
#[pyclass(name = "DatasetVariant", module = "asyncbev", frozen)]
struct PyVariant(syncbuild::DatasetVariant);

#[pymethods]
impl PyVariant {
    #[getter]
    fn modality(&self) -> &'static str {
        self.0.config.modality.name()
    }

    #[getter]
    fn target_latency_us(&self) -> u64 {
        self.0.config.target_latency_us
    }

    #[getter]
    fn compensate(&self) -> bool {
        self.0.config.compensate
    }

    #[getter]
    fn mean_achieved_latency_us(&self) -> f64 {
        self.0.mean_achieved_latency_us()
    }

    #[getter]
    fn keyframes(&self) -> Vec<usize> {
        self.0.frames.iter().map(|f| f.keyframe_index).collect()
    }

    #[getter]
    fn dropped_us(&self) -> Vec<u64> {
        self.0.dropped.iter().map(|t| t.micros()).collect()
    }

    /// Points of one keyframe in the camera-time ego frame.
    ///
    /// Radar variants yield `(x, y, z, vx, vy)` tuples; LiDAR variants
    /// yield `(x, y, z, 0.0, 0.0)`.
    fn points(&self, keyframe: usize) -> PyResult<Vec<RadarTuple>> {
        let frame = self
            .0
            .frame_for_keyframe(keyframe)
            .ok_or_else(|| fail(format!("keyframe {keyframe} is not in the variant")))?;
        Ok(match &frame.payload {
            Payload::Radar(pts) => pts.iter().map(radar_to).collect(),
            Payload::Lidar(pts) => pts.iter().map(|p| (p.position.x, p.position.y, p.position.z, 0.0, 0.0)).collect(),
            Payload::None => Vec::new(),
        })
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        syncbuild::write_variant(&self.0, dir).map(drop).map_err(fail)
    }

    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<PyVariant> {
        syncbuild::read_variant(dir).map(PyVariant).map_err(fail)
    }
}

/// On-disk capture log.
#[pyclass(name = "CaptureLog", module = "asyncbev", frozen)]
struct PyCaptureLog(asyncbev::CaptureLog);

#[pymethods]
impl PyCaptureLog {
    /// Simulates a scenario, writes the log to `out`, and returns it.
    #[staticmethod]
    #[pyo3(signature = (out, seed=7, duration_s=20.0, agent_count=12, noiseless=false))]
    fn simulate(out: PathBuf, seed: u64, duration_s: f64, agent_count: usize, noiseless: bool) -> PyResult<Self> {
        let params = ScenarioParams { seed, duration_s, agent_count, ..Default::default() };
        let scenario = worldsim::Scenario::generate(&params).map_err(fail)?;
        let mut cfg = SensorConfig::default();
        if noiseless {
            cfg = cfg.noiseless();
        }
        let records = sensors::simulate(&scenario, &cfg, seed).map_err(fail)?;
        let meta = LogMeta { scenario, sensor_config: cfg, capture_seed: seed };
        ingest::write_log(&records, &meta, out).map(PyCaptureLog).map_err(fail)
    }

    /// Reads a log; with `validate=False` invariant violations are not checked.
    #[staticmethod]
    #[pyo3(signature = (dir, validate=true))]
    fn read(dir: PathBuf, validate: bool) -> PyResult<Self> {
        let log = if validate { ingest::read_log(dir) } else { ingest::read_log_unvalidated(dir) };
        log.map(PyCaptureLog).map_err(fail)
    }

    fn violations(&self) -> Vec<String> {
        ingest::validate_log(&self.0).iter().map(|v| v.to_string()).collect()
    }

    /// `(index, camera timestamp in microseconds)` per keyframe.
    fn keyframes(&self) -> PyResult<Vec<(usize, u64)>> {
        let kfs = self.0.keyframes().map_err(fail)?;
        Ok(kfs.iter().map(|k| (k.index, k.timestamp.micros())).collect())
    }

    #[pyo3(signature = (modality, latency_ms, compensate=false))]
    fn build_variant(&self, modality: &str, latency_ms: u64, compensate: bool) -> PyResult<PyVariant> {
        let modality = Modality::parse(modality).ok_or_else(|| fail(format!("unknown modality {modality:?}")))?;
        let cfg = LatencyConfig::new(modality, latency_ms * 1000, compensate).map_err(fail)?;
        syncbuild::build_variant(&self.0, &cfg).map(PyVariant).map_err(fail)
    }

    /// Runs the default latency ladders. `seed` defaults to the capture seed.
    #[pyo3(signature = (seed=None, jobs=0))]
    fn sweep(&self, py: Python<'_>, seed: Option<u64>, jobs: usize) -> PyResult<PySweep> {
        let params = SweepParams { seed: seed.unwrap_or(self.0.meta.capture_seed), jobs, ..Default::default() };
        let log = &self.0;
        py.detach(|| eval::run_sweep(log, &Ladders::default(), &params)).map(PySweep).map_err(fail)
    }
}

/// `P_t = P_{t-1} + v * (t_cam - t_radar)` on `(x, y, z, vx, vy)` tuples.
#[pyfunction]
fn compensate_radar(points: Vec<RadarTuple>, t_radar_us: u64, t_cam_us: u64) -> PyResult<Vec<RadarTuple>> {
    let pts: Vec<RadarPoint> = points.iter().map(radar_from).collect();
    let out = syncbuild::compensate_radar(&pts, Timestamp(t_radar_us), Timestamp(t_cam_us)).map_err(fail)?;
    Ok(out.iter().map(radar_to).collect())
}

/// Moves points from the `src_ego` frame into the `dst_ego` frame.
#[pyfunction]
fn retarget_points(points: Vec<[f64; 3]>, src_ego: &PyPose, dst_ego: &PyPose) -> Vec<(f64, f64, f64)> {
    let pts: Vec<Point3> = points.into_iter().map(Point3::from).collect();
    frames::retarget_points(&pts, &src_ego.0, &dst_ego.0).iter().map(tuple3).collect()
}

#[pyfunction]
fn iou(pred: &PyBevGrid, gt: &PyBevGrid) -> PyResult<f64> {
    eval::iou(&pred.0, &gt.0).map_err(fail)
}

#[pymodule(name = "asyncbev")]
fn asyncbev_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AsyncBevError", m.py().get_type::<AsyncBevError>())?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyBevGrid>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySweepRow>()?;
    m.add_class::<PySweep>()?;
    m.add_class::<PyVariant>()?;
    m.add_class::<PyCaptureLog>()?;
    m.add_function(wrap_pyfunction!(compensate_radar, m)?)?;
    m.add_function(wrap_pyfunction!(retarget_points, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    Ok(())
}
