//! Capture log persisted as nuScenes-style relational tables.
//!
//! Directory layout:
//!
//! ```text
//! <dir>/scenario.json           scenario, sensor config and capture seed
//! <dir>/sample.json             keyframes (token, timestamp, prev, next)
//! <dir>/sample_data.json        every sweep and camera trigger
//! <dir>/ego_pose.json           ego-to-global pose per sample_data row
//! <dir>/calibrated_sensor.json  sensor-to-ego extrinsics
//! <dir>/blobs/<token>.bin       point payloads
//! ```
//!
//! Radar blobs hold 5 little-endian f32 per point `(x, y, z, vx, vy)`, LiDAR
//! blobs 3 per point `(x, y, z)`. Points are stored in the sensor frame.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameError, Point3, Pose, PoseRecord, Timestamp};
use crate::sensors::{CaptureRecord, LidarPoint, Payload, RadarPoint, SensorConfig, SensorKind};
use crate::worldsim::Scenario;

pub const SCENARIO_TABLE: &str = "scenario";
pub const SAMPLE_TABLE: &str = "sample";
pub const SAMPLE_DATA_TABLE: &str = "sample_data";
pub const EGO_POSE_TABLE: &str = "ego_pose";
pub const CALIBRATED_SENSOR_TABLE: &str = "calibrated_sensor";
pub const BLOB_DIR: &str = "blobs";

pub const RADAR_STRIDE: usize = 5 * 4;
pub const LIDAR_STRIDE: usize = 3 * 4;
/// Two leading keyframes are discarded by the dataset builder, so a usable
/// log needs at least one more.
pub const MIN_KEYFRAMES: usize = 3;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("schema error: table `{table}`: {detail}")]
    Schema { table: String, detail: String },
    #[error("parse error: table `{table}` at byte {offset}: {message}")]
    Parse { table: String, offset: usize, message: String },
    #[error("referential error: {table} row `{row}` field `{field}` references missing `{target}`")]
    Referential { table: String, row: String, field: String, target: String },
    #[error("blob error: {path}: expected {expected} bytes, got {actual}")]
    Blob { path: String, expected: u64, actual: u64 },
    #[error("blob error: {path}: file missing")]
    BlobMissing { path: String },
    #[error("invalid log: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("I/O error at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.display().to_string(), source }
}

/// One invariant violation found by [`validate_log`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DanglingReference { table: String, row: String, field: String, target: String },
    DuplicateToken { table: String, token: String },
    Ordering { sensor: SensorKind, token: String, previous: Timestamp, timestamp: Timestamp },
    SampleOrdering { token: String },
    PayloadMismatch { token: String, detail: String },
    PoseTimestamp { token: String, expected: Timestamp, found: Timestamp },
    NonUnitRotation { table: String, token: String },
    KeyframeCamera { sample: String, found: usize },
    InsufficientKeyframes { found: usize },
    InvalidScenario(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingReference { table, row, field, target } => {
                write!(f, "referential violation: {table} row `{row}` field `{field}` -> missing `{target}`")
            }
            Violation::DuplicateToken { table, token } => {
                write!(f, "duplicate token `{token}` in {table}")
            }
            Violation::Ordering { sensor, token, previous, timestamp } => write!(
                f,
                "ordering violation: sensor {} row `{token}` at {timestamp} does not follow {previous}",
                sensor.name()
            ),
            Violation::SampleOrdering { token } => {
                write!(f, "ordering violation: sample `{token}` is not after its predecessor")
            }
            Violation::PayloadMismatch { token, detail } => {
                write!(f, "payload violation: `{token}`: {detail}")
            }
            Violation::PoseTimestamp { token, expected, found } => write!(
                f,
                "pose violation: `{token}` at {expected} uses an ego pose stamped {found}"
            ),
            Violation::NonUnitRotation { table, token } => {
                write!(f, "rotation violation: {table} row `{token}` is not a unit quaternion")
            }
            Violation::KeyframeCamera { sample, found } => write!(
                f,
                "keyframe violation: sample `{sample}` has {found} CAM_FRONT rows, expected 1"
            ),
            Violation::InsufficientKeyframes { found } => write!(
                f,
                "insufficient keyframes: found {found}, need at least {MIN_KEYFRAMES}"
            ),
            Violation::InvalidScenario(msg) => write!(f, "scenario violation: {msg}"),
        }
    }
}

/// Scenario metadata stored alongside the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub scenario: Scenario,
    pub sensor_config: SensorConfig,
    pub capture_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub token: String,
    pub timestamp: Timestamp,
    pub prev: String,
    pub next: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDataRow {
    pub token: String,
    pub sample_token: Option<String>,
    pub sensor: SensorKind,
    pub timestamp: Timestamp,
    pub ego_pose_token: String,
    pub calibrated_sensor_token: String,
    pub is_key_frame: bool,
    pub filename: Option<String>,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoPoseRow {
    pub token: String,
    pub timestamp: Timestamp,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSensorRow {
    pub token: String,
    pub sensor: SensorKind,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

fn row_pose(rotation: [f64; 4], translation: [f64; 3]) -> Result<Pose, FrameError> {
    Pose::try_from(PoseRecord { rotation, translation })
}

fn is_unit(q: [f64; 4]) -> bool {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    (n - 1.0).abs() <= 1e-9
}

impl EgoPoseRow {
    pub fn pose(&self) -> Result<Pose, FrameError> {
        row_pose(self.rotation, self.translation)
    }
}

impl CalibratedSensorRow {
    pub fn pose(&self) -> Result<Pose, FrameError> {
        row_pose(self.rotation, self.translation)
    }
}

/// A keyframe with its reference (camera-trigger) ego pose.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeRef {
    pub index: usize,
    pub sample_token: String,
    pub timestamp: Timestamp,
    pub ego_pose: Pose,
}

/// A stored sweep with the pose taking its points to the global frame.
#[derive(Debug, Clone, Copy)]
pub struct SweepRef<'a> {
    pub token: &'a str,
    pub timestamp: Timestamp,
    pub sensor_to_global: Pose,
    pub payload: &'a Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureLog {
    pub meta: LogMeta,
    pub samples: Vec<SampleRow>,
    pub sample_data: Vec<SampleDataRow>,
    pub ego_poses: Vec<EgoPoseRow>,
    pub calibrated_sensors: Vec<CalibratedSensorRow>,
    /// Keyed by sample_data token.
    pub payloads: BTreeMap<String, Payload>,
}

pub fn sample_data_token(sensor: SensorKind, t: Timestamp) -> String {
    format!("{}-{:012}", sensor.name().to_ascii_lowercase(), t.micros())
}

fn calib_token(sensor: SensorKind) -> String {
    format!("calib-{}", sensor.name().to_ascii_lowercase())
}

fn blob_path(token: &str) -> String {
    format!("{BLOB_DIR}/{token}.bin")
}

impl CaptureLog {
    /// In-memory log from capture records, with identity extrinsics.
    /// Camera triggers become samples; for each sample the latest sweep of
    /// every other sensor at or before it is flagged as a key frame.
    pub fn from_records(meta: LogMeta, records: &[CaptureRecord]) -> CaptureLog {
        let mut log = CaptureLog {
            meta,
            samples: Vec::new(),
            sample_data: Vec::new(),
            ego_poses: Vec::new(),
            calibrated_sensors: Vec::new(),
            payloads: BTreeMap::new(),
        };
        let mut sensors: Vec<SensorKind> = records.iter().map(|r| r.sensor).collect();
        sensors.sort();
        sensors.dedup();
        for s in &sensors {
            let id = Pose::identity();
            log.calibrated_sensors.push(CalibratedSensorRow {
                token: calib_token(*s),
                sensor: *s,
                rotation: id.rotation.wxyz(),
                translation: id.translation.into(),
            });
        }

        for r in records {
            let token = sample_data_token(r.sensor, r.timestamp);
            let ego_token = format!("ego-{token}");
            let sample_token = (r.sensor == SensorKind::CamFrontTrigger).then(|| {
                let tok = format!("sample-{:05}", log.samples.len());
                log.samples.push(SampleRow {
                    token: tok.clone(),
                    timestamp: r.timestamp,
                    prev: String::new(),
                    next: String::new(),
                });
                tok
            });
            log.ego_poses.push(EgoPoseRow {
                token: ego_token.clone(),
                timestamp: r.timestamp,
                rotation: r.ego_pose.rotation.wxyz(),
                translation: r.ego_pose.translation.into(),
            });
            let has_blob = r.sensor != SensorKind::CamFrontTrigger;
            log.sample_data.push(SampleDataRow {
                token: token.clone(),
                is_key_frame: sample_token.is_some(),
                sample_token,
                sensor: r.sensor,
                timestamp: r.timestamp,
                ego_pose_token: ego_token,
                calibrated_sensor_token: calib_token(r.sensor),
                filename: has_blob.then(|| blob_path(&token)),
                num_points: r.payload.len(),
            });
            log.payloads.insert(token, r.payload.clone());
        }

        let n = log.samples.len();
        for i in 0..n {
            if i > 0 {
                log.samples[i].prev = log.samples[i - 1].token.clone();
            }
            if i + 1 < n {
                log.samples[i].next = log.samples[i + 1].token.clone();
            }
        }

        // key-frame flags for the sweeps paired with each sample
        let samples: Vec<(String, Timestamp)> =
            log.samples.iter().map(|s| (s.token.clone(), s.timestamp)).collect();
        for sensor in sensors.into_iter().filter(|s| *s != SensorKind::CamFrontTrigger) {
            let rows: Vec<usize> = (0..log.sample_data.len())
                .filter(|&i| log.sample_data[i].sensor == sensor)
                .collect();
            for (tok, t) in &samples {
                let latest = rows
                    .iter()
                    .copied()
                    .filter(|&i| log.sample_data[i].timestamp <= *t)
                    .max_by_key(|&i| log.sample_data[i].timestamp);
                if let Some(i) = latest {
                    if log.sample_data[i].sample_token.is_none() {
                        log.sample_data[i].is_key_frame = true;
                        log.sample_data[i].sample_token = Some(tok.clone());
                    }
                }
            }
        }
        log
    }

    /// Payload values rounded through f32, as they will read back from disk.
    pub fn quantized(mut self) -> CaptureLog {
        let q = |v: f64| v as f32 as f64;
        let qp = |p: Point3| Point3::new(q(p.x), q(p.y), q(p.z));
        for payload in self.payloads.values_mut() {
            match payload {
                Payload::Radar(pts) => {
                    for p in pts {
                        p.position = qp(p.position);
                        p.velocity = [q(p.velocity[0]), q(p.velocity[1])];
                    }
                }
                Payload::Lidar(pts) => {
                    for p in pts {
                        p.position = qp(p.position);
                    }
                }
                Payload::None => {}
            }
        }
        self
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), LogError> {
        let dir = dir.as_ref();
        let blobs = dir.join(BLOB_DIR);
        fs::create_dir_all(&blobs).map_err(io_err(&blobs))?;
        write_table(dir, SCENARIO_TABLE, &self.meta)?;
        write_table(dir, SAMPLE_TABLE, &self.samples)?;
        write_table(dir, SAMPLE_DATA_TABLE, &self.sample_data)?;
        write_table(dir, EGO_POSE_TABLE, &self.ego_poses)?;
        write_table(dir, CALIBRATED_SENSOR_TABLE, &self.calibrated_sensors)?;
        for row in &self.sample_data {
            let (Some(file), Some(payload)) = (&row.filename, self.payloads.get(&row.token)) else {
                continue;
            };
            let path = dir.join(file);
            fs::write(&path, encode_payload(payload)).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn sample_data_row(&self, token: &str) -> Option<&SampleDataRow> {
        self.sample_data.iter().find(|r| r.token == token)
    }

    fn ego_pose_index(&self) -> HashMap<&str, &EgoPoseRow> {
        self.ego_poses.iter().map(|r| (r.token.as_str(), r)).collect()
    }

    fn calib_index(&self) -> HashMap<&str, &CalibratedSensorRow> {
        self.calibrated_sensors.iter().map(|r| (r.token.as_str(), r)).collect()
    }

    fn missing(table: &str, row: &str, field: &str, target: &str) -> LogError {
        LogError::Referential {
            table: table.into(),
            row: row.into(),
            field: field.into(),
            target: target.into(),
        }
    }

    /// Keyframes in time order, each with the ego pose of its camera trigger.
    pub fn keyframes(&self) -> Result<Vec<KeyframeRef>, LogError> {
        let poses = self.ego_pose_index();
        let mut cams: HashMap<&str, &SampleDataRow> = HashMap::new();
        for row in &self.sample_data {
            if let (SensorKind::CamFrontTrigger, Some(s)) = (row.sensor, &row.sample_token) {
                cams.insert(s.as_str(), row);
            }
        }
        let mut out = Vec::with_capacity(self.samples.len());
        for (index, s) in self.samples.iter().enumerate() {
            let cam = cams.get(s.token.as_str()).ok_or_else(|| {
                Self::missing(SAMPLE_TABLE, &s.token, "CAM_FRONT sample_data", &s.token)
            })?;
            let pose = poses.get(cam.ego_pose_token.as_str()).ok_or_else(|| {
                Self::missing(SAMPLE_DATA_TABLE, &cam.token, "ego_pose_token", &cam.ego_pose_token)
            })?;
            out.push(KeyframeRef {
                index,
                sample_token: s.token.clone(),
                timestamp: s.timestamp,
                ego_pose: pose.pose()?,
            });
        }
        Ok(out)
    }

    /// Sweeps of one sensor in time order, with sensor-to-global poses
    /// (`ego_pose ∘ calibrated_sensor`).
    pub fn sweeps(&self, sensor: SensorKind) -> Result<Vec<SweepRef<'_>>, LogError> {
        let poses = self.ego_pose_index();
        let calibs = self.calib_index();
        let mut out = Vec::new();
        for row in self.sample_data.iter().filter(|r| r.sensor == sensor) {
            let ego = poses.get(row.ego_pose_token.as_str()).ok_or_else(|| {
                Self::missing(SAMPLE_DATA_TABLE, &row.token, "ego_pose_token", &row.ego_pose_token)
            })?;
            let calib = calibs.get(row.calibrated_sensor_token.as_str()).ok_or_else(|| {
                Self::missing(
                    SAMPLE_DATA_TABLE,
                    &row.token,
                    "calibrated_sensor_token",
                    &row.calibrated_sensor_token,
                )
            })?;
            let payload = self
                .payloads
                .get(&row.token)
                .ok_or_else(|| Self::missing(SAMPLE_DATA_TABLE, &row.token, "payload", &row.token))?;
            out.push(SweepRef {
                token: &row.token,
                timestamp: row.timestamp,
                sensor_to_global: ego.pose()?.compose(&calib.pose()?),
                payload,
            });
        }
        out.sort_by_key(|s| s.timestamp);
        Ok(out)
    }

    /// Rebuilds capture records (points moved into the ego frame).
    pub fn records(&self) -> Result<Vec<CaptureRecord>, LogError> {
        let poses = self.ego_pose_index();
        let calibs = self.calib_index();
        let mut out = Vec::with_capacity(self.sample_data.len());
        for row in &self.sample_data {
            let ego = poses
                .get(row.ego_pose_token.as_str())
                .ok_or_else(|| Self::missing(SAMPLE_DATA_TABLE, &row.token, "ego_pose_token", &row.ego_pose_token))?
                .pose()?;
            let calib = calibs
                .get(row.calibrated_sensor_token.as_str())
                .map(|c| c.pose())
                .transpose()?
                .unwrap_or_default();
            let payload = match self.payloads.get(&row.token).cloned().unwrap_or(Payload::None) {
                Payload::Radar(pts) => Payload::Radar(
                    pts.into_iter()
                        .map(|p| RadarPoint {
                            position: calib.apply(&p.position),
                            velocity: calib.rotation.rotate_planar(p.velocity),
                        })
                        .collect(),
                ),
                Payload::Lidar(pts) => Payload::Lidar(
                    pts.into_iter().map(|p| LidarPoint { position: calib.apply(&p.position) }).collect(),
                ),
                Payload::None => Payload::None,
            };
            out.push(CaptureRecord { sensor: row.sensor, timestamp: row.timestamp, ego_pose: ego, payload });
        }
        Ok(out)
    }
}

fn write_table<T: Serialize + ?Sized>(dir: &Path, table: &str, value: &T) -> Result<(), LogError> {
    let path = dir.join(format!("{table}.json"));
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| LogError::Schema {
        table: table.into(),
        detail: e.to_string(),
    })?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(io_err(&path))
}

pub fn stride(sensor: SensorKind) -> usize {
    match sensor {
        SensorKind::Radar => RADAR_STRIDE,
        SensorKind::Lidar => LIDAR_STRIDE,
        SensorKind::CamFrontTrigger => 0,
    }
}

pub fn encode_payload(payload: &Payload) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() * RADAR_STRIDE);
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    match payload {
        Payload::Radar(pts) => {
            for p in pts {
                for v in [p.position.x, p.position.y, p.position.z, p.velocity[0], p.velocity[1]] {
                    put(v);
                }
            }
        }
        Payload::Lidar(pts) => {
            for p in pts {
                for v in [p.position.x, p.position.y, p.position.z] {
                    put(v);
                }
            }
        }
        Payload::None => {}
    }
    out
}

/// Decodes a blob whose length has already been checked against the stride.
pub fn decode_payload(sensor: SensorKind, bytes: &[u8]) -> Payload {
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    match sensor {
        SensorKind::Radar => Payload::Radar(
            floats
                .chunks_exact(5)
                .map(|f| RadarPoint { position: Point3::new(f[0], f[1], f[2]), velocity: [f[3], f[4]] })
                .collect(),
        ),
        SensorKind::Lidar => Payload::Lidar(
            floats
                .chunks_exact(3)
                .map(|f| LidarPoint { position: Point3::new(f[0], f[1], f[2]) })
                .collect(),
        ),
        SensorKind::CamFrontTrigger => Payload::None,
    }
}

/// Builds the log, writes it under `dir` and returns it as it reads back.
pub fn write_log(
    records: &[CaptureRecord],
    meta: &LogMeta,
    dir: impl AsRef<Path>,
) -> Result<CaptureLog, LogError> {
    let log = CaptureLog::from_records(meta.clone(), records).quantized();
    log.write(dir)?;
    Ok(log)
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for _ in 1..line {
        match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(p) => offset += p + 1,
            None => return bytes.len(),
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

fn read_table<T: DeserializeOwned>(dir: &Path, table: &str) -> Result<T, LogError> {
    let path = dir.join(format!("{table}.json"));
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(LogError::Schema { table: table.into(), detail: "table file missing".into() })
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    serde_json::from_slice(&bytes).map_err(|e| {
        if e.is_data() {
            LogError::Schema { table: table.into(), detail: e.to_string() }
        } else {
            LogError::Parse {
                table: table.into(),
                offset: byte_offset(&bytes, e.line(), e.column()),
                message: e.to_string(),
            }
        }
    })
}

/// Parses tables, resolves references and loads blobs without running the
/// full validator.
pub fn read_log_unvalidated(dir: impl AsRef<Path>) -> Result<CaptureLog, LogError> {
    let dir = dir.as_ref();
    let meta: LogMeta = read_table(dir, SCENARIO_TABLE)?;
    let samples: Vec<SampleRow> = read_table(dir, SAMPLE_TABLE)?;
    let sample_data: Vec<SampleDataRow> = read_table(dir, SAMPLE_DATA_TABLE)?;
    let ego_poses: Vec<EgoPoseRow> = read_table(dir, EGO_POSE_TABLE)?;
    let calibrated_sensors: Vec<CalibratedSensorRow> = read_table(dir, CALIBRATED_SENSOR_TABLE)?;

    let mut log = CaptureLog {
        meta,
        samples,
        sample_data,
        ego_poses,
        calibrated_sensors,
        payloads: BTreeMap::new(),
    };
    if let Some(Violation::DanglingReference { table, row, field, target }) =
        dangling_references(&log).into_iter().next()
    {
        return Err(LogError::Referential { table, row, field, target });
    }

    let mut payloads = BTreeMap::new();
    for row in &log.sample_data {
        let payload = match &row.filename {
            None => Payload::None,
            Some(file) => {
                let path = dir.join(file);
                let bytes = match fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {
                        return Err(LogError::BlobMissing { path: file.clone() })
                    }
                    Err(e) => return Err(io_err(&path)(e)),
                };
                let expected = (row.num_points * stride(row.sensor)) as u64;
                if bytes.len() as u64 != expected {
                    return Err(LogError::Blob { path: file.clone(), expected, actual: bytes.len() as u64 });
                }
                decode_payload(row.sensor, &bytes)
            }
        };
        payloads.insert(row.token.clone(), payload);
    }
    log.payloads = payloads;
    Ok(log)
}

/// Reads and fully validates a log directory.
pub fn read_log(dir: impl AsRef<Path>) -> Result<CaptureLog, LogError> {
    let log = read_log_unvalidated(dir)?;
    let violations = validate_log(&log);
    if !violations.is_empty() {
        return Err(LogError::Invalid(violations));
    }
    Ok(log)
}

fn dangling_references(log: &CaptureLog) -> Vec<Violation> {
    let samples: HashSet<&str> = log.samples.iter().map(|r| r.token.as_str()).collect();
    let poses: HashSet<&str> = log.ego_poses.iter().map(|r| r.token.as_str()).collect();
    let calibs: HashSet<&str> = log.calibrated_sensors.iter().map(|r| r.token.as_str()).collect();
    let mut out = Vec::new();
    let mut check = |table: &str, row: &str, field: &str, target: &str, set: &HashSet<&str>| {
        if !set.contains(target) {
            out.push(Violation::DanglingReference {
                table: table.into(),
                row: row.into(),
                field: field.into(),
                target: target.into(),
            });
        }
    };
    for s in &log.samples {
        for (field, target) in [("prev", &s.prev), ("next", &s.next)] {
            if !target.is_empty() {
                check(SAMPLE_TABLE, &s.token, field, target, &samples);
            }
        }
    }
    for r in &log.sample_data {
        check(SAMPLE_DATA_TABLE, &r.token, "ego_pose_token", &r.ego_pose_token, &poses);
        check(SAMPLE_DATA_TABLE, &r.token, "calibrated_sensor_token", &r.calibrated_sensor_token, &calibs);
        if let Some(s) = &r.sample_token {
            check(SAMPLE_DATA_TABLE, &r.token, "sample_token", s, &samples);
        }
    }
    out
}

fn duplicates<'a>(table: &str, tokens: impl Iterator<Item = &'a str>, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for t in tokens {
        if !seen.insert(t) {
            out.push(Violation::DuplicateToken { table: table.into(), token: t.into() });
        }
    }
}

/// Every invariant violation in `log`; empty means valid.
pub fn validate_log(log: &CaptureLog) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Err(e) = log.meta.scenario.validate() {
        out.push(Violation::InvalidScenario(e.to_string()));
    }
    duplicates(SAMPLE_TABLE, log.samples.iter().map(|r| r.token.as_str()), &mut out);
    duplicates(SAMPLE_DATA_TABLE, log.sample_data.iter().map(|r| r.token.as_str()), &mut out);
    duplicates(EGO_POSE_TABLE, log.ego_poses.iter().map(|r| r.token.as_str()), &mut out);
    duplicates(
        CALIBRATED_SENSOR_TABLE,
        log.calibrated_sensors.iter().map(|r| r.token.as_str()),
        &mut out,
    );
    out.extend(dangling_references(log));

    for r in &log.ego_poses {
        if !is_unit(r.rotation) {
            out.push(Violation::NonUnitRotation { table: EGO_POSE_TABLE.into(), token: r.token.clone() });
        }
    }
    for r in &log.calibrated_sensors {
        if !is_unit(r.rotation) {
            out.push(Violation::NonUnitRotation {
                table: CALIBRATED_SENSOR_TABLE.into(),
                token: r.token.clone(),
            });
        }
    }

    for pair in log.samples.windows(2) {
        if pair[1].timestamp <= pair[0].timestamp {
            out.push(Violation::SampleOrdering { token: pair[1].token.clone() });
        }
    }

    let mut last: HashMap<SensorKind, Timestamp> = HashMap::new();
    let poses: HashMap<&str, &EgoPoseRow> = log.ego_poses.iter().map(|r| (r.token.as_str(), r)).collect();
    let mut cams_per_sample: HashMap<&str, usize> = HashMap::new();
    for r in &log.sample_data {
        if let Some(prev) = last.insert(r.sensor, r.timestamp) {
            if r.timestamp <= prev {
                out.push(Violation::Ordering {
                    sensor: r.sensor,
                    token: r.token.clone(),
                    previous: prev,
                    timestamp: r.timestamp,
                });
            }
        }
        if let Some(pose) = poses.get(r.ego_pose_token.as_str()) {
            if pose.timestamp != r.timestamp {
                out.push(Violation::PoseTimestamp {
                    token: r.token.clone(),
                    expected: r.timestamp,
                    found: pose.timestamp,
                });
            }
        }
        if r.sensor == SensorKind::CamFrontTrigger {
            if let Some(s) = &r.sample_token {
                *cams_per_sample.entry(s.as_str()).or_default() += 1;
            }
        }
        let wants_blob = r.sensor != SensorKind::CamFrontTrigger;
        if wants_blob != r.filename.is_some() {
            out.push(Violation::PayloadMismatch {
                token: r.token.clone(),
                detail: format!("{} row {} a blob file", r.sensor.name(), if wants_blob { "lacks" } else { "has" }),
            });
        }
        match log.payloads.get(&r.token) {
            None => out.push(Violation::PayloadMismatch { token: r.token.clone(), detail: "no payload loaded".into() }),
            Some(p) if !p.matches(r.sensor) => out.push(Violation::PayloadMismatch {
                token: r.token.clone(),
                detail: format!("payload kind does not match sensor {}", r.sensor.name()),
            }),
            Some(p) if p.len() != r.num_points => out.push(Violation::PayloadMismatch {
                token: r.token.clone(),
                detail: format!("num_points {} but payload holds {}", r.num_points, p.len()),
            }),
            Some(_) => {}
        }
    }
    for s in &log.samples {
        let found = cams_per_sample.get(s.token.as_str()).copied().unwrap_or(0);
        if found != 1 {
            out.push(Violation::KeyframeCamera { sample: s.token.clone(), found });
        }
    }
    if log.samples.len() < MIN_KEYFRAMES {
        out.push(Violation::InsufficientKeyframes { found: log.samples.len() });
    }
    out
}

pub fn table_path(dir: impl AsRef<Path>, table: &str) -> PathBuf {
    dir.as_ref().join(format!("{table}.json"))
}

/// Extrinsic for `sensor`, or `None` when the log has no calibration row.
pub fn extrinsic(log: &CaptureLog, sensor: SensorKind) -> Option<Result<Pose, FrameError>> {
    log.calibrated_sensors.iter().find(|c| c.sensor == sensor).map(|c| c.pose())
}

/// Replaces the extrinsic of `sensor`, re-expressing stored points in the new
/// sensor frame so the log describes the same world.
pub fn set_extrinsic(log: &mut CaptureLog, sensor: SensorKind, sensor_to_ego: Pose) -> Result<(), LogError> {
    let old = extrinsic(log, sensor).transpose()?.unwrap_or_default();
    let change = sensor_to_ego.inverse().compose(&old);
    for row in log.sample_data.iter().filter(|r| r.sensor == sensor) {
        if let Some(p) = log.payloads.get_mut(&row.token) {
            match p {
                Payload::Radar(pts) => {
                    for q in pts {
                        q.position = change.apply(&q.position);
                        q.velocity = change.rotation.rotate_planar(q.velocity);
                    }
                }
                Payload::Lidar(pts) => {
                    for q in pts {
                        q.position = change.apply(&q.position);
                    }
                }
                Payload::None => {}
            }
        }
    }
    let rec: PoseRecord = sensor_to_ego.into();
    match log.calibrated_sensors.iter_mut().find(|c| c.sensor == sensor) {
        Some(c) => {
            c.rotation = rec.rotation;
            c.translation = rec.translation;
        }
        None => log.calibrated_sensors.push(CalibratedSensorRow {
            token: calib_token(sensor),
            sensor,
            rotation: rec.rotation,
            translation: rec.translation,
        }),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::simulate;
    use crate::worldsim::ScenarioParams;

    fn small_log(duration_s: f64) -> (Vec<CaptureRecord>, LogMeta) {
        let scenario = Scenario::generate(&ScenarioParams { duration_s, ..Default::default() }).unwrap();
        let cfg = SensorConfig::default();
        let records = simulate(&scenario, &cfg, 3).unwrap();
        (records, LogMeta { scenario, sensor_config: cfg, capture_seed: 3 })
    }

    #[test]
    fn empty_records_give_empty_tables() {
        let (_, meta) = small_log(2.0);
        let dir = tempfile::tempdir().unwrap();
        let log = write_log(&[], &meta, dir.path()).unwrap();
        assert!(log.samples.is_empty() && log.sample_data.is_empty());
        let back = read_log_unvalidated(dir.path()).unwrap();
        assert_eq!(back, log);
        // structurally fine, just too short for the dataset builder
        assert_eq!(validate_log(&back), vec![Violation::InsufficientKeyframes { found: 0 }]);
    }

    #[test]
    fn radar_blob_of_two_points_is_forty_bytes() {
        let payload = Payload::Radar(vec![
            RadarPoint { position: Point3::new(1.0, 2.0, 0.0), velocity: [0.5, -0.5] },
            RadarPoint { position: Point3::new(-1.0, 0.0, 0.0), velocity: [0.0, 0.0] },
        ]);
        let bytes = encode_payload(&payload);
        assert_eq!(bytes.len(), 40);
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(decode_payload(SensorKind::Radar, &bytes), payload);
    }

    #[test]
    fn fresh_log_validates() {
        let (records, meta) = small_log(3.0);
        let log = CaptureLog::from_records(meta, &records);
        assert_eq!(validate_log(&log), vec![]);
        assert_eq!(log.samples.len(), 6);
        let kf = log.keyframes().unwrap();
        assert_eq!(kf[1].timestamp, Timestamp(510_000));
        // one LiDAR and one radar key sweep per sample, except that the
        // first radar sweep comes after the first trigger
        let flagged = log.sample_data.iter().filter(|r| r.is_key_frame).count();
        assert_eq!(flagged, 17);
    }

    #[test]
    fn out_of_order_radar_is_one_violation() {
        let (records, meta) = small_log(3.0);
        let mut log = CaptureLog::from_records(meta, &records);
        let radar: Vec<usize> =
            (0..log.sample_data.len()).filter(|&i| log.sample_data[i].sensor == SensorKind::Radar).collect();
        let (a, b) = (radar[3], radar[4]);
        let (ta, tb) = (log.sample_data[a].timestamp, log.sample_data[b].timestamp);
        log.sample_data[a].timestamp = tb;
        log.sample_data[b].timestamp = ta;
        for i in [a, b] {
            let tok = log.sample_data[i].ego_pose_token.clone();
            let ts = log.sample_data[i].timestamp;
            log.ego_poses.iter_mut().find(|p| p.token == tok).unwrap().timestamp = ts;
        }
        let v = validate_log(&log);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(&v[0], Violation::Ordering { sensor: SensorKind::Radar, .. }));
        assert!(v[0].to_string().contains("RADAR"));
    }

    #[test]
    fn too_few_keyframes_flagged() {
        let (records, meta) = small_log(1.0);
        let log = CaptureLog::from_records(meta, &records);
        let v = validate_log(&log);
        assert!(v.contains(&Violation::InsufficientKeyframes { found: 2 }));
    }

    #[test]
    fn each_violation_kind_is_detected() {
        let (records, meta) = small_log(2.0);
        let base = CaptureLog::from_records(meta, &records);

        let mut log = base.clone();
        log.sample_data[0].ego_pose_token = "nope".into();
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::DanglingReference { .. })));

        let mut log = base.clone();
        log.sample_data[0].calibrated_sensor_token = "nope".into();
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::DanglingReference { .. })));

        let mut log = base.clone();
        log.ego_poses[0].timestamp = Timestamp(999_999_999);
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::PoseTimestamp { .. })));

        let mut log = base.clone();
        let tok = log.sample_data.iter().find(|r| r.sensor == SensorKind::Lidar).unwrap().token.clone();
        log.payloads.insert(tok, Payload::None);
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::PayloadMismatch { .. })));

        let mut log = base.clone();
        log.ego_poses[2].rotation = [0.5, 0.0, 0.0, 0.0];
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::NonUnitRotation { .. })));

        let mut log = base.clone();
        let dup = log.ego_poses[0].clone();
        log.ego_poses.push(dup);
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::DuplicateToken { .. })));

        let mut log = base.clone();
        log.samples.swap(0, 1);
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::SampleOrdering { .. })));

        let mut log = base;
        let cam = log.sample_data.iter_mut().find(|r| r.sensor == SensorKind::CamFrontTrigger).unwrap();
        cam.sample_token = None;
        assert!(validate_log(&log).iter().any(|v| matches!(v, Violation::KeyframeCamera { .. })));
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let (records, meta) = small_log(2.0);
        let dir = tempfile::tempdir().unwrap();
        write_log(&records, &meta, dir.path()).unwrap();
        let path = table_path(dir.path(), SAMPLE_TABLE);
        fs::write(&path, b"[\n  {\"token\": \"a\",, }\n]").unwrap();
        match read_log(dir.path()) {
            Err(LogError::Parse { table, offset, .. }) => {
                assert_eq!(table, "sample");
                assert_eq!(offset, 18);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extrinsics_are_applied_on_read() {
        let (records, meta) = small_log(2.0);
        let mut log = CaptureLog::from_records(meta, &records);
        let before = log.records().unwrap();
        let mount = Pose::planar(1.5, -0.2, 0.6, 0.3);
        set_extrinsic(&mut log, SensorKind::Radar, mount).unwrap();
        assert_eq!(extrinsic(&log, SensorKind::Radar).unwrap().unwrap(), mount);
        let after = log.records().unwrap();
        for (a, b) in before.iter().zip(&after) {
            match (&a.payload, &b.payload) {
                (Payload::Radar(x), Payload::Radar(y)) => {
                    for (p, q) in x.iter().zip(y) {
                        assert!(p.position.distance(&q.position) < 1e-9);
                        assert!((p.velocity[0] - q.velocity[0]).abs() < 1e-9);
                    }
                }
                _ => assert_eq!(a.payload.len(), b.payload.len()),
            }
        }
    }
}
