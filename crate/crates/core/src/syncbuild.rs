//! Latency-shifted dataset variants.
//!
//! A variant pairs every keyframe (camera trigger at `t_cam`) with the newest
//! radar or LiDAR sweep captured at least `target_latency` earlier, moved
//! from its capture ego frame into the ego frame at `t_cam`. Radar variants
//! can additionally extrapolate points along their measured velocity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{relative_pose, Pose, Timestamp};
use crate::ingest::{
    self, CaptureLog, EgoPoseRow, LogError, LogMeta, SampleDataRow, SampleRow, Violation,
};
use crate::sensors::{LidarPoint, Payload, RadarPoint, SensorKind};

/// Keyframes discarded at the start of every variant so that all rungs see
/// a sweep history.
pub const SKIPPED_KEYFRAMES: usize = 2;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition error: radar timestamp {t_radar} is after camera timestamp {t_cam}")]
    Precondition { t_radar: Timestamp, t_cam: Timestamp },
    #[error("log has {found} keyframes, need at least {}", ingest::MIN_KEYFRAMES)]
    TooFewKeyframes { found: usize },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Radar,
    Lidar,
}

impl Modality {
    pub fn sensor(self) -> SensorKind {
        match self {
            Modality::Radar => SensorKind::Radar,
            Modality::Lidar => SensorKind::Lidar,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Radar => "radar",
            Modality::Lidar => "lidar",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s.to_ascii_lowercase().as_str() {
            "radar" => Some(Modality::Radar),
            "lidar" => Some(Modality::Lidar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub target_latency_us: u64,
    pub modality: Modality,
    pub compensate: bool,
}

impl LatencyConfig {
    pub fn new(modality: Modality, target_latency_us: u64, compensate: bool) -> Result<Self, BuildError> {
        let cfg = LatencyConfig { target_latency_us, modality, compensate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        if self.compensate && self.modality != Modality::Radar {
            return Err(BuildError::Config(format!(
                "compensation needs velocities; {} has none",
                self.modality.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantFrame {
    /// Index into the log's keyframe list.
    pub keyframe_index: usize,
    pub t_cam: Timestamp,
    /// Ego pose at `t_cam`; payload points are expressed in this frame.
    pub reference: Pose,
    pub source_token: String,
    pub source_timestamp: Timestamp,
    pub achieved_latency_us: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetVariant {
    pub config: LatencyConfig,
    pub meta: LogMeta,
    pub frames: Vec<VariantFrame>,
    /// Camera timestamps of keyframes that had no sufficiently old sweep.
    pub dropped: Vec<Timestamp>,
}

/// `P_t = P_{t-1} + v * (t_cam - t_radar)` in the horizontal plane.
pub fn compensate_radar(
    points: &[RadarPoint],
    t_radar: Timestamp,
    t_cam: Timestamp,
) -> Result<Vec<RadarPoint>, BuildError> {
    if t_cam < t_radar {
        return Err(BuildError::Precondition { t_radar, t_cam });
    }
    Ok(extrapolate(points, (t_cam - t_radar) as f64 * 1e-6))
}

/// Signed-interval variant of [`compensate_radar`]; `dt` in seconds.
pub fn extrapolate(points: &[RadarPoint], dt: f64) -> Vec<RadarPoint> {
    points
        .iter()
        .map(|p| {
            let mut q = *p;
            q.position.x += p.velocity[0] * dt;
            q.position.y += p.velocity[1] * dt;
            q
        })
        .collect()
}

/// Moves a payload by `pose`; radar velocities are rotated only.
pub fn transform_payload(payload: &Payload, pose: &Pose) -> Payload {
    match payload {
        Payload::Radar(pts) => Payload::Radar(
            pts.iter()
                .map(|p| RadarPoint {
                    position: pose.apply(&p.position),
                    velocity: pose.rotation.rotate_planar(p.velocity),
                })
                .collect(),
        ),
        Payload::Lidar(pts) => {
            Payload::Lidar(pts.iter().map(|p| LidarPoint { position: pose.apply(&p.position) }).collect())
        }
        Payload::None => Payload::None,
    }
}

pub fn build_variant(log: &CaptureLog, cfg: &LatencyConfig) -> Result<DatasetVariant, BuildError> {
    cfg.validate()?;
    let keyframes = log.keyframes()?;
    if keyframes.len() < ingest::MIN_KEYFRAMES {
        return Err(BuildError::TooFewKeyframes { found: keyframes.len() });
    }
    let sweeps = log.sweeps(cfg.modality.sensor())?;

    let mut frames = Vec::new();
    let mut dropped = Vec::new();
    for kf in keyframes.iter().skip(SKIPPED_KEYFRAMES) {
        let t_cam = kf.timestamp;
        let idx = t_cam
            .checked_sub_micros(cfg.target_latency_us)
            .map(|cutoff| sweeps.partition_point(|s| s.timestamp <= cutoff))
            .unwrap_or(0);
        if idx == 0 {
            log::warn!(
                "dropping keyframe at {t_cam}: no {} sweep at least {} us old",
                cfg.modality.name(),
                cfg.target_latency_us
            );
            dropped.push(t_cam);
            continue;
        }
        let sweep = &sweeps[idx - 1];
        let to_ref = relative_pose(&sweep.sensor_to_global, &kf.ego_pose);
        let mut payload = transform_payload(sweep.payload, &to_ref);
        if cfg.compensate {
            if let Payload::Radar(pts) = &payload {
                payload = Payload::Radar(compensate_radar(pts, sweep.timestamp, t_cam)?);
            }
        }
        frames.push(VariantFrame {
            keyframe_index: kf.index,
            t_cam,
            reference: kf.ego_pose,
            source_token: sweep.token.to_string(),
            source_timestamp: sweep.timestamp,
            achieved_latency_us: (t_cam - sweep.timestamp) as u64,
            payload,
        });
    }
    Ok(DatasetVariant { config: *cfg, meta: log.meta.clone(), frames, dropped })
}

impl DatasetVariant {
    pub fn mean_achieved_latency_us(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.achieved_latency_us as f64).sum::<f64>() / self.frames.len() as f64
    }

    pub fn frame_for_keyframe(&self, keyframe_index: usize) -> Option<&VariantFrame> {
        self.frames.iter().find(|f| f.keyframe_index == keyframe_index)
    }

    /// Payload values rounded through f32, as they will read back from disk.
    pub fn quantized(mut self) -> DatasetVariant {
        let mut tmp = CaptureLog {
            meta: self.meta.clone(),
            samples: vec![],
            sample_data: vec![],
            ego_poses: vec![],
            calibrated_sensors: vec![],
            payloads: Default::default(),
        };
        for (i, f) in self.frames.iter_mut().enumerate() {
            tmp.payloads.insert(i.to_string(), std::mem::replace(&mut f.payload, Payload::None));
        }
        let tmp = tmp.quantized();
        for (i, f) in self.frames.iter_mut().enumerate() {
            f.payload = tmp.payloads[&i.to_string()].clone();
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestFrame {
    keyframe_index: usize,
    sample_token: String,
    t_cam: Timestamp,
    source_token: String,
    source_timestamp: Timestamp,
    achieved_latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: LatencyConfig,
    frames: Vec<ManifestFrame>,
    dropped: Vec<Timestamp>,
}

/// Writes the variant in the capture-log layout plus `manifest.json`.
///
/// Each frame becomes one sample with a camera row and one sweep row, both
/// stamped `t_cam` and sharing the reference ego pose. Source tokens,
/// timestamps and achieved latencies live in the manifest.
pub fn write_variant(variant: &DatasetVariant, dir: impl AsRef<Path>) -> Result<DatasetVariant, BuildError> {
    let dir = dir.as_ref();
    let variant = variant.clone().quantized();
    let sensor = variant.config.modality.sensor();
    let mut log = CaptureLog {
        meta: variant.meta.clone(),
        samples: vec![],
        sample_data: vec![],
        ego_poses: vec![],
        calibrated_sensors: vec![],
        payloads: Default::default(),
    };
    let base = CaptureLog::from_records(variant.meta.clone(), &[]);
    log.calibrated_sensors = base.calibrated_sensors;
    for s in [SensorKind::CamFrontTrigger, sensor] {
        ingest::set_extrinsic(&mut log, s, Pose::identity())?;
    }
    log.calibrated_sensors.sort_by_key(|c| c.sensor);

    let mut manifest = Manifest { config: variant.config, frames: vec![], dropped: variant.dropped.clone() };
    let n = variant.frames.len();
    for (i, f) in variant.frames.iter().enumerate() {
        let sample_token = format!("sample-{:05}", f.keyframe_index);
        let neighbour = |j: Option<usize>| {
            j.filter(|&j| j < n)
                .map(|j| format!("sample-{:05}", variant.frames[j].keyframe_index))
                .unwrap_or_default()
        };
        log.samples.push(SampleRow {
            token: sample_token.clone(),
            timestamp: f.t_cam,
            prev: neighbour(i.checked_sub(1)),
            next: neighbour(Some(i + 1)),
        });
        let ego_token = format!("ego-{:012}", f.t_cam.micros());
        log.ego_poses.push(EgoPoseRow {
            token: ego_token.clone(),
            timestamp: f.t_cam,
            rotation: f.reference.rotation.wxyz(),
            translation: f.reference.translation.into(),
        });
        for (s, payload) in [(SensorKind::CamFrontTrigger, Payload::None), (sensor, f.payload.clone())] {
            let token = ingest::sample_data_token(s, f.t_cam);
            let has_blob = s != SensorKind::CamFrontTrigger;
            log.sample_data.push(SampleDataRow {
                token: token.clone(),
                sample_token: Some(sample_token.clone()),
                sensor: s,
                timestamp: f.t_cam,
                ego_pose_token: ego_token.clone(),
                calibrated_sensor_token: format!("calib-{}", s.name().to_ascii_lowercase()),
                is_key_frame: true,
                filename: has_blob.then(|| format!("{}/{token}.bin", ingest::BLOB_DIR)),
                num_points: payload.len(),
            });
            log.payloads.insert(token, payload);
        }
        manifest.frames.push(ManifestFrame {
            keyframe_index: f.keyframe_index,
            sample_token,
            t_cam: f.t_cam,
            source_token: f.source_token.clone(),
            source_timestamp: f.source_timestamp,
            achieved_latency_us: f.achieved_latency_us,
        });
    }
    log.write(dir)?;
    let path = dir.join(MANIFEST_FILE);
    let mut bytes =
        serde_json::to_vec_pretty(&manifest).map_err(|e| BuildError::Manifest(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(&path, bytes)
        .map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
    Ok(variant)
}

pub fn read_variant(dir: impl AsRef<Path>) -> Result<DatasetVariant, BuildError> {
    let dir = dir.as_ref();
    let log = ingest::read_log_unvalidated(dir)?;
    // short variants are legitimate; everything else must hold
    let violations: Vec<Violation> = ingest::validate_log(&log)
        .into_iter()
        .filter(|v| !matches!(v, Violation::InsufficientKeyframes { .. }))
        .collect();
    if !violations.is_empty() {
        return Err(LogError::Invalid(violations).into());
    }
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path)
        .map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| BuildError::Manifest(e.to_string()))?;
    manifest.config.validate()?;

    let keyframes = log.keyframes()?;
    let sensor = manifest.config.modality.sensor();
    if keyframes.len() != manifest.frames.len() {
        return Err(BuildError::Manifest(format!(
            "{} frames in manifest, {} samples in tables",
            manifest.frames.len(),
            keyframes.len()
        )));
    }
    let mut frames = Vec::with_capacity(keyframes.len());
    for (kf, mf) in keyframes.iter().zip(&manifest.frames) {
        if kf.sample_token != mf.sample_token || kf.timestamp != mf.t_cam {
            return Err(BuildError::Manifest(format!("frame {} does not match its sample", mf.sample_token)));
        }
        let row = log
            .sample_data
            .iter()
            .find(|r| r.sensor == sensor && r.sample_token.as_deref() == Some(kf.sample_token.as_str()))
            .ok_or_else(|| BuildError::Manifest(format!("no {} sweep for {}", sensor.name(), mf.sample_token)))?;
        frames.push(VariantFrame {
            keyframe_index: mf.keyframe_index,
            t_cam: mf.t_cam,
            reference: kf.ego_pose,
            source_token: mf.source_token.clone(),
            source_timestamp: mf.source_timestamp,
            achieved_latency_us: mf.achieved_latency_us,
            payload: log.payloads[&row.token].clone(),
        });
    }
    Ok(DatasetVariant { config: manifest.config, meta: log.meta, frames, dropped: manifest.dropped })
}
