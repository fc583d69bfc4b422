//! Asynchronous sensor-fusion workbench.
//!
//! Simulates a moving ego vehicle surrounded by traffic, records radar and
//! LiDAR sweeps with realistic capture timing, rebuilds synchronous and
//! asynchronous dataset variants from those recordings, and scores
//! bird's-eye-view vehicle segmentation with IoU across a latency ladder.
//!
//! The pipeline, bottom up:
//!
//! * [`frames`] - timestamps, quaternion rotations, rigid poses and the
//!   two-hop retargeting of stale point clouds.
//! * [`worldsim`] - deterministic ego trajectory and CTRV traffic agents.
//! * [`sensors`] - capture scheduling and radar/LiDAR point generation.
//! * [`ingest`] - on-disk capture log (JSON tables + binary blobs).
//! * [`syncbuild`] - latency-shifted dataset variants and radar velocity
//!   compensation.
//! * [`bevgrid`] - voxelization, BEV flattening and the geometric
//!   segmentation head.
//! * [`eval`] - IoU, latency sweeps, CSV reports and PPM renders.

pub mod bevgrid;
pub mod eval;
pub mod frames;
pub mod ingest;
pub mod sensors;
pub mod syncbuild;
pub mod worldsim;

pub use bevgrid::{BevGrid, GridSpec, VoxelGrid};
pub use eval::{IoUReport, Ladders, SweepParams, SweepResult, SweepRow};
pub use frames::{Point3, Pose, Rotation, Timestamp};
pub use ingest::CaptureLog;
pub use sensors::{CaptureRecord, LidarPoint, Payload, RadarPoint, SensorConfig, SensorKind};
pub use syncbuild::{DatasetVariant, LatencyConfig, Modality};
pub use worldsim::{AgentState, EgoTrajectory, Scenario, ScenarioParams};
