//! Simulated radar / LiDAR capture with nuScenes-like timing.
//!
//! LiDAR sweeps run on a fixed 20 Hz clock and every tenth sweep is a
//! keyframe; the front camera fires a fixed offset after each keyframe sweep.
//! Radar runs on its own 13 Hz clock with per-sweep phase jitter, so its
//! offset to the camera changes from keyframe to keyframe.
//!
//! Reflector layouts on each vehicle are fixed per agent, so noiseless sweeps
//! of a static scene are identical. Noise is drawn per sweep.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{Point3, Pose, Timestamp};
use crate::worldsim::{AgentState, Scenario, WorldError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid sensor config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    #[serde(rename = "RADAR")]
    Radar,
    #[serde(rename = "LIDAR")]
    Lidar,
    #[serde(rename = "CAM_FRONT")]
    CamFrontTrigger,
}

impl SensorKind {
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Radar => "RADAR",
            SensorKind::Lidar => "LIDAR",
            SensorKind::CamFrontTrigger => "CAM_FRONT",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "RADAR" => Some(SensorKind::Radar),
            "LIDAR" => Some(SensorKind::Lidar),
            "CAM_FRONT" => Some(SensorKind::CamFrontTrigger),
            _ => None,
        }
    }

    fn salt(self) -> u64 {
        match self {
            SensorKind::Radar => 0x5241_4441,
            SensorKind::Lidar => 0x4c49_4441,
            SensorKind::CamFrontTrigger => 0x4341_4d46,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: Point3,
    /// Ego-motion compensated planar velocity, in the same frame as `position`.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub position: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Radar(Vec<RadarPoint>),
    Lidar(Vec<LidarPoint>),
    None,
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Radar(p) => p.len(),
            Payload::Lidar(p) => p.len(),
            Payload::None => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> Vec<Point3> {
        match self {
            Payload::Radar(p) => p.iter().map(|r| r.position).collect(),
            Payload::Lidar(p) => p.iter().map(|l| l.position).collect(),
            Payload::None => Vec::new(),
        }
    }

    pub fn matches(&self, sensor: SensorKind) -> bool {
        matches!(
            (self, sensor),
            (Payload::Radar(_), SensorKind::Radar)
                | (Payload::Lidar(_), SensorKind::Lidar)
                | (Payload::None, SensorKind::CamFrontTrigger)
        )
    }
}

/// One sweep (or camera trigger) with its ego-to-global pose at capture.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub sensor: SensorKind,
    pub timestamp: Timestamp,
    pub ego_pose: Pose,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub lidar_rate: f64,
    pub radar_rate: f64,
    pub keyframe_rate: f64,
    /// Uniform radar timing jitter bound, microseconds.
    pub radar_phase_jitter_us: u64,
    /// Offset of the first radar sweep after scenario start.
    pub radar_phase_us: u64,
    /// Camera trigger delay after the keyframe LiDAR sweep.
    pub camera_offset_us: u64,
    pub lidar_points_per_agent: usize,
    pub radar_points_per_agent: usize,
    pub clutter_points_per_sweep: usize,
    pub position_noise_sigma: f64,
    /// Uniform per-component bound; 0.1 km/h by default.
    pub radar_velocity_noise_bound: f64,
    /// Agents with centers farther than this from the ego are not observed.
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            lidar_rate: 20.0,
            radar_rate: 13.0,
            keyframe_rate: 2.0,
            radar_phase_jitter_us: 15_000,
            radar_phase_us: 20_000,
            camera_offset_us: 10_000,
            lidar_points_per_agent: 200,
            radar_points_per_agent: 5,
            clutter_points_per_sweep: 0,
            position_noise_sigma: 0.05,
            radar_velocity_noise_bound: 0.1 / 3.6,
            max_range: 80.0,
        }
    }
}

impl SensorConfig {
    pub fn noiseless(self) -> Self {
        SensorConfig {
            position_noise_sigma: 0.0,
            radar_velocity_noise_bound: 0.0,
            clutter_points_per_sweep: 0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        for (name, rate) in [
            ("lidar_rate", self.lidar_rate),
            ("radar_rate", self.radar_rate),
            ("keyframe_rate", self.keyframe_rate),
        ] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(SensorError::Config(format!("{name} must be positive, got {rate}")));
            }
        }
        let lidar = self.lidar_period_us();
        if lidar == 0 || !self.keyframe_period_us().is_multiple_of(lidar) {
            return Err(SensorError::Config(
                "keyframe period must be a whole number of LiDAR periods".into(),
            ));
        }
        if self.camera_offset_us >= lidar {
            return Err(SensorError::Config("camera offset must be below one LiDAR period".into()));
        }
        if !(self.position_noise_sigma >= 0.0 && self.radar_velocity_noise_bound >= 0.0) {
            return Err(SensorError::Config("noise parameters must be non-negative".into()));
        }
        if self.max_range.is_nan() || self.max_range <= 0.0 {
            return Err(SensorError::Config("max_range must be positive".into()));
        }
        Ok(())
    }

    pub fn lidar_period_us(&self) -> u64 {
        (1e6 / self.lidar_rate).round() as u64
    }

    pub fn keyframe_period_us(&self) -> u64 {
        (1e6 / self.keyframe_rate).round() as u64
    }

    pub fn radar_period_us(&self) -> f64 {
        1e6 / self.radar_rate
    }
}

/// Deterministic 64-bit mix used to derive per-event RNG seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn event_rng(seed: u64, sensor: SensorKind, t: Timestamp) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, sensor.salt()), t.micros()))
}

/// Capture instants in `[0, duration)`, ordered by time then sensor.
pub fn schedule_captures(
    scenario: &Scenario,
    config: &SensorConfig,
    rng_seed: u64,
) -> Result<Vec<(SensorKind, Timestamp)>, SensorError> {
    config.validate()?;
    let end = scenario.duration_us;
    let mut events = Vec::new();

    let lidar = config.lidar_period_us();
    events.extend((0..).map(|k| k * lidar).take_while(|&t| t < end).map(|t| (SensorKind::Lidar, Timestamp(t))));

    let key = config.keyframe_period_us();
    events.extend(
        (0..)
            .map(|k| k * key + config.camera_offset_us)
            .take_while(|&t| t < end)
            .map(|t| (SensorKind::CamFrontTrigger, Timestamp(t))),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, SensorKind::Radar.salt()));
    let jitter = config.radar_phase_jitter_us as i64;
    let period = config.radar_period_us();
    let mut radar = Vec::new();
    for k in 0u64.. {
        let nominal = config.radar_phase_us as f64 + k as f64 * period;
        if nominal - jitter as f64 >= end as f64 {
            break;
        }
        let j = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
        let t = nominal.round() as i64 + j;
        if t >= 0 && (t as u64) < end {
            radar.push(Timestamp(t as u64));
        }
    }
    radar.sort_unstable();
    radar.dedup();
    events.extend(radar.into_iter().map(|t| (SensorKind::Radar, t)));

    events.sort_by_key(|&(s, t)| (t, s));
    Ok(events)
}

/// Fixed arc-length phase of an agent's reflector layout.
fn layout_phase(id: u32) -> f64 {
    (id as f64 * 0.618_033_988_749_895).fract()
}

fn in_range(agent: &AgentState, ego: &Pose, max_range: f64) -> bool {
    let dx = agent.center.x - ego.translation.x;
    let dy = agent.center.y - ego.translation.y;
    dx.hypot(dy) <= max_range
}

fn noise(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

fn jitter_xy<R: Rng + ?Sized>(p: Point3, dist: &Option<Normal<f64>>, rng: &mut R) -> Point3 {
    match dist {
        Some(d) => Point3::new(p.x + d.sample(rng), p.y + d.sample(rng), p.z),
        None => p,
    }
}

fn clutter<R: Rng + ?Sized>(n: usize, range: f64, rng: &mut R) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            let r = range * rng.random::<f64>().sqrt();
            let a = TAU * rng.random::<f64>();
            Point3::new(r * a.cos(), r * a.sin(), 0.0)
        })
        .collect()
}

/// Radar reflector positions on an agent's footprint perimeter, global frame.
pub fn radar_reflectors(agent: &AgentState, count: usize, ground_z: f64) -> Vec<Point3> {
    let fp = agent.footprint();
    let phase = layout_phase(agent.id);
    (0..count)
        .map(|i| {
            let (x, y) = fp.perimeter_point((i as f64 + phase) / count as f64);
            Point3::new(x, y, ground_z)
        })
        .collect()
}

/// LiDAR returns on an agent's side walls and roof, global frame.
pub fn lidar_returns(agent: &AgentState, count: usize) -> Vec<Point3> {
    let fp = agent.footprint();
    let h = agent.dims.height;
    let ground = agent.center.z - h / 2.0;
    let phase = layout_phase(agent.id);
    let on_walls = count / 2;
    let on_roof = count - on_walls;
    let mut out = Vec::with_capacity(count);
    for i in 0..on_walls {
        let (x, y) = fp.perimeter_point((i as f64 + phase) / on_walls as f64);
        let frac = ((i as f64 + 0.5) * 0.381_966_011_250_105).fract();
        out.push(Point3::new(x, y, ground + frac * h));
    }
    for i in 0..on_roof {
        // Halton (2, 3) over the roof rectangle
        let u = halton(i as u64 + 1, 2) - 0.5;
        let v = halton(i as u64 + 1, 3) - 0.5;
        let (x, y) = fp.to_world(u * fp.length, v * fp.width);
        out.push(Point3::new(x, y, ground + h));
    }
    out
}

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

pub fn capture_radar<R: Rng + ?Sized>(
    scenario: &Scenario,
    t: Timestamp,
    config: &SensorConfig,
    rng: &mut R,
) -> Result<CaptureRecord, SensorError> {
    let ego = scenario.ego_pose_at(t)?;
    let to_ego = ego.inverse();
    let pos_noise = noise(config.position_noise_sigma);
    let vb = config.radar_velocity_noise_bound;
    let mut points = Vec::new();
    for agent in scenario.agents_at(t)? {
        if !in_range(&agent, &ego, config.max_range) {
            continue;
        }
        let v_ego = to_ego.rotation.rotate_planar(agent.velocity);
        for p in radar_reflectors(&agent, config.radar_points_per_agent, ego.translation.z) {
            let position = jitter_xy(to_ego.apply(&p), &pos_noise, rng);
            let velocity = if vb > 0.0 {
                [v_ego[0] + rng.random_range(-vb..=vb), v_ego[1] + rng.random_range(-vb..=vb)]
            } else {
                v_ego
            };
            points.push(RadarPoint { position, velocity });
        }
    }
    points.extend(
        clutter(config.clutter_points_per_sweep, config.max_range, rng)
            .into_iter()
            .map(|position| RadarPoint { position, velocity: [0.0, 0.0] }),
    );
    Ok(CaptureRecord { sensor: SensorKind::Radar, timestamp: t, ego_pose: ego, payload: Payload::Radar(points) })
}

pub fn capture_lidar<R: Rng + ?Sized>(
    scenario: &Scenario,
    t: Timestamp,
    config: &SensorConfig,
    rng: &mut R,
) -> Result<CaptureRecord, SensorError> {
    let ego = scenario.ego_pose_at(t)?;
    let to_ego = ego.inverse();
    let pos_noise = noise(config.position_noise_sigma);
    let mut points = Vec::new();
    for agent in scenario.agents_at(t)? {
        if !in_range(&agent, &ego, config.max_range) {
            continue;
        }
        for p in lidar_returns(&agent, config.lidar_points_per_agent) {
            points.push(LidarPoint { position: jitter_xy(to_ego.apply(&p), &pos_noise, rng) });
        }
    }
    points.extend(
        clutter(config.clutter_points_per_sweep, config.max_range, rng)
            .into_iter()
            .map(|position| LidarPoint { position }),
    );
    Ok(CaptureRecord { sensor: SensorKind::Lidar, timestamp: t, ego_pose: ego, payload: Payload::Lidar(points) })
}

pub fn capture_trigger(scenario: &Scenario, t: Timestamp) -> Result<CaptureRecord, SensorError> {
    Ok(CaptureRecord {
        sensor: SensorKind::CamFrontTrigger,
        timestamp: t,
        ego_pose: scenario.ego_pose_at(t)?,
        payload: Payload::None,
    })
}

/// Full recording of a scenario: every scheduled event captured with an RNG
/// derived from `(seed, sensor, timestamp)`.
pub fn simulate(
    scenario: &Scenario,
    config: &SensorConfig,
    seed: u64,
) -> Result<Vec<CaptureRecord>, SensorError> {
    schedule_captures(scenario, config, seed)?
        .into_iter()
        .map(|(sensor, t)| {
            let mut rng = event_rng(seed, sensor, t);
            match sensor {
                SensorKind::Radar => capture_radar(scenario, t, config, &mut rng),
                SensorKind::Lidar => capture_lidar(scenario, t, config, &mut rng),
                SensorKind::CamFrontTrigger => capture_trigger(scenario, t),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Rotation;
    use crate::worldsim::{Dims, EgoTrajectory, ScenarioParams};
    use std::f64::consts::FRAC_PI_2;

    fn one_agent(velocity: [f64; 2], ego: Pose) -> Scenario {
        let agent = AgentState {
            id: 3,
            center: Point3::new(10.0, 4.0, 0.75),
            yaw: 0.0,
            dims: Dims { length: 4.5, width: 1.9, height: 1.5 },
            velocity,
            yaw_rate: 0.0,
        };
        Scenario::new(1, 2_000_000, vec![agent], EgoTrajectory::stationary(ego, 2_000_000), 100.0)
            .unwrap()
    }

    fn count(events: &[(SensorKind, Timestamp)], kind: SensorKind) -> Vec<Timestamp> {
        events.iter().filter(|e| e.0 == kind).map(|e| e.1).collect()
    }

    #[test]
    fn one_second_schedule() {
        let s = Scenario::generate(&ScenarioParams { duration_s: 1.0, ..Default::default() }).unwrap();
        let ev = schedule_captures(&s, &SensorConfig::default(), 9).unwrap();
        let lidar = count(&ev, SensorKind::Lidar);
        assert_eq!(lidar.len(), 20);
        assert!(lidar.windows(2).all(|w| w[1] - w[0] == 50_000));
        assert_eq!(count(&ev, SensorKind::CamFrontTrigger).len(), 2);
        let radar = count(&ev, SensorKind::Radar).len();
        assert!((12..=14).contains(&radar), "radar count {radar}");
    }

    #[test]
    fn zero_jitter_radar_is_periodic() {
        let s = Scenario::generate(&ScenarioParams { duration_s: 3.0, ..Default::default() }).unwrap();
        let cfg = SensorConfig { radar_phase_jitter_us: 0, ..Default::default() };
        let radar = count(&schedule_captures(&s, &cfg, 1).unwrap(), SensorKind::Radar);
        let period = 1e6 / 13.0;
        for (k, t) in radar.iter().enumerate() {
            let nominal = 20_000.0 + k as f64 * period;
            assert!((t.micros() as f64 - nominal).abs() <= 0.5);
        }
    }

    #[test]
    fn radar_offsets_to_keyframes_vary() {
        let s = Scenario::generate(&ScenarioParams::default()).unwrap();
        let ev = schedule_captures(&s, &SensorConfig::default(), 7).unwrap();
        let radar = count(&ev, SensorKind::Radar);
        let offsets: Vec<i64> = count(&ev, SensorKind::CamFrontTrigger)
            .iter()
            .skip(1)
            .map(|&cam| {
                let latest = radar.iter().rfind(|&&r| r <= cam).unwrap();
                cam - *latest
            })
            .collect();
        let distinct: std::collections::BTreeSet<_> = offsets.iter().collect();
        assert!(distinct.len() > offsets.len() / 2);
        assert!(offsets.iter().all(|&o| (0..77_000 + 30_000).contains(&o)));
    }

    #[test]
    fn static_agent_has_zero_velocity() {
        let s = one_agent([0.0, 0.0], Pose::identity());
        let cfg = SensorConfig::default().noiseless();
        let rec = capture_radar(&s, Timestamp(0), &cfg, &mut event_rng(0, SensorKind::Radar, Timestamp(0))).unwrap();
        let Payload::Radar(points) = rec.payload else { panic!() };
        assert_eq!(points.len(), 5);
        assert!(points.iter().all(|p| p.velocity == [0.0, 0.0]));
    }

    #[test]
    fn velocity_is_rotated_into_ego_frame() {
        let ego = Pose::from_rotation(Rotation::from_yaw(FRAC_PI_2));
        let s = one_agent([5.0, 0.0], ego);
        let cfg = SensorConfig::default().noiseless();
        let rec = capture_radar(&s, Timestamp(0), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let Payload::Radar(points) = rec.payload else { panic!() };
        for p in points {
            assert!((p.velocity[0] - 0.0).abs() < 1e-12 && (p.velocity[1] + 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_noise_respects_bound() {
        let s = one_agent([5.0, 1.0], Pose::identity());
        let cfg = SensorConfig::default();
        let bound = cfg.radar_velocity_noise_bound;
        assert!((bound - 0.027_777_777).abs() < 1e-8);
        for seed in 0..50 {
            let rec = capture_radar(&s, Timestamp(0), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let Payload::Radar(points) = rec.payload else { panic!() };
            for p in points {
                assert!((p.velocity[0] - 5.0).abs() <= bound && (p.velocity[1] - 1.0).abs() <= bound);
            }
        }
    }

    #[test]
    fn empty_scene_lidar_is_empty() {
        let s = Scenario::new(0, 2_000_000, vec![], EgoTrajectory::stationary(Pose::identity(), 2_000_000), 10.0)
            .unwrap();
        let rec = capture_lidar(&s, Timestamp(0), &SensorConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(rec.payload.is_empty());
    }

    fn distance_to_box(agent: &AgentState, p: &Point3) -> f64 {
        // brute force: nearest of walls (vertical extrusion of the outline) and roof
        let fp = agent.footprint();
        let ground = agent.center.z - agent.dims.height / 2.0;
        let roof = ground + agent.dims.height;
        let (lx, ly) = fp.to_local(p.x, p.y);
        let inside = lx.abs() <= fp.length / 2.0 && ly.abs() <= fp.width / 2.0;
        let wall = {
            let d = fp.distance_to_edge(p.x, p.y);
            let dz = if p.z > roof { p.z - roof } else if p.z < ground { ground - p.z } else { 0.0 };
            d.hypot(dz)
        };
        let roof_d = if inside { (p.z - roof).abs() } else { f64::INFINITY };
        wall.min(roof_d)
    }

    #[test]
    fn lidar_points_lie_on_box_surface() {
        let ego = Pose::planar(-3.0, 1.0, 0.0, 0.3);
        let s = one_agent([0.0, 0.0], ego);
        let agent = s.agents[0];
        for (cfg, tol) in [
            (SensorConfig::default().noiseless(), 1e-9),
            (SensorConfig::default(), 6.0 * 0.05 * std::f64::consts::SQRT_2),
        ] {
            let rec = capture_lidar(&s, Timestamp(0), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let Payload::Lidar(points) = rec.payload else { panic!() };
            assert_eq!(points.len(), 200);
            for p in points {
                let world = ego.apply(&p.position);
                assert!(distance_to_box(&agent, &world) <= tol);
            }
        }
    }

    #[test]
    fn density_ratio_is_forty() {
        let mut s = Scenario::generate(&ScenarioParams::default()).unwrap();
        // pull every agent close to the ego start so all are in range
        let start = s.ego.pose_at(Timestamp(0)).unwrap().translation;
        for (i, a) in s.agents.iter_mut().enumerate() {
            a.center.x = start.x + 3.0 * i as f64 - 15.0;
        }
        let cfg = SensorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let radar = capture_radar(&s, Timestamp(0), &cfg, &mut rng).unwrap().payload.len();
        let lidar = capture_lidar(&s, Timestamp(0), &cfg, &mut rng).unwrap().payload.len();
        assert_eq!(radar, 60);
        assert_eq!(lidar, 2400);
        assert_eq!(lidar / radar, 40);
    }

    #[test]
    fn simulate_is_deterministic_and_poses_match() {
        let s = Scenario::generate(&ScenarioParams { duration_s: 2.0, ..Default::default() }).unwrap();
        let cfg = SensorConfig { clutter_points_per_sweep: 4, ..Default::default() };
        let a = simulate(&s, &cfg, 11).unwrap();
        let b = simulate(&s, &cfg, 11).unwrap();
        assert_eq!(a, b);
        for r in &a {
            let expected = s.ego_pose_at(r.timestamp).unwrap();
            assert!(r.ego_pose.translation.distance(&expected.translation) <= 1e-12);
            assert!(r.payload.matches(r.sensor));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SensorConfig { lidar_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(SensorConfig { keyframe_rate: 3.0, ..Default::default() }.validate().is_err());
        assert!(SensorConfig { camera_offset_us: 60_000, ..Default::default() }.validate().is_err());
    }
}
