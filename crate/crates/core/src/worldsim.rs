//! Deterministic synthetic world: an ego trajectory and CTRV vehicle agents.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bevgrid::{self, BevGrid, GridSpec};
use crate::frames::{Point3, Pose, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("timestamp {t} outside [{start}, {end}] us")]
    OutOfRange { t: Timestamp, start: Timestamp, end: Timestamp },
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Shortest scenario: two keyframe periods at 2 Hz.
pub const MIN_DURATION_US: u64 = 1_000_000;
/// Largest ego displacement allowed between consecutive waypoints.
pub const MAX_WAYPOINT_STEP_M: f64 = 2.0;
pub const MAX_AGENT_SPEED: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

/// Planar oriented rectangle: center, heading, length along heading, width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub cx: f64,
    pub cy: f64,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    /// Boundary inclusive.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lx, ly) = self.to_local(x, y);
        lx.abs() <= self.length / 2.0 && ly.abs() <= self.width / 2.0
    }

    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.cx + c * lx - s * ly, self.cy + s * lx + c * ly)
    }

    /// Corners counter-clockwise starting at front-right.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [
            self.to_world(hl, -hw),
            self.to_world(hl, hw),
            self.to_world(-hl, hw),
            self.to_world(-hl, -hw),
        ]
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let c = self.corners();
        let xs = c.iter().map(|p| p.0);
        let ys = c.iter().map(|p| p.1);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.length + self.width)
    }

    /// Point at arc-length fraction `u` (wrapped into `[0, 1)`) along the
    /// perimeter, starting at the front-right corner.
    pub fn perimeter_point(&self, u: f64) -> (f64, f64) {
        let (l, w) = (self.length, self.width);
        let s = u.rem_euclid(1.0) * self.perimeter();
        let (hl, hw) = (l / 2.0, w / 2.0);
        let local = if s < w {
            (hl, -hw + s)
        } else if s < w + l {
            (hl - (s - w), hw)
        } else if s < 2.0 * w + l {
            (-hl, hw - (s - w - l))
        } else {
            (-hl + (s - 2.0 * w - l).min(l), -hw)
        };
        self.to_world(local.0, local.1)
    }

    /// Distance from `(x, y)` to the rectangle boundary.
    pub fn distance_to_edge(&self, x: f64, y: f64) -> f64 {
        let (lx, ly) = self.to_local(x, y);
        let dx = lx.abs() - self.length / 2.0;
        let dy = ly.abs() - self.width / 2.0;
        if dx <= 0.0 && dy <= 0.0 {
            -dx.max(dy)
        } else {
            dx.max(0.0).hypot(dy.max(0.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    /// Box center in the global frame.
    pub center: Point3,
    pub yaw: f64,
    pub dims: Dims,
    /// Global planar velocity, m/s.
    pub velocity: [f64; 2],
    pub yaw_rate: f64,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let d = self.dims;
        if !(d.length > 0.0 && d.width > 0.0 && d.height > 0.0) {
            return Err(WorldError::Scenario(format!("agent {} has non-positive dims", self.id)));
        }
        if self.speed().is_nan() || self.speed() > MAX_AGENT_SPEED {
            return Err(WorldError::Scenario(format!(
                "agent {} speed {} exceeds {MAX_AGENT_SPEED} m/s",
                self.id,
                self.speed()
            )));
        }
        if !self.center.is_finite() || !self.yaw.is_finite() || !self.yaw_rate.is_finite() {
            return Err(WorldError::Scenario(format!("agent {} has non-finite state", self.id)));
        }
        Ok(())
    }

    /// Constant turn rate and velocity propagation by `dt` seconds. The
    /// velocity vector turns with the body; with zero yaw rate this is
    /// exactly `center + velocity * dt`.
    pub fn propagate(&self, dt: f64) -> AgentState {
        let [vx, vy] = self.velocity;
        let w = self.yaw_rate;
        let mut next = *self;
        if w == 0.0 {
            next.center.x += vx * dt;
            next.center.y += vy * dt;
            return next;
        }
        let (s0, c0) = (vy.atan2(vx).sin(), vy.atan2(vx).cos());
        let speed = self.speed();
        let heading = vy.atan2(vx) + w * dt;
        let (s1, c1) = heading.sin_cos();
        next.center.x += speed / w * (s1 - s0);
        next.center.y += speed / w * (c0 - c1);
        next.velocity = [speed * c1, speed * s1];
        next.yaw += w * dt;
        next
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            cx: self.center.x,
            cy: self.center.y,
            yaw: self.yaw,
            length: self.dims.length,
            width: self.dims.width,
        }
    }

    /// Footprint re-expressed in the frame of `ego` (ego-to-global).
    pub fn footprint_in(&self, ego: &Pose) -> Footprint {
        let inv = ego.inverse();
        let c = inv.apply(&self.center);
        Footprint {
            cx: c.x,
            cy: c.y,
            yaw: self.yaw - ego.rotation.yaw(),
            length: self.dims.length,
            width: self.dims.width,
        }
    }
}

/// Time-ordered ego-to-global waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Waypoint>", into = "Vec<Waypoint>")]
pub struct EgoTrajectory {
    waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub timestamp: Timestamp,
    pub pose: Pose,
}

impl TryFrom<Vec<Waypoint>> for EgoTrajectory {
    type Error = WorldError;

    fn try_from(w: Vec<Waypoint>) -> Result<Self, WorldError> {
        EgoTrajectory::new(w)
    }
}

impl From<EgoTrajectory> for Vec<Waypoint> {
    fn from(t: EgoTrajectory) -> Self {
        t.waypoints
    }
}

impl EgoTrajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, WorldError> {
        if waypoints.is_empty() {
            return Err(WorldError::Trajectory("no waypoints".into()));
        }
        for pair in waypoints.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(WorldError::Trajectory(format!(
                    "timestamps not strictly increasing at {}",
                    pair[1].timestamp
                )));
            }
            let step = pair[0].pose.translation.distance(&pair[1].pose.translation);
            if step > MAX_WAYPOINT_STEP_M {
                return Err(WorldError::Trajectory(format!(
                    "waypoint step of {step:.3} m at {} exceeds {MAX_WAYPOINT_STEP_M} m",
                    pair[1].timestamp
                )));
            }
        }
        Ok(EgoTrajectory { waypoints })
    }

    pub fn stationary(pose: Pose, duration_us: u64) -> Self {
        EgoTrajectory {
            waypoints: vec![
                Waypoint { timestamp: Timestamp::ZERO, pose },
                Waypoint { timestamp: Timestamp(duration_us), pose },
            ],
        }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn start(&self) -> Timestamp {
        self.waypoints[0].timestamp
    }

    pub fn end(&self) -> Timestamp {
        self.waypoints[self.waypoints.len() - 1].timestamp
    }

    /// Linear translation and slerped rotation between bracketing waypoints.
    pub fn pose_at(&self, t: Timestamp) -> Result<Pose, WorldError> {
        if t < self.start() || t > self.end() {
            return Err(WorldError::OutOfRange { t, start: self.start(), end: self.end() });
        }
        let i = self.waypoints.partition_point(|w| w.timestamp <= t);
        let a = self.waypoints[i - 1];
        if a.timestamp == t || i == self.waypoints.len() {
            return Ok(a.pose);
        }
        let b = self.waypoints[i];
        let s = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
        let (pa, pb) = (a.pose.translation, b.pose.translation);
        Ok(Pose {
            rotation: a.pose.rotation.slerp(&b.pose.rotation, s),
            translation: Point3::new(
                pa.x + (pb.x - pa.x) * s,
                pa.y + (pb.y - pa.y) * s,
                pa.z + (pb.z - pa.z) * s,
            ),
        })
    }
}

/// Knobs for [`Scenario::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub seed: u64,
    pub duration_s: f64,
    pub agent_count: usize,
    /// Square half-extent of the world, meters.
    pub bounds: f64,
    pub ego_speed: f64,
    /// Peak heading deviation of the ego weave, radians.
    pub ego_weave: f64,
    pub ego_weave_period_s: f64,
    pub max_agent_speed: f64,
    /// Agents draw yaw rates uniformly from `[-max, max]`.
    pub max_agent_yaw_rate: f64,
    pub lanes: Vec<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            seed: 7,
            duration_s: 20.0,
            agent_count: 12,
            bounds: 500.0,
            ego_speed: 6.0,
            ego_weave: 0.05,
            ego_weave_period_s: 12.0,
            max_agent_speed: 15.0,
            max_agent_yaw_rate: 0.0,
            lanes: vec![-7.0, -3.5, 3.5, 7.0],
        }
    }
}

impl ScenarioParams {
    pub fn static_world(self) -> Self {
        ScenarioParams { ego_speed: 0.0, ego_weave: 0.0, max_agent_speed: 0.0, ..self }
    }

    pub fn static_agents(self) -> Self {
        ScenarioParams { max_agent_speed: 0.0, max_agent_yaw_rate: 0.0, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub duration_us: u64,
    /// Agent states at t = 0.
    pub agents: Vec<AgentState>,
    pub ego: EgoTrajectory,
    pub bounds: f64,
}

const WAYPOINT_STEP_US: u64 = 100_000;
const INTEGRATION_STEP_US: u64 = 1_000;

impl Scenario {
    pub fn new(
        seed: u64,
        duration_us: u64,
        agents: Vec<AgentState>,
        ego: EgoTrajectory,
        bounds: f64,
    ) -> Result<Self, WorldError> {
        let s = Scenario { seed, duration_us, agents, ego, bounds };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.duration_us < MIN_DURATION_US {
            return Err(WorldError::Scenario(format!(
                "duration {} us shorter than two keyframe periods",
                self.duration_us
            )));
        }
        if self.ego.start() > Timestamp::ZERO || self.ego.end() < Timestamp(self.duration_us) {
            return Err(WorldError::Scenario("ego trajectory does not cover the duration".into()));
        }
        for a in &self.agents {
            a.validate()?;
            if a.center.x.abs() > self.bounds || a.center.y.abs() > self.bounds {
                return Err(WorldError::Scenario(format!(
                    "agent {} starts outside bounds {}",
                    a.id, self.bounds
                )));
            }
        }
        Ok(())
    }

    /// Seeded traffic on lanes parallel to a gently weaving ego path.
    pub fn generate(params: &ScenarioParams) -> Result<Self, WorldError> {
        if !(params.duration_s.is_finite() && params.duration_s > 0.0) {
            return Err(WorldError::Scenario(format!("bad duration {}", params.duration_s)));
        }
        if params.max_agent_speed < 0.0 || params.max_agent_speed > MAX_AGENT_SPEED {
            return Err(WorldError::Scenario(format!(
                "max agent speed {} outside [0, {MAX_AGENT_SPEED}]",
                params.max_agent_speed
            )));
        }
        if params.agent_count > 0 && params.lanes.is_empty() {
            return Err(WorldError::Scenario("no lanes for agents".into()));
        }
        let duration_us = (params.duration_s * 1e6).round() as u64;
        let ego = generate_ego(params, duration_us)?;

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut agents = Vec::with_capacity(params.agent_count);
        for id in 0..params.agent_count as u32 {
            // each agent passes near the ego at some instant of the scenario
            let meet = Timestamp(rng.random_range(0..=duration_us));
            let lane = params.lanes[rng.random_range(0..params.lanes.len())];
            let offset: f64 = rng.random_range(-35.0..35.0);
            let speed: f64 = if params.max_agent_speed > 0.0 {
                rng.random_range(0.0..params.max_agent_speed)
            } else {
                0.0
            };
            let yaw_rate: f64 = if params.max_agent_yaw_rate > 0.0 {
                rng.random_range(-params.max_agent_yaw_rate..params.max_agent_yaw_rate)
            } else {
                0.0
            };
            let dims = Dims {
                length: rng.random_range(4.0..5.0),
                width: rng.random_range(1.7..2.0),
                height: rng.random_range(1.4..1.8),
            };
            let ego_at_meet = ego.pose_at(meet)?.translation;
            let x0 = ego_at_meet.x + offset - speed * meet.as_secs_f64();
            agents.push(AgentState {
                id,
                center: Point3::new(x0, lane, dims.height / 2.0),
                yaw: 0.0,
                dims,
                velocity: [speed, 0.0],
                yaw_rate,
            });
        }
        Scenario::new(params.seed, duration_us, agents, ego, params.bounds)
    }

    pub fn start(&self) -> Timestamp {
        Timestamp::ZERO
    }

    pub fn end(&self) -> Timestamp {
        Timestamp(self.duration_us)
    }

    pub fn check_time(&self, t: Timestamp) -> Result<(), WorldError> {
        if t > self.end() {
            return Err(WorldError::OutOfRange { t, start: self.start(), end: self.end() });
        }
        Ok(())
    }

    pub fn agent_state_at(&self, agent: &AgentState, t: Timestamp) -> Result<AgentState, WorldError> {
        self.check_time(t)?;
        Ok(agent.propagate(t.as_secs_f64()))
    }

    pub fn agents_at(&self, t: Timestamp) -> Result<Vec<AgentState>, WorldError> {
        self.check_time(t)?;
        let dt = t.as_secs_f64();
        Ok(self.agents.iter().map(|a| a.propagate(dt)).collect())
    }

    pub fn ego_pose_at(&self, t: Timestamp) -> Result<Pose, WorldError> {
        self.check_time(t)?;
        self.ego.pose_at(t)
    }

    /// Agent footprints in the ego frame at `t`.
    pub fn footprints_in_ego(&self, t: Timestamp) -> Result<Vec<Footprint>, WorldError> {
        let ego = self.ego_pose_at(t)?;
        Ok(self.agents_at(t)?.iter().map(|a| a.footprint_in(&ego)).collect())
    }
}

fn generate_ego(params: &ScenarioParams, duration_us: u64) -> Result<EgoTrajectory, WorldError> {
    let speed = params.ego_speed;
    let heading = |t_s: f64| {
        if params.ego_weave == 0.0 {
            0.0
        } else {
            params.ego_weave * (TAU * t_s / params.ego_weave_period_s).sin()
        }
    };
    let mut x = -speed * params.duration_s / 2.0;
    let mut y = 0.0;
    let mut waypoints = Vec::new();
    let mut t = 0u64;
    loop {
        if t.is_multiple_of(WAYPOINT_STEP_US) || t == duration_us {
            let yaw = heading(t as f64 * 1e-6);
            waypoints.push(Waypoint { timestamp: Timestamp(t), pose: Pose::planar(x, y, 0.0, yaw) });
        }
        if t >= duration_us {
            break;
        }
        let step = INTEGRATION_STEP_US.min(duration_us - t);
        let dt = step as f64 * 1e-6;
        // midpoint heading
        let yaw = heading((t as f64 + step as f64 / 2.0) * 1e-6);
        x += speed * yaw.cos() * dt;
        y += speed * yaw.sin() * dt;
        t += step;
    }
    EgoTrajectory::new(waypoints)
}

/// Binary ground-truth occupancy in the ego frame at `t`.
pub fn gt_bev_at(scenario: &Scenario, t: Timestamp, spec: &GridSpec) -> Result<BevGrid, WorldError> {
    Ok(bevgrid::rasterize_footprints(&scenario.footprints_in_ego(t)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn agent(velocity: [f64; 2], yaw_rate: f64) -> AgentState {
        AgentState {
            id: 0,
            center: Point3::new(0.0, 0.0, 0.0),
            yaw: velocity[1].atan2(velocity[0]),
            dims: Dims { length: 4.0, width: 2.0, height: 1.5 },
            velocity,
            yaw_rate,
        }
    }

    #[test]
    fn static_agent_is_unchanged() {
        let a = agent([0.0, 0.0], 0.0);
        assert_eq!(a.propagate(3.7), a);
    }

    #[test]
    fn linear_motion() {
        let a = agent([2.0, 0.0], 0.0).propagate(0.5);
        assert_eq!(a.center, Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn ctrv_matches_fine_integration() {
        let a = agent([10.0, 0.0], 0.1);
        let exact = a.propagate(1.0);

        // 1 us midpoint steps of the turning velocity vector
        let steps = 1_000_000;
        let dt = 1.0 / steps as f64;
        let (mut x, mut y) = (0.0f64, 0.0f64);
        for k in 0..steps {
            let heading = 0.1 * (k as f64 + 0.5) * dt;
            x += 10.0 * heading.cos() * dt;
            y += 10.0 * heading.sin() * dt;
        }
        assert!((exact.center.x - x).abs() < 1e-6 && (exact.center.y - y).abs() < 1e-6);
        assert!((exact.yaw - 0.1).abs() < 1e-15);
    }

    fn line_traj() -> EgoTrajectory {
        let waypoints = (0..=10)
            .map(|k| Waypoint {
                timestamp: Timestamp(k * 100_000),
                pose: Pose::translation(k as f64, 0.0, 0.0),
            })
            .collect();
        EgoTrajectory::new(waypoints).unwrap()
    }

    #[test]
    fn ego_pose_exact_at_knots_and_midpoint() {
        let traj = line_traj();
        assert_eq!(traj.pose_at(Timestamp(300_000)).unwrap(), Pose::translation(3.0, 0.0, 0.0));
        let mid = traj.pose_at(Timestamp(500_000)).unwrap();
        assert!((mid.translation.x - 5.0).abs() < 1e-12);
        let half = traj.pose_at(Timestamp(450_000)).unwrap();
        assert!((half.translation.x - 4.5).abs() < 1e-12);
        assert!(traj.pose_at(Timestamp(1_000_001)).is_err());
    }

    #[test]
    fn ego_rotation_slerps() {
        let traj = EgoTrajectory::new(vec![
            Waypoint { timestamp: Timestamp(0), pose: Pose::planar(0.0, 0.0, 0.0, 0.0) },
            Waypoint { timestamp: Timestamp(1_000_000), pose: Pose::planar(0.0, 0.0, 0.0, FRAC_PI_2) },
        ])
        .unwrap();
        let mid = traj.pose_at(Timestamp(500_000)).unwrap();
        assert!((mid.rotation.yaw() - FRAC_PI_2 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_invariants_enforced() {
        let bad_order = vec![
            Waypoint { timestamp: Timestamp(10), pose: Pose::identity() },
            Waypoint { timestamp: Timestamp(10), pose: Pose::identity() },
        ];
        assert!(EgoTrajectory::new(bad_order).is_err());
        let jump = vec![
            Waypoint { timestamp: Timestamp(0), pose: Pose::identity() },
            Waypoint { timestamp: Timestamp(100_000), pose: Pose::translation(2.5, 0.0, 0.0) },
        ];
        assert!(EgoTrajectory::new(jump).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let p = ScenarioParams::default();
        let a = Scenario::generate(&p).unwrap();
        let b = Scenario::generate(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.agents.len(), 12);
        assert_eq!(a.duration_us, 20_000_000);
        for t in [0u64, 1_234_567, 20_000_000] {
            assert_eq!(a.agents_at(Timestamp(t)).unwrap(), b.agents_at(Timestamp(t)).unwrap());
        }
        let c = Scenario::generate(&ScenarioParams { seed: 8, ..p }).unwrap();
        assert_ne!(a.agents, c.agents);
    }

    #[test]
    fn short_scenarios_rejected() {
        let p = ScenarioParams { duration_s: 0.5, ..ScenarioParams::default() };
        assert!(Scenario::generate(&p).is_err());
    }

    #[test]
    fn out_of_range_queries_error() {
        let s = Scenario::generate(&ScenarioParams { duration_s: 2.0, ..Default::default() }).unwrap();
        assert!(matches!(s.agents_at(Timestamp(2_000_001)), Err(WorldError::OutOfRange { .. })));
        assert!(s.ego_pose_at(Timestamp(2_000_000)).is_ok());
    }

    #[test]
    fn empty_scenario_has_empty_gt() {
        let s = Scenario::new(
            0,
            2_000_000,
            vec![],
            EgoTrajectory::stationary(Pose::identity(), 2_000_000),
            100.0,
        )
        .unwrap();
        assert_eq!(gt_bev_at(&s, Timestamp(1_000), &GridSpec::default()).unwrap().occupied(), 0);
    }

    #[test]
    fn static_world_gt_is_time_invariant() {
        let p = ScenarioParams::default().static_world();
        let s = Scenario::generate(&p).unwrap();
        let spec = GridSpec::default();
        let a = gt_bev_at(&s, Timestamp(1_000_000), &spec).unwrap();
        let b = gt_bev_at(&s, Timestamp(17_300_000), &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn footprint_area_matches_cell_count() {
        let spec = GridSpec::default();
        let s = Scenario::generate(&ScenarioParams::default()).unwrap();
        let t = Timestamp(5_000_000);
        for fp in s.footprints_in_ego(t).unwrap() {
            let (x0, y0, x1, y1) = fp.bounds();
            let h = spec.half_extent();
            if x0 < -h || y0 < -h || x1 > h || y1 > h {
                continue;
            }
            let cells = crate::bevgrid::rasterize_footprints(&[fp], &spec).occupied() as f64;
            let area = fp.length * fp.width;
            // one cell-perimeter band: perimeter x half a cell diagonal, either way
            let band = fp.perimeter() * spec.cell_size_x() * std::f64::consts::SQRT_2 / 2.0;
            assert!((cells * spec.cell_area() - area).abs() <= band, "cells {cells} area {area}");
        }
    }

    #[test]
    fn perimeter_walk_stays_on_edge() {
        let fp = Footprint { cx: 3.0, cy: -2.0, yaw: 0.4, length: 4.5, width: 1.8 };
        for k in 0..100 {
            let (x, y) = fp.perimeter_point(k as f64 / 100.0);
            assert!(fp.distance_to_edge(x, y) < 1e-12);
        }
        let (x, y) = fp.perimeter_point(0.0);
        let c = fp.corners()[0];
        assert!((x - c.0).abs() < 1e-12 && (y - c.1).abs() < 1e-12);
    }
}
