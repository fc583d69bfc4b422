//! Run configuration.
//!
//! Values come from built-in defaults, then an optional TOML file
//! (`--config`), then command-line flags, each layer overriding the last.
//! The worker count additionally falls back to `ASYNCBEV_JOBS` when
//! `--jobs` is absent. See `docs/config.md` for the file schema.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use asyncbev::eval::{Ladders, SweepParams};
use asyncbev::{GridSpec, Scenario, ScenarioParams, SensorConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub radar_ms: Vec<u64>,
    pub lidar_ms: Vec<u64>,
}

impl Default for LadderConfig {
    fn default() -> Self {
        let l = Ladders::default();
        LadderConfig {
            radar_ms: l.radar.iter().map(|us| us / 1000).collect(),
            lidar_ms: l.lidar.iter().map(|us| us / 1000).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub radar_dilation_radius: usize,
    pub lidar_dilation_radius: usize,
    pub camera_sigma_per_m: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        let p = SweepParams::default();
        HeadConfig {
            radar_dilation_radius: p.radar_dilation_radius,
            lidar_dilation_radius: p.lidar_dilation_radius,
            camera_sigma_per_m: p.camera_sigma_per_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario, capture and camera-channel seed.
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub scenario: ScenarioParams,
    pub sensors: SensorConfig,
    pub grid: GridSpec,
    pub ladders: LadderConfig,
    pub head: HeadConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Top-level `seed`, else `scenario.seed`.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.scenario.seed)
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams { seed: self.seed(), ..self.scenario.clone() }
    }

    pub fn ladders(&self) -> Ladders {
        Ladders {
            radar: self.ladders.radar_ms.iter().map(|ms| ms * 1000).collect(),
            lidar: self.ladders.lidar_ms.iter().map(|ms| ms * 1000).collect(),
        }
    }

    pub fn sweep_params(&self, seed: u64, jobs: usize) -> SweepParams {
        SweepParams {
            grid: self.grid,
            radar_dilation_radius: self.head.radar_dilation_radius,
            lidar_dilation_radius: self.head.lidar_dilation_radius,
            camera_sigma_per_m: self.head.camera_sigma_per_m,
            seed,
            jobs,
        }
    }

    /// Checks every section against the library invariants.
    pub fn validate(&self) -> Result<()> {
        Scenario::generate(&self.scenario_params()).context("invalid scenario settings")?;
        self.sensors.validate().context("invalid sensor settings")?;
        self.grid.validate().context("invalid grid settings")?;
        let sigma = self.head.camera_sigma_per_m;
        if !(sigma.is_finite() && sigma >= 0.0) {
            bail!("camera_sigma_per_m must be a non-negative number, got {sigma}");
        }
        for (name, ladder) in [("radar", &self.ladders.radar_ms), ("lidar", &self.ladders.lidar_ms)] {
            if ladder.windows(2).any(|w| w[1] <= w[0]) {
                bail!("{name} ladder must be strictly increasing: {ladder:?}");
            }
        }
        Ok(())
    }
}

/// `--jobs`, then `ASYNCBEV_JOBS`, then the config file, then 0 (automatic).
pub fn resolve_jobs(flag: Option<usize>, env: Option<&str>, config: Option<usize>) -> Result<usize> {
    if let Some(j) = flag {
        return Ok(j);
    }
    if let Some(v) = env.filter(|v| !v.trim().is_empty()) {
        return v.trim().parse().with_context(|| format!("ASYNCBEV_JOBS={v:?} is not a count"));
    }
    Ok(config.unwrap_or(0))
}
