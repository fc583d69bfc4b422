//! IoU scoring, latency sweeps, CSV reports and PPM renders.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bevgrid::{self, cell_to_image, BevGrid, GridError, GridSpec};
use crate::frames::Timestamp;
use crate::ingest::CaptureLog;
use crate::sensors::mix_seed;
use crate::syncbuild::{build_variant, BuildError, DatasetVariant, LatencyConfig, Modality, VariantFrame};
use crate::worldsim::{gt_bev_at, Footprint, Scenario, WorldError};

pub const CSV_HEADER: [&str; 7] = [
    "modality",
    "target_latency_us",
    "achieved_latency_us",
    "compensate",
    "mean_iou",
    "degradation",
    "improvement",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("domain error: {0} grid is not binary")]
    Domain(&'static str),
    #[error("rung {rung}: {source}")]
    Rung { rung: String, source: BuildError },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("I/O error at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("report error: {0}")]
    Report(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// `|pred ∩ gt| / |pred ∪ gt|` over cells; two empty grids score 1.0.
pub fn iou(pred: &BevGrid, gt: &BevGrid) -> Result<f64, EvalError> {
    pred.same_shape(gt)?;
    if !pred.is_binary() {
        return Err(EvalError::Domain("prediction"));
    }
    if !gt.is_binary() {
        return Err(EvalError::Domain("ground-truth"));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.values.iter().zip(gt.values.iter()) {
        inter += (p & g) as u64;
        union += (p | g) as u64;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IoUReport {
    pub keyframes: Vec<usize>,
    pub per_frame: Vec<f64>,
}

impl IoUReport {
    pub fn count(&self) -> usize {
        self.per_frame.len()
    }

    pub fn mean(&self) -> f64 {
        if self.per_frame.is_empty() {
            return 0.0;
        }
        self.per_frame.iter().sum::<f64>() / self.per_frame.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladders {
    pub radar: Vec<u64>,
    pub lidar: Vec<u64>,
}

impl Default for Ladders {
    fn default() -> Self {
        Ladders {
            radar: vec![0, 70_000, 140_000, 220_000, 290_000, 360_000, 570_000],
            lidar: vec![0, 50_000, 150_000, 200_000, 300_000, 350_000, 550_000],
        }
    }
}

impl Ladders {
    /// Radar rungs twice (raw, compensated), LiDAR once, in report order.
    pub fn configs(&self) -> Vec<LatencyConfig> {
        let mut out = Vec::new();
        for &l in &self.radar {
            for compensate in [false, true] {
                out.push(LatencyConfig { target_latency_us: l, modality: Modality::Radar, compensate });
            }
        }
        for &l in &self.lidar {
            out.push(LatencyConfig { target_latency_us: l, modality: Modality::Lidar, compensate: false });
        }
        sort_configs(&mut out);
        out.dedup();
        out
    }
}

fn sort_configs(c: &mut [LatencyConfig]) {
    c.sort_by_key(|c| (c.modality, c.target_latency_us, c.compensate));
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub grid: GridSpec,
    /// Disc radius (cells) applied to radar occupancy before the union.
    pub radar_dilation_radius: usize,
    /// Same for LiDAR, which is dense enough to need little or none.
    pub lidar_dilation_radius: usize,
    pub camera_sigma_per_m: f64,
    /// Seeds the camera pseudo-channel.
    pub seed: u64,
    /// Worker threads; 0 picks the rayon default.
    pub jobs: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            grid: GridSpec::default(),
            radar_dilation_radius: 1,
            lidar_dilation_radius: 0,
            camera_sigma_per_m: 0.08,
            seed: 7,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub modality: Modality,
    pub target_latency_us: u64,
    pub achieved_latency_us: f64,
    pub compensate: bool,
    pub mean_iou: f64,
    /// Synchronous mean (same modality and compensation flag) minus this mean.
    pub degradation: f64,
    /// Compensated minus raw mean at the same rung; compensated rows only.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Per-rung reports, same order as `rows`.
    pub reports: Vec<IoUReport>,
    /// Camera channel alone, scored on the same keyframes.
    pub camera_only: IoUReport,
}

impl SweepResult {
    pub fn row(&self, modality: Modality, target_latency_us: u64, compensate: bool) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.modality == modality && r.target_latency_us == target_latency_us && r.compensate == compensate
        })
    }
}

/// Camera pseudo-channel for keyframe `index`; one RNG stream per keyframe
/// so every rung sees the same camera input.
pub fn camera_channel(
    scenario: &Scenario,
    keyframe_index: usize,
    t: Timestamp,
    params: &SweepParams,
) -> Result<BevGrid, GridError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, keyframe_index as u64));
    bevgrid::camera_pseudo_occupancy(scenario, t, &params.grid, params.camera_sigma_per_m, &mut rng)
}

impl SweepParams {
    pub fn dilation_radius(&self, modality: Modality) -> usize {
        match modality {
            Modality::Radar => self.radar_dilation_radius,
            Modality::Lidar => self.lidar_dilation_radius,
        }
    }
}

/// Point payload of a variant frame through the fusion head.
pub fn predict_frame(
    frame: &VariantFrame,
    modality: Modality,
    camera: &BevGrid,
    params: &SweepParams,
) -> Result<BevGrid, GridError> {
    let voxels = bevgrid::rasterize_points(&frame.payload.positions(), &params.grid);
    bevgrid::predict_segmentation(&bevgrid::flatten(&voxels), camera, params.dilation_radius(modality))
}

struct KeyframeInputs {
    index: usize,
    camera: BevGrid,
    gt: BevGrid,
}

fn keyframe_inputs(
    scenario: &Scenario,
    frames: &[(usize, Timestamp)],
    params: &SweepParams,
) -> Result<Vec<KeyframeInputs>, EvalError> {
    frames
        .par_iter()
        .map(|&(index, t)| {
            Ok(KeyframeInputs {
                index,
                camera: camera_channel(scenario, index, t, params)?,
                gt: gt_bev_at(scenario, t, &params.grid)?,
            })
        })
        .collect()
}

fn score_variant(
    variant: &DatasetVariant,
    inputs: &[KeyframeInputs],
    params: &SweepParams,
) -> Result<IoUReport, EvalError> {
    let per_frame = inputs
        .par_iter()
        .map(|k| {
            let frame = variant.frame_for_keyframe(k.index).expect("keyframe common to all rungs");
            iou(&predict_frame(frame, variant.config.modality, &k.camera, params)?, &k.gt)
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    Ok(IoUReport { keyframes: inputs.iter().map(|k| k.index).collect(), per_frame })
}

fn rung_name(c: &LatencyConfig) -> String {
    format!(
        "{} {} us{}",
        c.modality.name(),
        c.target_latency_us,
        if c.compensate { " compensated" } else { "" }
    )
}

/// Scores every rung of `ladders` on the keyframes present in all variants.
pub fn run_sweep(log: &CaptureLog, ladders: &Ladders, params: &SweepParams) -> Result<SweepResult, EvalError> {
    params.grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.jobs)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    pool.install(|| sweep_inner(log, ladders, params))
}

fn sweep_inner(log: &CaptureLog, ladders: &Ladders, params: &SweepParams) -> Result<SweepResult, EvalError> {
    let configs = ladders.configs();
    let variants = configs
        .par_iter()
        .map(|c| build_variant(log, c).map_err(|source| EvalError::Rung { rung: rung_name(c), source }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut common: Option<BTreeSet<usize>> = None;
    for v in &variants {
        let have: BTreeSet<usize> = v.frames.iter().map(|f| f.keyframe_index).collect();
        common = Some(match common {
            None => have,
            Some(c) => c.intersection(&have).copied().collect(),
        });
    }
    let keyframes = log.keyframes().map_err(|e| EvalError::Report(e.to_string()))?;
    let frames: Vec<(usize, Timestamp)> = common
        .unwrap_or_default()
        .into_iter()
        .map(|i| (i, keyframes[i].timestamp))
        .collect();
    if configs.is_empty() {
        return Ok(SweepResult { rows: vec![], reports: vec![], camera_only: IoUReport::default() });
    }
    if frames.is_empty() {
        return Err(EvalError::Report("no keyframe is available at every rung".into()));
    }

    let scenario = &log.meta.scenario;
    let inputs = keyframe_inputs(scenario, &frames, params)?;
    let reports = variants
        .par_iter()
        .map(|v| score_variant(v, &inputs, params))
        .collect::<Result<Vec<_>, _>>()?;
    let camera_only = IoUReport {
        keyframes: inputs.iter().map(|k| k.index).collect(),
        per_frame: inputs.iter().map(|k| iou(&k.camera, &k.gt)).collect::<Result<_, _>>()?,
    };

    let mut rows: Vec<SweepRow> = configs
        .iter()
        .zip(&variants)
        .zip(&reports)
        .map(|((c, v), r)| {
            let used: Vec<&VariantFrame> =
                r.keyframes.iter().filter_map(|&k| v.frame_for_keyframe(k)).collect();
            let achieved =
                used.iter().map(|f| f.achieved_latency_us as f64).sum::<f64>() / used.len() as f64;
            SweepRow {
                modality: c.modality,
                target_latency_us: c.target_latency_us,
                achieved_latency_us: achieved,
                compensate: c.compensate,
                mean_iou: r.mean(),
                degradation: 0.0,
                improvement: None,
            }
        })
        .collect();
    fill_differences(&mut rows);
    Ok(SweepResult { rows, reports, camera_only })
}

/// Sync reference is the lowest rung of the same modality and flag.
fn fill_differences(rows: &mut [SweepRow]) {
    let snapshot = rows.to_vec();
    for row in rows.iter_mut() {
        if let Some(sync) = snapshot
            .iter()
            .filter(|r| r.modality == row.modality && r.compensate == row.compensate)
            .min_by_key(|r| r.target_latency_us)
        {
            row.degradation = sync.mean_iou - row.mean_iou;
        }
        if row.compensate {
            row.improvement = snapshot
                .iter()
                .find(|r| r.modality == row.modality && r.target_latency_us == row.target_latency_us && !r.compensate)
                .map(|raw| row.mean_iou - raw.mean_iou);
        }
    }
}

fn fixed(v: f64) -> String {
    // adding 0.0 folds -0.0 into 0.0
    format!("{:.6}", v + 0.0)
}

pub fn report_csv(result: &SweepResult) -> Result<Vec<u8>, EvalError> {
    let mut rows = result.rows.clone();
    rows.sort_by_key(|r| (r.modality, r.target_latency_us, r.compensate));
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| EvalError::Report(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in &rows {
        w.write_record([
            r.modality.name().to_string(),
            r.target_latency_us.to_string(),
            fixed(r.achieved_latency_us),
            r.compensate.to_string(),
            fixed(r.mean_iou),
            fixed(r.degradation),
            r.improvement.map(fixed).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| EvalError::Report(e.to_string()))
}

pub fn emit_report(result: &SweepResult, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    fs::write(path, report_csv(result)?)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

pub fn parse_report(bytes: &[u8]) -> Result<Vec<SweepRow>, EvalError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| EvalError::Report(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(EvalError::Report(format!("unexpected header {header:?}")));
    }
    let bad = |what: &str, v: &str| EvalError::Report(format!("bad {what} `{v}`"));
    let float = |v: &str, what: &str| v.parse::<f64>().map_err(|_| bad(what, v));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| EvalError::Report(e.to_string()))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(EvalError::Report(format!("row has {} fields", rec.len())));
        }
        rows.push(SweepRow {
            modality: Modality::parse(&rec[0]).ok_or_else(|| bad("modality", &rec[0]))?,
            target_latency_us: rec[1].parse().map_err(|_| bad("latency", &rec[1]))?,
            achieved_latency_us: float(&rec[2], "achieved latency")?,
            compensate: rec[3].parse().map_err(|_| bad("compensate", &rec[3]))?,
            mean_iou: float(&rec[4], "mean_iou")?,
            degradation: float(&rec[5], "degradation")?,
            improvement: if rec[6].is_empty() { None } else { Some(float(&rec[6], "improvement")?) },
        });
    }
    Ok(rows)
}

pub type Rgb = [u8; 3];
pub const BACKGROUND: Rgb = [255, 255, 255];
pub const GT_ONLY: Rgb = [66, 133, 244];
pub const PRED_ONLY: Rgb = [234, 67, 53];
pub const OVERLAP: Rgb = [52, 168, 83];
pub const OUTLINE: Rgb = [0, 0, 0];

/// Cells crossed by a footprint outline, sampled at quarter-cell spacing.
fn outline_cells(fp: &Footprint, spec: &GridSpec) -> Vec<(usize, usize)> {
    let step = spec.cell_size_x().min(spec.cell_size_y()) / 4.0;
    let n = (fp.perimeter() / step).ceil().max(4.0) as usize;
    let mut cells: Vec<(usize, usize)> = (0..n)
        .filter_map(|i| {
            let (x, y) = fp.perimeter_point(i as f64 / n as f64);
            Some((spec.bin_x(x)?, spec.bin_y(y)?))
        })
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// PPM (P6) with forward up and left to the left.
pub fn render_bev_ppm(pred: &BevGrid, gt: &BevGrid, outlines: &[Footprint]) -> Result<Vec<u8>, EvalError> {
    pred.same_shape(gt)?;
    let (nx, ny) = pred.values.dim();
    let mut pixels = vec![BACKGROUND; nx * ny];
    for ((ix, iy), &p) in pred.values.indexed_iter() {
        let g = gt.values[[ix, iy]];
        let color = match (p > 0, g > 0) {
            (true, true) => OVERLAP,
            (true, false) => PRED_ONLY,
            (false, true) => GT_ONLY,
            (false, false) => continue,
        };
        let (r, c) = cell_to_image(nx, ny, ix, iy);
        pixels[r * ny + c] = color;
    }
    for fp in outlines {
        for (ix, iy) in outline_cells(fp, &pred.spec) {
            let (r, c) = cell_to_image(nx, ny, ix, iy);
            pixels[r * ny + c] = OUTLINE;
        }
    }
    let mut out = format!("P6\n{ny} {nx}\n255\n").into_bytes();
    out.extend(pixels.iter().flatten());
    Ok(out)
}

pub fn render_bev(
    pred: &BevGrid,
    gt: &BevGrid,
    outlines: &[Footprint],
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    fs::write(path, render_bev_ppm(pred, gt, outlines)?)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}
