//! Voxel and BEV rasters plus the geometric segmentation head.
//!
//! The grid is centered on the reference ego frame: x (forward) and y (left)
//! span `[-extent/2, extent/2]`, z spans `[z_min, z_max]`. Binning is floor
//! based, with points on a max edge assigned to the last cell.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{Point3, Timestamp};
use crate::worldsim::{Footprint, Scenario, WorldError};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: GridSpec, right: GridSpec },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub cells_x: usize,
    pub cells_y: usize,
    pub cells_z: usize,
    /// Side length of the square grid footprint in meters.
    pub extent: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cells_x: 200, cells_y: 200, cells_z: 8, extent: 100.0, z_min: -5.0, z_max: 3.0 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.cells_x == 0 || self.cells_y == 0 || self.cells_z == 0 {
            return Err(GridError::InvalidSpec("cell counts must be positive".into()));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(GridError::InvalidSpec(format!("extent {} must be positive", self.extent)));
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_max > self.z_min) {
            return Err(GridError::InvalidSpec(format!(
                "z range [{}, {}] is empty",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    pub fn half_extent(&self) -> f64 {
        self.extent / 2.0
    }

    pub fn cell_size_x(&self) -> f64 {
        self.extent / self.cells_x as f64
    }

    pub fn cell_size_y(&self) -> f64 {
        self.extent / self.cells_y as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size_x() * self.cell_size_y()
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.half_extent();
        (
            -h + (ix as f64 + 0.5) * self.cell_size_x(),
            -h + (iy as f64 + 0.5) * self.cell_size_y(),
        )
    }

    pub fn bin_x(&self, x: f64) -> Option<usize> {
        bin(x, -self.half_extent(), self.half_extent(), self.cells_x)
    }

    pub fn bin_y(&self, y: f64) -> Option<usize> {
        bin(y, -self.half_extent(), self.half_extent(), self.cells_y)
    }

    pub fn bin_z(&self, z: f64) -> Option<usize> {
        bin(z, self.z_min, self.z_max, self.cells_z)
    }

    pub fn voxel_of(&self, p: &Point3) -> Option<(usize, usize, usize)> {
        Some((self.bin_x(p.x)?, self.bin_y(p.y)?, self.bin_z(p.z)?))
    }
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let idx = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
    Some(idx.min(n - 1))
}

/// Dense per-voxel point counts, indexed `[x, y, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub counts: Array3<u32>,
}

impl VoxelGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        VoxelGrid { spec, counts: Array3::zeros((spec.cells_x, spec.cells_y, spec.cells_z)) }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Dense `[x, y]` raster: point counts for features, `{0, 1}` for masks.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    pub values: Array2<u32>,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        BevGrid { spec, values: Array2::zeros((spec.cells_x, spec.cells_y)) }
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&c| c as u64).sum()
    }

    pub fn occupied(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v <= 1)
    }

    pub fn to_binary(&self) -> BevGrid {
        BevGrid { spec: self.spec, values: self.values.mapv(|v| u32::from(v > 0)) }
    }

    pub fn same_shape(&self, other: &BevGrid) -> Result<(), GridError> {
        if self.values.dim() != other.values.dim() || self.spec != other.spec {
            return Err(GridError::ShapeMismatch { left: self.spec, right: other.spec });
        }
        Ok(())
    }

    /// Binary PGM (P5). Masks map to 0/255, counts saturate at 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (nx, ny) = self.values.dim();
        let binary = self.is_binary();
        let mut out = format!("P5\n{ny} {nx}\n255\n").into_bytes();
        for row in 0..nx {
            for col in 0..ny {
                let (ix, iy) = image_to_cell(nx, ny, row, col);
                let v = self.values[[ix, iy]];
                out.push(if binary { (v * 255) as u8 } else { v.min(255) as u8 });
            }
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm())
            .map_err(|source| GridError::Io { path: path.display().to_string(), source })
    }
}

/// Image layout shared by PGM/PPM exports: forward (+x) up, left (+y) left.
pub(crate) fn image_to_cell(nx: usize, ny: usize, row: usize, col: usize) -> (usize, usize) {
    (nx - 1 - row, ny - 1 - col)
}

pub(crate) fn cell_to_image(nx: usize, ny: usize, ix: usize, iy: usize) -> (usize, usize) {
    (nx - 1 - ix, ny - 1 - iy)
}

pub fn rasterize_points(points: &[Point3], spec: &GridSpec) -> VoxelGrid {
    let mut grid = VoxelGrid::zeros(*spec);
    for p in points {
        if let Some(idx) = spec.voxel_of(p) {
            grid.counts[idx] += 1;
        }
    }
    grid
}

pub fn flatten(v: &VoxelGrid) -> BevGrid {
    BevGrid { spec: v.spec, values: v.counts.sum_axis(Axis(2)) }
}

/// Binary mask of cells whose center lies inside any footprint.
pub fn rasterize_footprints(footprints: &[Footprint], spec: &GridSpec) -> BevGrid {
    let mut grid = BevGrid::zeros(*spec);
    let h = spec.half_extent();
    let (sx, sy) = (spec.cell_size_x(), spec.cell_size_y());
    for fp in footprints {
        let (min_x, min_y, max_x, max_y) = fp.bounds();
        if max_x < -h || min_x > h || max_y < -h || min_y > h {
            continue;
        }
        let ix0 = (((min_x + h) / sx).floor().max(0.0)) as usize;
        let iy0 = (((min_y + h) / sy).floor().max(0.0)) as usize;
        let ix1 = (((max_x + h) / sx).ceil().max(0.0) as usize).min(spec.cells_x);
        let iy1 = (((max_y + h) / sy).ceil().max(0.0) as usize).min(spec.cells_y);
        for ix in ix0..ix1 {
            for iy in iy0..iy1 {
                let (cx, cy) = spec.cell_center(ix, iy);
                if fp.contains(cx, cy) {
                    grid.values[[ix, iy]] = 1;
                }
            }
        }
    }
    grid
}

/// Shifts each footprint along the ray from the ego origin by a
/// `N(0, (sigma_per_meter * range)^2)` draw. One draw per footprint, in order.
pub fn displace_along_rays<R: Rng + ?Sized>(
    footprints: &[Footprint],
    sigma_per_meter: f64,
    rng: &mut R,
) -> Vec<Footprint> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    footprints
        .iter()
        .map(|fp| {
            let z: f64 = unit.sample(rng);
            let range = fp.cx.hypot(fp.cy);
            if range == 0.0 || sigma_per_meter == 0.0 {
                return *fp;
            }
            let shift = z * sigma_per_meter * range;
            Footprint { cx: fp.cx + shift * fp.cx / range, cy: fp.cy + shift * fp.cy / range, ..*fp }
        })
        .collect()
}

/// Stand-in for a monocular camera branch: ground-truth footprints with
/// range-proportional depth error, rasterized in the ego frame at `t`.
pub fn camera_pseudo_occupancy<R: Rng + ?Sized>(
    scenario: &Scenario,
    t: Timestamp,
    spec: &GridSpec,
    depth_noise_sigma_per_meter: f64,
    rng: &mut R,
) -> Result<BevGrid, GridError> {
    let footprints = scenario.footprints_in_ego(t)?;
    let displaced = displace_along_rays(&footprints, depth_noise_sigma_per_meter, rng);
    Ok(rasterize_footprints(&displaced, spec))
}

/// Cell offsets `(dx, dy)` with `dx² + dy² <= r²`.
pub fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

pub fn dilate(grid: &BevGrid, radius: usize) -> BevGrid {
    let (nx, ny) = grid.values.dim();
    let offsets = disc_offsets(radius);
    let mut out = BevGrid::zeros(grid.spec);
    for ((ix, iy), &v) in grid.values.indexed_iter() {
        if v == 0 {
            continue;
        }
        for &(dx, dy) in &offsets {
            let x = ix as isize + dx;
            let y = iy as isize + dy;
            if x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny {
                out.values[[x as usize, y as usize]] = 1;
            }
        }
    }
    out
}

/// Fusion head: point occupancy dilated by a disc, unioned with the camera
/// channel support.
pub fn predict_segmentation(
    point_bev: &BevGrid,
    camera_bev: &BevGrid,
    dilation_radius_cells: usize,
) -> Result<BevGrid, GridError> {
    point_bev.same_shape(camera_bev)?;
    let mut out = dilate(point_bev, dilation_radius_cells);
    ndarray::Zip::from(&mut out.values).and(&camera_bev.values).for_each(|o, &c| {
        if c > 0 {
            *o = 1;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> GridSpec {
        GridSpec { cells_x: 16, cells_y: 16, cells_z: 2, extent: 8.0, z_min: -1.0, z_max: 1.0 }
    }

    #[test]
    fn empty_inputs_give_empty_grids() {
        let spec = GridSpec::default();
        let v = rasterize_points(&[], &spec);
        assert_eq!(v.total(), 0);
        assert_eq!(flatten(&v).total(), 0);
        assert_eq!(v.counts.dim(), (200, 200, 8));
    }

    #[test]
    fn center_point_lands_in_central_bin() {
        let spec = GridSpec::default();
        let v = rasterize_points(&[Point3::new(0.0, 0.0, 0.0)], &spec);
        assert_eq!(v.counts[[100, 100, 5]], 1);
        assert_eq!(v.total(), 1);
    }

    #[test]
    fn max_edge_belongs_to_last_cell_and_outside_is_ignored() {
        let spec = small_spec();
        let pts = [
            Point3::new(4.0, 4.0, 1.0),
            Point3::new(-4.0, -4.0, -1.0),
            Point3::new(4.0001, 0.0, 0.0),
            Point3::new(0.0, 0.0, 1.5),
            Point3::new(f64::NAN, 0.0, 0.0),
        ];
        let v = rasterize_points(&pts, &spec);
        assert_eq!(v.counts[[15, 15, 1]], 1);
        assert_eq!(v.counts[[0, 0, 0]], 1);
        assert_eq!(v.total(), 2);
    }

    #[test]
    fn flatten_sums_columns() {
        let spec = small_spec();
        let mut v = VoxelGrid::zeros(spec);
        v.counts[[3, 4, 1]] = 3;
        let b = flatten(&v);
        assert_eq!(b.values[[3, 4]], 3);
        assert_eq!(b.total(), 3);
    }

    #[test]
    fn centered_car_footprint_is_eight_by_four() {
        let spec = GridSpec::default();
        let fp = Footprint { cx: 0.0, cy: 0.0, yaw: 0.0, length: 4.0, width: 2.0 };
        let g = rasterize_footprints(&[fp], &spec);
        assert_eq!(g.occupied(), 32);
        for ix in 96..104 {
            for iy in 98..102 {
                assert_eq!(g.values[[ix, iy]], 1);
            }
        }
    }

    #[test]
    fn footprint_outside_extent_is_empty() {
        let spec = GridSpec::default();
        let fp = Footprint { cx: 80.0, cy: 0.0, yaw: 0.3, length: 4.0, width: 2.0 };
        assert_eq!(rasterize_footprints(&[fp], &spec).occupied(), 0);
    }

    #[test]
    fn disc_of_radius_two_has_thirteen_cells() {
        assert_eq!(disc_offsets(0).len(), 1);
        assert_eq!(disc_offsets(2).len(), 13);
        let spec = GridSpec::default();
        let mut pts = BevGrid::zeros(spec);
        pts.values[[50, 60]] = 1;
        let out = predict_segmentation(&pts, &BevGrid::zeros(spec), 2).unwrap();
        assert_eq!(out.occupied(), 13);
    }

    #[test]
    fn camera_channel_alone_passes_through() {
        let spec = small_spec();
        let mut cam = BevGrid::zeros(spec);
        cam.values[[1, 2]] = 1;
        cam.values[[7, 7]] = 1;
        let out = predict_segmentation(&BevGrid::zeros(spec), &cam, 3).unwrap();
        assert_eq!(out, cam);
        let none = predict_segmentation(&BevGrid::zeros(spec), &BevGrid::zeros(spec), 3).unwrap();
        assert_eq!(none.occupied(), 0);
    }

    #[test]
    fn prediction_is_idempotent_at_radius_zero() {
        let spec = small_spec();
        let mut pts = BevGrid::zeros(spec);
        pts.values[[4, 4]] = 2;
        let mut cam = BevGrid::zeros(spec);
        cam.values[[9, 1]] = 1;
        let once = predict_segmentation(&pts, &cam, 0).unwrap();
        let twice = predict_segmentation(&once, &BevGrid::zeros(spec), 0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn mismatched_specs_are_rejected() {
        let a = BevGrid::zeros(small_spec());
        let b = BevGrid::zeros(GridSpec::default());
        assert!(matches!(predict_segmentation(&a, &b, 1), Err(GridError::ShapeMismatch { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::default().validate().is_ok());
        assert!(GridSpec { cells_z: 0, ..GridSpec::default() }.validate().is_err());
        assert!(GridSpec { extent: -1.0, ..GridSpec::default() }.validate().is_err());
        assert!(GridSpec { z_min: 3.0, ..GridSpec::default() }.validate().is_err());
    }

    #[test]
    fn zero_sigma_leaves_footprints_in_place() {
        let fps = [Footprint { cx: 12.0, cy: -3.0, yaw: 0.2, length: 4.5, width: 1.9 }];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(displace_along_rays(&fps, 0.0, &mut rng), fps.to_vec());
    }

    #[test]
    fn ray_displacement_statistics() {
        // agent at 40 m, 0.02 / m -> 0.8 m standard deviation along the ray
        let fp = Footprint { cx: 40.0 * 0.6, cy: 40.0 * 0.8, yaw: 0.0, length: 4.0, width: 2.0 };
        let n = 10_000;
        let mut shifts = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = displace_along_rays(&[fp], 0.02, &mut rng)[0];
            let (dx, dy) = (out.cx - fp.cx, out.cy - fp.cy);
            // displacement stays on the ray
            assert!((dx * 0.8 - dy * 0.6).abs() < 1e-9);
            shifts.push(dx * 0.6 + dy * 0.8);
        }
        let mean = shifts.iter().sum::<f64>() / n as f64;
        let var = shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var.sqrt() - 0.8).abs() < 0.03, "std {}", var.sqrt());
    }

    #[test]
    fn pgm_header_and_orientation() {
        let spec = GridSpec { cells_x: 2, cells_y: 3, cells_z: 1, extent: 3.0, z_min: 0.0, z_max: 1.0 };
        let mut g = BevGrid::zeros(spec);
        g.values[[1, 2]] = 1;
        let pgm = g.to_pgm();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        // forward-most, left-most cell is the top-left pixel
        assert_eq!(&pgm[header.len()..], &[255, 0, 0, 0, 0, 0]);
    }
}
