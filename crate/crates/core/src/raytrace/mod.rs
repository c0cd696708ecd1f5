//! Simulated rotating laser scanner.
//!
//! The environment is binned into an occupancy grid that serves purely as a
//! lookup table; rays are walked cell by cell and the first occupied cell
//! returns one of its original points.

mod dataset;

pub use dataset::{load_trajectory, write_scan_dataset, ManifestEntry, ScanDataset, MANIFEST_FILE};

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{Environment, LabeledPoint};
use crate::voxel::VoxelKey;
use crate::Vec3;

pub const DEFAULT_CELL_SIZE: f64 = 0.1;
pub const DEFAULT_MAX_RANGE: f64 = 30.0;
pub const DEFAULT_SPACING: f64 = 0.2;

/// Voxel lookup table over an environment's original points.
#[derive(Clone, Debug)]
pub struct OccupancyIndex {
    cell_size: f64,
    cells: HashMap<VoxelKey, Vec<u32>>,
    points: Vec<LabeledPoint>,
    bounds: Option<(VoxelKey, VoxelKey)>,
}

impl OccupancyIndex {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn is_occupied(&self, key: VoxelKey) -> bool {
        self.cells.contains_key(&key)
    }

    /// Indices of the points stored under `key`, ascending.
    pub fn cell(&self, key: VoxelKey) -> Option<&[u32]> {
        self.cells.get(&key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    /// An index with no cells; every ray misses.
    pub fn empty(cell_size: f64) -> Self {
        OccupancyIndex {
            cell_size,
            cells: HashMap::new(),
            points: Vec::new(),
            bounds: None,
        }
    }
}

pub fn build_occupancy(env: &Environment, cell_size: f64) -> Result<OccupancyIndex> {
    if !(cell_size > 0.0) {
        return Err(Error::Argument(format!("cell size must be positive, got {cell_size}")));
    }
    if env.points.is_empty() {
        return Err(Error::Validation("no points".into()));
    }
    let mut cells: HashMap<VoxelKey, Vec<u32>> = HashMap::new();
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for (i, p) in env.points.iter().enumerate() {
        let key = VoxelKey::from_position(&p.position, cell_size);
        for a in 0..3 {
            lo[a] = lo[a].min(key.0[a]);
            hi[a] = hi[a].max(key.0[a]);
        }
        cells.entry(key).or_default().push(i as u32);
    }
    Ok(OccupancyIndex {
        cell_size,
        cells,
        points: env.points.clone(),
        bounds: Some((VoxelKey(lo), VoxelKey(hi))),
    })
}

/// First occupied cell along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub key: VoxelKey,
    /// Index of the representative point in the environment.
    pub point: u32,
    /// Distance along the ray at which the cell is entered.
    pub distance: f64,
}

/// Parametric interval `[t_in, t_out]` of the ray inside an axis-aligned box.
fn clip_to_box(origin: &Vec3, dir: &Vec3, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let t0 = (lo[a] - origin[a]) / dir[a];
        let t1 = (hi[a] - origin[a]) / dir[a];
        t_in = t_in.max(t0.min(t1));
        t_out = t_out.min(t0.max(t1));
    }
    (t_in <= t_out).then_some((t_in, t_out))
}

/// Walks the grid from `origin` along `direction` and returns the first
/// occupied cell entered within `max_range`.
///
/// The walk is the incremental grid traversal: per axis it tracks the ray
/// parameter of the next cell boundary and always crosses the nearest one.
pub fn cast_ray(
    origin: &Vec3,
    direction: &Vec3,
    index: &OccupancyIndex,
    max_range: f64,
) -> Result<Option<RayHit>> {
    let norm = direction.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Argument("ray direction must be non-zero".into()));
    }
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "ray direction must be unit length, |d| = {norm}"
        )));
    }
    if !(max_range > 0.0) {
        return Err(Error::Argument(format!("max_range must be positive, got {max_range}")));
    }
    let Some((lo, hi)) = index.bounds else {
        return Ok(None);
    };
    let cs = index.cell_size;
    let box_lo = lo.0.map(|k| f64::from(k) * cs);
    let box_hi = hi.0.map(|k| f64::from(k + 1) * cs);
    let Some((_, t_exit)) = clip_to_box(origin, direction, box_lo, box_hi) else {
        return Ok(None);
    };
    if t_exit < 0.0 {
        return Ok(None);
    }
    let limit = max_range.min(t_exit);

    let mut key = VoxelKey::from_position(origin, cs);
    if index.is_occupied(key) {
        return Ok(Some(representative(index, key, origin, direction, 0.0)));
    }

    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = direction[a];
        if d > 0.0 {
            step[a] = 1;
            t_max[a] = (f64::from(key.0[a] + 1) * cs - origin[a]) / d;
            t_delta[a] = cs / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_max[a] = (f64::from(key.0[a]) * cs - origin[a]) / d;
            t_delta[a] = -cs / d;
        }
    }

    loop {
        let mut axis = 0;
        for a in 1..3 {
            if t_max[a] < t_max[axis] {
                axis = a;
            }
        }
        let t = t_max[axis];
        if t > limit {
            return Ok(None);
        }
        key.0[axis] += step[axis];
        t_max[axis] += t_delta[axis];
        if index.is_occupied(key) {
            return Ok(Some(representative(index, key, origin, direction, t.max(0.0))));
        }
    }
}

/// The cell's point nearest to the ray line; ties go to the lowest index.
fn representative(
    index: &OccupancyIndex,
    key: VoxelKey,
    origin: &Vec3,
    direction: &Vec3,
    distance: f64,
) -> RayHit {
    let members = &index.cells[&key];
    let mut best = members[0];
    let mut best_d2 = f64::INFINITY;
    for &i in members {
        let v = index.points[i as usize].position - origin;
        let d2 = v.cross(direction).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    RayHit {
        key,
        point: best,
        distance,
    }
}

/// Sensor origin of one scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPose {
    pub position: Vec3,
}

impl ScanPose {
    pub fn new(position: Vec3) -> Self {
        ScanPose { position }
    }
}

/// Points returned by one full sweep, each source point listed once.
#[derive(Clone, Debug)]
pub struct Scan {
    pub pose: ScanPose,
    pub points: Vec<LabeledPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanParams {
    /// Horizontal angular step in degrees.
    pub h_res: f64,
    /// Vertical angular step in degrees.
    pub v_res: f64,
    pub max_range: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            h_res: 1.0,
            v_res: 1.0,
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

fn divisions(total: f64, step: f64, what: &str) -> Result<usize> {
    if !(step > 0.0) {
        return Err(Error::Argument(format!("{what} resolution must be positive")));
    }
    let n = (total / step).round();
    if (n * step - total).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "{total} degrees is not divisible by the {what} resolution {step}"
        )));
    }
    Ok(n as usize)
}

/// Ray directions of one sweep: azimuth in `[0, 360)` outer, elevation in
/// `[-90, 90]` inner, both poles included.
pub fn sweep_directions(params: &ScanParams) -> Result<Vec<Vec3>> {
    let n_az = divisions(360.0, params.h_res, "horizontal")?;
    let n_el = divisions(180.0, params.v_res, "vertical")? + 1;
    let mut dirs = Vec::with_capacity(n_az * n_el);
    for i in 0..n_az {
        let az = (i as f64 * params.h_res).to_radians();
        for j in 0..n_el {
            let el = (-90.0 + j as f64 * params.v_res).to_radians();
            dirs.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
        }
    }
    Ok(dirs)
}

pub fn simulate_scan(pose: ScanPose, index: &OccupancyIndex, params: &ScanParams) -> Result<Scan> {
    let dirs = sweep_directions(params)?;
    if !pose.position.iter().all(|v| v.is_finite()) {
        return Err(Error::Argument("scan pose must be finite".into()));
    }
    let hits = dirs
        .par_iter()
        .map(|d| cast_ray(&pose.position, d, index, params.max_range))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = HashSet::new();
    let points = hits
        .into_iter()
        .flatten()
        .filter(|h| seen.insert(h.point))
        .map(|h| index.points[h.point as usize].clone())
        .collect();
    Ok(Scan { pose, points })
}

/// Samples a polyline every `spacing` meters of arc length, starting at the
/// first waypoint.
pub fn resample_polyline(waypoints: &[Vec3], spacing: f64) -> Result<Vec<Vec3>> {
    if waypoints.is_empty() {
        return Err(Error::Argument("trajectory needs at least one waypoint".into()));
    }
    if !(spacing > 0.0) {
        return Err(Error::Argument(format!("spacing must be positive, got {spacing}")));
    }
    let lengths: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::new();
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut k = 0usize;
    loop {
        let s = k as f64 * spacing;
        if s > total + 1e-9 {
            break;
        }
        while seg < lengths.len() && seg_start + lengths[seg] < s {
            seg_start += lengths[seg];
            seg += 1;
        }
        let p = if seg >= lengths.len() {
            *waypoints.last().unwrap()
        } else if lengths[seg] == 0.0 {
            waypoints[seg]
        } else {
            let f = ((s - seg_start) / lengths[seg]).clamp(0.0, 1.0);
            waypoints[seg] + (waypoints[seg + 1] - waypoints[seg]) * f
        };
        out.push(p);
        k += 1;
    }
    Ok(out)
}

pub fn simulate_trajectory(
    waypoints: &[Vec3],
    spacing: f64,
    index: &OccupancyIndex,
    params: &ScanParams,
) -> Result<Vec<Scan>> {
    resample_polyline(waypoints, spacing)?
        .into_iter()
        .map(|p| simulate_scan(ScanPose::new(p), index, params))
        .collect()
}
