//! Labeled point types, environment files, colored PLY export and PCA
//! coloring of embeddings.

mod io;
mod pca;

pub use io::{
    export_colored, load_environment, parse_environment, read_ply, write_environment, ColorSource,
};
pub use pca::pca_to_rgb;
pub(crate) use io::{format_point_line, parse_point_line};

use crate::error::{Error, Result};
use crate::Vec3;

pub const NUM_CLASSES: usize = 13;

/// A point of a labeled environment or scan. Colors are stored in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub position: Vec3,
    pub color: [f64; 3],
    pub gt_class: usize,
    pub gt_instance: u64,
}

impl LabeledPoint {
    pub fn new(position: Vec3, color: [f64; 3], gt_class: usize, gt_instance: u64) -> Self {
        LabeledPoint {
            position,
            color,
            gt_class,
            gt_instance,
        }
    }
}

/// Maps a `[0, 1]` channel to a byte with `floor(c * 255 + 0.5)`.
pub fn channel_to_byte(c: f64) -> u8 {
    (c * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn byte_to_channel(b: u8) -> f64 {
    f64::from(b) / 255.0
}

/// Names and display colors for the 13 semantic classes.
#[derive(Clone, Debug)]
pub struct ClassLegend {
    names: Vec<String>,
    colors: Vec<[u8; 3]>,
}

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "ceiling", "floor", "wall", "beam", "column", "window", "door", "table", "chair", "sofa",
    "bookcase", "board", "clutter",
];

const DEFAULT_COLORS: [[u8; 3]; NUM_CLASSES] = [
    [0, 255, 0],     // ceiling
    [0, 0, 255],     // floor
    [0, 255, 255],   // wall
    [255, 255, 0],   // beam
    [255, 0, 255],   // column
    [100, 100, 255], // window
    [200, 200, 100], // door
    [170, 120, 200], // table
    [255, 0, 0],     // chair
    [200, 100, 100], // sofa
    [10, 200, 100],  // bookcase
    [200, 200, 200], // board
    [50, 50, 50],    // clutter
];

impl Default for ClassLegend {
    fn default() -> Self {
        ClassLegend {
            names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            colors: DEFAULT_COLORS.to_vec(),
        }
    }
}

impl ClassLegend {
    pub fn new(names: Vec<String>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if names.len() != NUM_CLASSES || colors.len() != NUM_CLASSES {
            return Err(Error::Validation(format!(
                "legend needs exactly {NUM_CLASSES} entries, got {} names and {} colors",
                names.len(),
                colors.len()
            )));
        }
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if colors[i] == colors[j] {
                    return Err(Error::Validation(format!(
                        "legend colors for '{}' and '{}' coincide",
                        names[i], names[j]
                    )));
                }
            }
        }
        Ok(ClassLegend { names, colors })
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.colors.get(class).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }
}

/// Deterministic pseudo-random color for an instance id.
pub fn instance_color(instance: u64) -> [u8; 3] {
    // splitmix64 finalizer
    let mut z = instance.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    [(z & 0xff) as u8, ((z >> 8) & 0xff) as u8, ((z >> 16) & 0xff) as u8]
}

/// A labeled environment: the full point cloud a virtual robot scans.
#[derive(Clone, Debug)]
pub struct Environment {
    pub points: Vec<LabeledPoint>,
    pub floor_z: f64,
}

impl Environment {
    /// Builds an environment, defaulting `floor_z` to the minimum z.
    pub fn new(points: Vec<LabeledPoint>, floor_z: Option<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("no points".into()));
        }
        if let Some(p) = points.iter().find(|p| p.gt_class >= NUM_CLASSES) {
            return Err(Error::Validation(format!(
                "class id {} out of range [0,{}]",
                p.gt_class,
                NUM_CLASSES - 1
            )));
        }
        let min_z = points
            .iter()
            .map(|p| p.position.z)
            .fold(f64::INFINITY, f64::min);
        let floor_z = floor_z.unwrap_or(min_z);
        if floor_z > min_z + 0.01 {
            return Err(Error::Validation(format!(
                "floor_z {floor_z} lies above the lowest point (z = {min_z})"
            )));
        }
        Ok(Environment { points, floor_z })
    }
}
