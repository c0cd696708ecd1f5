//! Procedural labeled indoor scenes for tests and demos.
//!
//! Every surface is one voxel thick and holds exactly one jittered point per
//! 0.1 m cell, so walls, floors and ceilings are watertight for ray casting.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::pointcloud::{Environment, LabeledPoint};
use crate::Vec3;

pub const CEILING: usize = 0;
pub const FLOOR: usize = 1;
pub const WALL: usize = 2;
pub const DOOR: usize = 6;
pub const TABLE: usize = 7;
pub const CLUTTER: usize = 12;

const CELL: f64 = 0.1;
/// Shared by tables and clutter so color alone cannot separate them.
const WOOD: [f64; 3] = [0.55, 0.36, 0.2];

type Cell = [i32; 3];

struct Builder {
    rng: ChaCha8Rng,
    taken: HashSet<Cell>,
    points: Vec<LabeledPoint>,
    next_instance: u64,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            taken: HashSet::new(),
            points: Vec::new(),
            next_instance: 1,
        }
    }

    /// Adds one point per free cell; returns the instance ID used.
    fn add(&mut self, cells: impl IntoIterator<Item = Cell>, class: usize, color: [f64; 3]) -> u64 {
        let instance = self.next_instance;
        self.next_instance += 1;
        for c in cells {
            if !self.taken.insert(c) {
                continue;
            }
            let mut j = || self.rng.gen_range(0.2..0.8);
            let pos = Vec3::new(
                (f64::from(c[0]) + j()) * CELL,
                (f64::from(c[1]) + j()) * CELL,
                (f64::from(c[2]) + j()) * CELL,
            );
            let shade = self.rng.gen_range(-0.03..0.03);
            let color = color.map(|v: f64| (v + shade).clamp(0.0, 1.0));
            self.points.push(LabeledPoint::new(pos, color, class, instance));
        }
        instance
    }

    fn finish(self) -> Result<Environment> {
        Environment::new(self.points, Some(0.0))
    }
}

/// Inclusive cell box.
fn slab(lo: Cell, hi: Cell) -> impl Iterator<Item = Cell> {
    (lo[0]..=hi[0]).flat_map(move |x| {
        (lo[1]..=hi[1]).flat_map(move |y| (lo[2]..=hi[2]).map(move |z| [x, y, z]))
    })
}

/// Surface cells of a solid box without its bottom face.
fn box_shell(lo: Cell, hi: Cell) -> impl Iterator<Item = Cell> {
    slab(lo, hi).filter(move |c| {
        c[0] == lo[0] || c[0] == hi[0] || c[1] == lo[1] || c[1] == hi[1] || c[2] == hi[2]
    })
}

fn table(b: &mut Builder, x0: i32, y0: i32, w: i32, d: i32, top: i32) {
    let mut cells: Vec<Cell> = slab([x0, y0, top], [x0 + w - 1, y0 + d - 1, top]).collect();
    for (lx, ly) in [(x0, y0), (x0 + w - 1, y0), (x0, y0 + d - 1), (x0 + w - 1, y0 + d - 1)] {
        cells.extend(slab([lx, ly, 1], [lx, ly, top - 1]));
    }
    b.add(cells, TABLE, WOOD);
}

/// Floor, ceiling and walls around the interior `[x0,x0+nx) × [0,ny)`,
/// height `nz` cells. The two end walls (constant x) are optional. Each
/// surface gets its own instance.
#[allow(clippy::too_many_arguments)]
fn shell(b: &mut Builder, x0: i32, nx: i32, ny: i32, nz: i32, tint: f64, low_end: bool, high_end: bool) {
    let floor = [0.45 + tint, 0.45, 0.47];
    let ceiling = [0.92, 0.92, 0.9 - tint];
    let wall = [0.78, 0.74 + tint, 0.66];
    b.add(slab([x0, 0, 0], [x0 + nx - 1, ny - 1, 0]), FLOOR, floor);
    b.add(slab([x0 - 1, -1, nz], [x0 + nx, ny, nz]), CEILING, ceiling);
    b.add(slab([x0, -1, 0], [x0 + nx - 1, -1, nz - 1]), WALL, wall);
    b.add(slab([x0, ny, 0], [x0 + nx - 1, ny, nz - 1]), WALL, wall);
    if low_end {
        b.add(slab([x0 - 1, -1, 0], [x0 - 1, ny, nz - 1]), WALL, wall);
    }
    if high_end {
        b.add(slab([x0 + nx, -1, 0], [x0 + nx, ny, nz - 1]), WALL, wall);
    }
}

/// A labeled environment with waypoint paths through it.
pub struct Scene {
    pub env: Environment,
    pub train_path: Vec<Vec3>,
    pub test_path: Vec<Vec3>,
}

/// Two 5 m × 4 m rooms, 3 m high, joined by an open door, with tables and
/// wooden clutter boxes. About 20k points.
pub fn two_room_scene(seed: u64) -> Result<Scene> {
    let mut b = Builder::new(seed);
    let (ny, nz) = (40, 30);
    // the dividing wall at x = 5 m, with a 1 m × 2 m opening
    let door_y = 18..=27;
    let opening = |c: &Cell| door_y.contains(&c[1]) && (1..=20).contains(&c[2]);
    // open door panel swung into the second room, clear of the opening
    b.add(slab([51, 28, 1], [60, 28, 20]), DOOR, [0.2, 0.3, 0.6]);
    b.add(
        slab([50, -1, 0], [50, ny, nz - 1]).filter(|c| !opening(c)).collect::<Vec<_>>(),
        WALL,
        [0.78, 0.74, 0.66],
    );
    shell(&mut b, 0, 50, ny, nz, 0.0, true, false);
    shell(&mut b, 51, 49, ny, nz, 0.05, false, true);

    table(&mut b, 8, 4, 16, 9, 7);
    table(&mut b, 30, 26, 12, 8, 7);
    table(&mut b, 72, 6, 16, 10, 7);
    for (x, y, w, h) in [(3, 30, 4, 8), (40, 3, 5, 6), (60, 12, 4, 9), (85, 28, 5, 7), (20, 33, 3, 5), (66, 33, 4, 8)] {
        b.add(box_shell([x, y, 1], [x + w - 1, y + w - 1, h]).collect::<Vec<_>>(), CLUTTER, WOOD);
    }
    // small objects on the tables
    b.add(box_shell([12, 6, 8], [14, 8, 10]).collect::<Vec<_>>(), CLUTTER, WOOD);
    b.add(box_shell([78, 10, 8], [80, 12, 9]).collect::<Vec<_>>(), CLUTTER, WOOD);

    let z = 1.3;
    Ok(Scene {
        env: b.finish()?,
        train_path: vec![Vec3::new(1.5, 2.25, z), Vec3::new(8.5, 2.25, z)],
        test_path: vec![
            Vec3::new(3.0, 1.0, 1.0),
            Vec3::new(4.6, 2.25, 1.0),
            Vec3::new(6.0, 2.25, 1.0),
            Vec3::new(7.0, 3.2, 1.0),
        ],
    })
}

/// A straight corridor `length` meters long, 2 m wide and 2.5 m high with
/// boxes along one wall; the path runs down its middle.
pub fn corridor_scene(seed: u64, length: f64) -> Result<Scene> {
    let mut b = Builder::new(seed);
    let nx = (length / CELL).round() as i32;
    shell(&mut b, 0, nx, 20, 25, 0.0, true, true);
    let mut x = 10;
    while x + 4 < nx {
        b.add(box_shell([x, 1, 1], [x + 2, 3, 5]).collect::<Vec<_>>(), CLUTTER, WOOD);
        x += 25;
    }
    let path = vec![Vec3::new(0.5, 1.0, 1.2), Vec3::new(length - 0.5, 1.0, 1.2)];
    Ok(Scene {
        env: b.finish()?,
        train_path: path.clone(),
        test_path: path,
    })
}

/// A closed 1 m cube room with one box inside.
pub fn tiny_box(seed: u64) -> Result<Environment> {
    let mut b = Builder::new(seed);
    shell(&mut b, 0, 10, 10, 10, 0.0, true, true);
    b.add(box_shell([2, 2, 1], [3, 3, 2]).collect::<Vec<_>>(), CLUTTER, WOOD);
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::VoxelKey;

    #[test]
    fn one_point_per_cell() {
        let scene = two_room_scene(0).unwrap();
        let n = scene.env.points.len();
        assert!((15_000..25_000).contains(&n), "{n} points");
        let keys: HashSet<VoxelKey> = scene
            .env
            .points
            .iter()
            .map(|p| VoxelKey::from_position(&p.position, 0.1))
            .collect();
        assert_eq!(keys.len(), n);
        let classes: HashSet<usize> = scene.env.points.iter().map(|p| p.gt_class).collect();
        assert_eq!(classes, HashSet::from([CEILING, FLOOR, WALL, DOOR, TABLE, CLUTTER]));
    }

    #[test]
    fn seeded() {
        let a = tiny_box(4).unwrap();
        let b = tiny_box(4).unwrap();
        assert_eq!(a.points, b.points);
        assert_ne!(a.points, tiny_box(5).unwrap().points);
    }
}
