//! Integer voxel keys shared by the occupancy index and the global map.

use crate::Vec3;

/// Integer cell coordinate `floor(position / cell_size)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey(pub [i32; 3]);

impl VoxelKey {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        VoxelKey([x, y, z])
    }

    pub fn from_position(position: &Vec3, cell_size: f64) -> Self {
        VoxelKey([
            (position.x / cell_size).floor() as i32,
            (position.y / cell_size).floor() as i32,
            (position.z / cell_size).floor() as i32,
        ])
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        let [x, y, z] = self.0;
        VoxelKey([x + dx, y + dy, z + dz])
    }

    pub fn chebyshev(self, other: VoxelKey) -> i32 {
        (0..3)
            .map(|a| (self.0[a] - other.0[a]).abs())
            .max()
            .unwrap_or(0)
    }

    /// Keys of the `(2r+1)^3` block centred on `self`, in lexicographic
    /// offset order. The centre key is included.
    pub fn block(self, radius: i32) -> impl Iterator<Item = VoxelKey> {
        (-radius..=radius).flat_map(move |dx| {
            (-radius..=radius)
                .flat_map(move |dy| (-radius..=radius).map(move |dz| self.offset(dx, dy, dz)))
        })
    }
}
