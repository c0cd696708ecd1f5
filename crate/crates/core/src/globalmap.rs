//! Global voxel lookup table holding at most one point per cell together
//! with that point's latest segmentation state.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::{channel_to_byte, LabeledPoint};
use crate::voxel::VoxelKey;
use crate::Vec3;

pub type PointId = u32;

/// Chebyshev radius (in cells) of the neighbor query.
pub const NEIGHBOR_RADIUS: i32 = 1;
/// Chebyshev radius (in cells) of the context query.
pub const CONTEXT_RADIUS: i32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalPoint {
    pub id: PointId,
    pub key: VoxelKey,
    pub position: Vec3,
    pub color: [f64; 3],
    pub gt_class: usize,
    pub gt_instance: u64,
    pub pred_class: Option<usize>,
    /// Instance label as last written by the clustering step.
    pub instance_id: Option<u64>,
    pub last_embedding: Option<Vec<f64>>,
}

/// Result of inserting one scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InsertOutcome {
    /// Ids created by this call, ascending.
    pub inserted: Vec<PointId>,
    /// Ids of already-stored points whose cell the scan hit again.
    pub reobserved: Vec<PointId>,
    /// For every input point, the id that owns its cell after insertion.
    pub owner: Vec<PointId>,
}

#[derive(Clone, Debug)]
pub struct GlobalMap {
    cell_size: f64,
    table: HashMap<VoxelKey, PointId>,
    points: Vec<GlobalPoint>,
}

impl GlobalMap {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        GlobalMap {
            cell_size,
            table: HashMap::new(),
            points: Vec::new(),
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, id: PointId) -> Option<&GlobalPoint> {
        self.points.get(id as usize)
    }

    /// All stored points in id order.
    pub fn points(&self) -> &[GlobalPoint] {
        &self.points
    }

    pub fn id_at(&self, key: VoxelKey) -> Option<PointId> {
        self.table.get(&key).copied()
    }

    pub fn key_of(&self, position: &Vec3) -> VoxelKey {
        VoxelKey::from_position(position, self.cell_size)
    }

    /// Adds scan points that fall in unclaimed cells. The first point to
    /// reach a cell keeps it; later points of that cell are dropped.
    pub fn insert_scan(&mut self, scan_points: &[LabeledPoint]) -> InsertOutcome {
        let mut out = InsertOutcome::default();
        let mut reobserved = HashSet::new();
        for p in scan_points {
            let key = self.key_of(&p.position);
            if let Some(&id) = self.table.get(&key) {
                if out.inserted.binary_search(&id).is_err() && reobserved.insert(id) {
                    out.reobserved.push(id);
                }
                out.owner.push(id);
                continue;
            }
            let id = self.points.len() as PointId;
            self.table.insert(key, id);
            self.points.push(GlobalPoint {
                id,
                key,
                position: p.position,
                color: p.color,
                gt_class: p.gt_class,
                gt_instance: p.gt_instance,
                pred_class: None,
                instance_id: None,
                last_embedding: None,
            });
            out.inserted.push(id);
            out.owner.push(id);
        }
        out
    }

    fn block(&self, id: PointId, radius: i32) -> impl Iterator<Item = PointId> + '_ {
        let center = self.points[id as usize].key;
        center
            .block(radius)
            .filter_map(|k| self.table.get(&k).copied())
            .filter(move |&other| other != id)
    }

    /// Stored points within one cell (Chebyshev) of `id`, excluding `id`.
    pub fn neighbors(&self, id: PointId) -> Result<Vec<PointId>> {
        self.check(id)?;
        Ok(self.block(id, NEIGHBOR_RADIUS).collect())
    }

    /// Stored points within three cells of `id` that are not part of the
    /// current scan.
    pub fn context(&self, id: PointId, exclude_scan: &HashSet<PointId>) -> Result<Vec<PointId>> {
        self.check(id)?;
        Ok(self
            .block(id, CONTEXT_RADIUS)
            .filter(|other| !exclude_scan.contains(other))
            .collect())
    }

    /// Overwrites predicted class and embedding of each listed point.
    pub fn update_labels(
        &mut self,
        ids: &[PointId],
        pred_classes: &[usize],
        embeddings: &[Vec<f64>],
    ) -> Result<()> {
        if ids.len() != pred_classes.len() || ids.len() != embeddings.len() {
            return Err(Error::Shape(format!(
                "update_labels: {} ids, {} classes, {} embeddings",
                ids.len(),
                pred_classes.len(),
                embeddings.len()
            )));
        }
        for &id in ids {
            self.check(id)?;
        }
        for ((&id, &class), emb) in ids.iter().zip(pred_classes).zip(embeddings) {
            let p = &mut self.points[id as usize];
            p.pred_class = Some(class);
            p.last_embedding = Some(emb.clone());
        }
        Ok(())
    }

    pub fn set_instance(&mut self, id: PointId, instance: u64) -> Result<()> {
        self.check(id)?;
        self.points[id as usize].instance_id = Some(instance);
        Ok(())
    }

    fn check(&self, id: PointId) -> Result<()> {
        if (id as usize) < self.points.len() {
            Ok(())
        } else {
            Err(Error::UnknownPoint(id))
        }
    }

    /// Writes the 10-column snapshot
    /// `x y z r g b gt_class gt_instance pred_class instance_id`, with -1
    /// for unset predictions.
    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.points.len() * 56);
        for p in &self.points {
            let [r, g, b] = p.color.map(channel_to_byte);
            let pred = p.pred_class.map_or(-1, |c| c as i64);
            let inst = p.instance_id.map_or(-1, |i| i as i64);
            let _ = writeln!(
                out,
                "{} {} {} {r} {g} {b} {} {} {pred} {inst}",
                p.position.x, p.position.y, p.position.z, p.gt_class, p.gt_instance
            );
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One row of a map snapshot file.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub position: Vec3,
    pub color: [u8; 3],
    pub gt_class: usize,
    pub gt_instance: u64,
    pub pred_class: Option<usize>,
    pub instance_id: Option<u64>,
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Vec<SnapshotRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 10 {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected 10 snapshot columns, found {}", f.len()),
            ));
        }
        let bad = |i: usize| Error::parse(path, idx + 1, format!("bad field '{}'", f[i]));
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(i));
        let byte = |i: usize| f[i].parse::<u8>().map_err(|_| bad(i));
        let signed = |i: usize| f[i].parse::<i64>().map_err(|_| bad(i));
        let opt = |i: usize| signed(i).map(|v| (v >= 0).then_some(v as u64));
        rows.push(SnapshotRow {
            position: Vec3::new(num(0)?, num(1)?, num(2)?),
            color: [byte(3)?, byte(4)?, byte(5)?],
            gt_class: f[6].parse().map_err(|_| bad(6))?,
            gt_instance: f[7].parse().map_err(|_| bad(7))?,
            pred_class: opt(8)?.map(|c| c as usize),
            instance_id: opt(9)?,
        });
    }
    Ok(rows)
}
