//! Incremental instance clustering over the global map, and the normal/color
//! region-growing baseline.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::globalmap::{GlobalMap, PointId};
use crate::voxel::VoxelKey;
use crate::Vec3;

pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_ANGLE_DEG: f64 = 15.0;
pub const DEFAULT_COLOR_THRESH: f64 = 0.25;

const UNLABELED: u32 = u32::MAX;

/// Union-find forest over global point ids. Each root carries the instance
/// ID shared by its members.
#[derive(Clone, Debug, Default)]
pub struct ClusterSet {
    parent: Vec<u32>,
    instance_of_root: HashMap<PointId, u64>,
    next_instance: u64,
    labeled: usize,
}

impl ClusterSet {
    pub fn new() -> Self {
        ClusterSet {
            next_instance: 1,
            ..Default::default()
        }
    }

    pub fn is_labeled(&self, id: PointId) -> bool {
        self.parent.get(id as usize).is_some_and(|&p| p != UNLABELED)
    }

    /// Number of labeled points.
    pub fn len(&self) -> usize {
        self.labeled
    }

    pub fn is_empty(&self) -> bool {
        self.labeled == 0
    }

    pub fn num_clusters(&self) -> usize {
        self.instance_of_root.len()
    }

    /// Root without path compression.
    pub fn root(&self, id: PointId) -> Option<PointId> {
        if !self.is_labeled(id) {
            return None;
        }
        let mut r = id;
        while self.parent[r as usize] != r {
            r = self.parent[r as usize];
        }
        Some(r)
    }

    fn find(&mut self, id: PointId) -> PointId {
        let mut r = id;
        while self.parent[r as usize] != r {
            let grand = self.parent[self.parent[r as usize] as usize];
            self.parent[r as usize] = grand;
            r = grand;
        }
        r
    }

    pub fn instance_of(&self, id: PointId) -> Option<u64> {
        self.root(id).map(|r| self.instance_of_root[&r])
    }

    fn attach(&mut self, id: PointId, parent: PointId) {
        let i = id as usize;
        if self.parent.len() <= i {
            self.parent.resize(i + 1, UNLABELED);
        }
        debug_assert_eq!(self.parent[i], UNLABELED);
        self.parent[i] = parent;
        self.labeled += 1;
    }

    /// Starts a new cluster seeded by `id` and returns its instance ID.
    pub fn add_seed(&mut self, id: PointId) -> Result<u64> {
        if self.is_labeled(id) {
            return Err(Error::Internal(format!("point {id} is already clustered")));
        }
        self.attach(id, id);
        let instance = self.next_instance;
        self.next_instance += 1;
        self.instance_of_root.insert(id, instance);
        Ok(instance)
    }

    /// Adds `id` to the cluster containing `member`.
    pub fn join(&mut self, id: PointId, member: PointId) -> Result<u64> {
        if self.is_labeled(id) {
            return Err(Error::Internal(format!("point {id} is already clustered")));
        }
        if !self.is_labeled(member) {
            return Err(Error::Internal(format!("point {member} is not clustered")));
        }
        let root = self.find(member);
        self.attach(id, root);
        Ok(self.instance_of_root[&root])
    }

    /// Merges the clusters of `a` and `b`; the survivor keeps the smaller
    /// instance ID. Returns whether two distinct clusters were joined.
    pub fn union(&mut self, a: PointId, b: PointId) -> Result<bool> {
        for id in [a, b] {
            if !self.is_labeled(id) {
                return Err(Error::Internal(format!("point {id} is not clustered")));
            }
        }
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return Ok(false);
        }
        let (ia, ib) = (self.instance_of_root[&ra], self.instance_of_root[&rb]);
        let (keep, drop) = if ia < ib { (ra, rb) } else { (rb, ra) };
        self.parent[drop as usize] = keep;
        self.instance_of_root.remove(&drop);
        Ok(true)
    }

    /// `(id, instance)` for every labeled point, ascending id.
    pub fn labels(&self) -> Vec<(PointId, u64)> {
        (0..self.parent.len() as PointId)
            .filter_map(|id| self.instance_of(id).map(|inst| (id, inst)))
            .collect()
    }

    /// Copies every label into the map's `instance_id` column.
    pub fn sync_map(&self, map: &mut GlobalMap) -> Result<()> {
        for (id, inst) in self.labels() {
            map.set_instance(id, inst)?;
        }
        Ok(())
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Validation("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// Final `(id, instance)` of each new point, ascending id.
    pub labels: Vec<(PointId, u64)>,
    /// Cluster pairs merged while placing the points.
    pub merges: usize,
}

/// Places newly inserted map points into clusters.
///
/// Points are handled in id order. A point connects to each map neighbor
/// that is already clustered (including earlier points of this call) when
/// their cosine similarity exceeds `beta`. No connection seeds a new
/// cluster, one joins it, several are merged first.
pub fn assign_new_points(
    clusters: &mut ClusterSet,
    new_points: &[(PointId, Vec<f64>)],
    map: &GlobalMap,
    beta: f64,
) -> Result<Assignment> {
    let mut order: Vec<usize> = (0..new_points.len()).collect();
    order.sort_by_key(|&i| new_points[i].0);
    let fresh: HashMap<PointId, &[f64]> =
        new_points.iter().map(|(id, e)| (*id, e.as_slice())).collect();

    let mut merges = 0;
    for &i in &order {
        let (id, emb) = (&new_points[i].0, &new_points[i].1);
        let mut connected: Vec<PointId> = Vec::new();
        for nb in map.neighbors(*id)? {
            if !clusters.is_labeled(nb) {
                continue;
            }
            let other: &[f64] = match fresh.get(&nb) {
                Some(e) => e,
                None => map
                    .get(nb)
                    .and_then(|p| p.last_embedding.as_deref())
                    .ok_or_else(|| Error::Internal(format!("clustered point {nb} has no embedding")))?,
            };
            if cosine_similarity(emb, other)? > beta {
                connected.push(nb);
            }
        }
        match connected.split_first() {
            None => {
                clusters.add_seed(*id)?;
            }
            Some((&first, rest)) => {
                for &other in rest {
                    if clusters.union(first, other)? {
                        merges += 1;
                    }
                }
                clusters.join(*id, first)?;
            }
        }
    }
    let labels = order
        .iter()
        .map(|&i| {
            let id = new_points[i].0;
            (id, clusters.instance_of(id).expect("just labeled"))
        })
        .collect();
    Ok(Assignment { labels, merges })
}

fn cell_index(positions: &[Vec3], cell_size: f64) -> HashMap<VoxelKey, Vec<usize>> {
    let mut cells: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        cells.entry(VoxelKey::from_position(p, cell_size)).or_default().push(i);
    }
    cells
}

fn adjacent<'a>(
    cells: &'a HashMap<VoxelKey, Vec<usize>>,
    key: VoxelKey,
    me: usize,
) -> impl Iterator<Item = usize> + 'a {
    key.block(1)
        .filter_map(move |k| cells.get(&k))
        .flatten()
        .copied()
        .filter(move |&j| j != me)
}

/// Plane normals from PCA over the points within one cell. Fewer than three
/// neighbors give `+z`. Each normal is signed so its largest component is
/// positive.
pub fn estimate_normals(positions: &[Vec3], cell_size: f64) -> Vec<Vec3> {
    let cells = cell_index(positions, cell_size);
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let key = VoxelKey::from_position(p, cell_size);
            let nbrs: Vec<usize> = adjacent(&cells, key, i).collect();
            if nbrs.len() < 3 {
                return Vec3::z();
            }
            let pts: Vec<&Vec3> = std::iter::once(i).chain(nbrs).map(|j| &positions[j]).collect();
            let mean = pts.iter().fold(Vec3::zeros(), |acc, q| acc + *q) / pts.len() as f64;
            let cov = pts
                .iter()
                .fold(Matrix3::zeros(), |acc, q| acc + (*q - mean) * (*q - mean).transpose());
            let eig = SymmetricEigen::new(cov);
            let (k, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (k, &v)| if v < best.1 { (k, v) } else { best });
            let mut n: Vec3 = eig.eigenvectors.column(k).into_owned().normalize();
            let big = n.iamax();
            if n[big] < 0.0 {
                n = -n;
            }
            n
        })
        .collect()
}

/// Connected components over one-cell adjacency, linking two points when
/// their normals differ by at most `angle_deg` (sign ignored) and their RGB
/// distance is at most `color_thresh`. Labels start at 1 in order of each
/// component's lowest index.
pub fn region_grow_baseline(
    points: &[(Vec3, Vec3, [f64; 3])],
    cell_size: f64,
    angle_deg: f64,
    color_thresh: f64,
) -> Vec<u64> {
    let positions: Vec<Vec3> = points.iter().map(|p| p.0).collect();
    let cells = cell_index(&positions, cell_size);
    let cos_min = angle_deg.to_radians().cos();
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, (pos, n, c)) in points.iter().enumerate() {
        let key = VoxelKey::from_position(pos, cell_size);
        for j in adjacent(&cells, key, i) {
            if j < i {
                continue;
            }
            let (_, nj, cj) = &points[j];
            let similar_normal = n.dot(nj).abs().min(1.0) >= cos_min;
            let dc = ((c[0] - cj[0]).powi(2) + (c[1] - cj[1]).powi(2) + (c[2] - cj[2]).powi(2)).sqrt();
            if similar_normal && dc <= color_thresh {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut labels = vec![0u64; points.len()];
    let mut next = 1;
    let mut seen: HashMap<usize, u64> = HashMap::new();
    for (i, label) in labels.iter_mut().enumerate() {
        let r = find(&mut parent, i);
        *label = *seen.entry(r).or_insert_with(|| {
            next += 1;
            next - 1
        });
    }
    labels
}
