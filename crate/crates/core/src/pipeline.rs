//! The online per-scan loop: radius filter, normalization, batching,
//! context assembly, inference, map update and incremental clustering.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::{assign_new_points, ClusterSet, DEFAULT_BETA};
use crate::error::{Error, Result};
use crate::globalmap::{GlobalMap, GlobalPoint, PointId};
use crate::metrics::{EvalPair, MetricsReport};
use crate::network::{
    context_features, forward_pooled, pool_context, Batch, ContextBuilder, ContextTensor,
    NetworkParams, INPUT_DIM,
};
use crate::pointcloud::LabeledPoint;
use crate::raytrace::{Scan, ScanDataset, ScanPose, DEFAULT_CELL_SIZE};
use crate::rng::derive_seed;

pub const DEFAULT_RADIUS: f64 = 2.0;

const STREAM_BATCH: u64 = 0xBA7C;
const STREAM_CONTEXT: u64 = 0xC0E7;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub radius: f64,
    /// Measure the radius in the x-y plane; otherwise in 3D.
    pub horizontal: bool,
    pub batch_n: usize,
    pub context_m: usize,
    pub beta: f64,
    pub use_mcp: bool,
    pub seed: u64,
    pub cell_size: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            radius: DEFAULT_RADIUS,
            horizontal: true,
            batch_n: 256,
            context_m: 50,
            beta: DEFAULT_BETA,
            use_mcp: true,
            seed: 0,
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Validation("radius must be positive".into()));
        }
        if self.batch_n < 2 {
            return Err(Error::Validation("batch size must be at least 2".into()));
        }
        if self.context_m < 1 {
            return Err(Error::Validation("context count must be at least 1".into()));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::Validation("cell size must be positive".into()));
        }
        Ok(())
    }
}

/// Network input row of a point seen from `pose`.
pub fn normalize(point: &GlobalPoint, pose: &ScanPose, floor_z: f64) -> [f64; INPUT_DIM] {
    [
        point.position.x - pose.position.x,
        point.position.y - pose.position.y,
        point.position.z - floor_z,
        point.color[0],
        point.color[1],
        point.color[2],
    ]
}

/// Scan points inside the radius, with their normalized rows.
#[derive(Clone, Debug, Default)]
pub struct Preprocessed {
    pub points: Vec<LabeledPoint>,
    /// Index of each kept point in the original scan.
    pub kept: Vec<usize>,
    pub inputs: Vec<[f64; INPUT_DIM]>,
}

pub fn preprocess_scan(scan: &Scan, floor_z: f64, config: &PipelineConfig) -> Preprocessed {
    let origin = scan.pose.position;
    let mut out = Preprocessed::default();
    for (i, p) in scan.points.iter().enumerate() {
        let d = p.position - origin;
        let dist = if config.horizontal {
            d.x.hypot(d.y)
        } else {
            d.norm()
        };
        if dist > config.radius {
            continue;
        }
        out.kept.push(i);
        out.inputs.push([
            d.x,
            d.y,
            p.position.z - floor_z,
            p.color[0],
            p.color[1],
            p.color[2],
        ]);
        out.points.push(p.clone());
    }
    out
}

/// Rows of one batch, as indices into the scan's point list. The first
/// `real` rows are distinct scan points; the rest are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub rows: Vec<usize>,
    pub real: usize,
}

/// Shuffles `k` points into batches of exactly `batch_n` rows; the last
/// batch is topped up by sampling the scan's points with replacement.
pub fn make_batches(k: usize, batch_n: usize, rng: &mut impl Rng) -> Vec<BatchPlan> {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    order
        .chunks(batch_n)
        .map(|chunk| {
            let mut rows = chunk.to_vec();
            while rows.len() < batch_n {
                rows.push(rng.gen_range(0..k));
            }
            BatchPlan {
                rows,
                real: chunk.len(),
            }
        })
        .collect()
}

/// Samples `m` context rows per point from map points of earlier scans
/// within the context radius, normalized in the current scan's frame. A
/// point without candidates uses itself for every row.
pub fn assemble_context(
    ids: &[PointId],
    map: &GlobalMap,
    scan_ids: &HashSet<PointId>,
    pose: &ScanPose,
    floor_z: f64,
    m: usize,
    rng: &mut impl Rng,
) -> Result<ContextTensor> {
    let mut builder = ContextBuilder::new(m);
    for &id in ids {
        let own = map.get(id).ok_or(Error::UnknownPoint(id))?;
        let candidates = map.context(id, scan_ids)?;
        if candidates.is_empty() {
            let row = normalize(own, pose, floor_z);
            builder.push_point(std::iter::repeat(row).take(m));
        } else {
            let rows: Vec<[f64; INPUT_DIM]> = (0..m)
                .map(|_| {
                    let pick = candidates[rng.gen_range(0..candidates.len())];
                    normalize(&map.points()[pick as usize], pose, floor_z)
                })
                .collect();
            builder.push_point(rows);
        }
    }
    Ok(builder.finish())
}

/// Network inputs and context for the distinct map points one scan hits.
struct ScanRows {
    ids: Vec<PointId>,
    inputs: Array2<f64>,
    context: Option<ContextTensor>,
    batches: Vec<BatchPlan>,
    inserted: Vec<PointId>,
}

fn stage_scan(
    scan: &Scan,
    scan_index: usize,
    floor_z: f64,
    map: &mut GlobalMap,
    config: &PipelineConfig,
) -> Result<Option<(usize, ScanRows)>> {
    let pre = preprocess_scan(scan, floor_z, config);
    if pre.points.is_empty() {
        return Ok(None);
    }
    let outcome = map.insert_scan(&pre.points);
    let mut seen = HashSet::new();
    let ids: Vec<PointId> = outcome.owner.iter().copied().filter(|id| seen.insert(*id)).collect();
    let inputs = Array2::from_shape_fn((ids.len(), INPUT_DIM), |(i, c)| {
        normalize(&map.points()[ids[i] as usize], &scan.pose, floor_z)[c]
    });
    let context = if config.use_mcp {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[scan_index as u64, STREAM_CONTEXT]));
        Some(assemble_context(&ids, map, &seen, &scan.pose, floor_z, config.context_m, &mut rng)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[scan_index as u64, STREAM_BATCH]));
    let batches = make_batches(ids.len(), config.batch_n, &mut rng);
    Ok(Some((
        pre.points.len(),
        ScanRows {
            ids,
            inputs,
            context,
            batches,
            inserted: outcome.inserted,
        },
    )))
}

/// Gathers the real rows' outputs of every batch, indexed by scan point.
/// Padding rows are dropped.
pub fn scatter_outputs<T: Clone>(plans: &[BatchPlan], outputs: &[Vec<T>], k: usize) -> Vec<Option<T>> {
    let mut out = vec![None; k];
    for (plan, values) in plans.iter().zip(outputs) {
        for (&row, v) in plan.rows[..plan.real].iter().zip(values) {
            out[row] = Some(v.clone());
        }
    }
    out
}

/// Deterministic per-scan counters plus wall-clock time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanStats {
    pub index: usize,
    pub points_kept: usize,
    pub new_points: usize,
    pub clusters_merged: usize,
    pub instances: usize,
    pub ms_elapsed: f64,
}

/// Runs one scan through the online loop.
#[allow(clippy::too_many_arguments)]
pub fn process_scan(
    scan: &Scan,
    scan_index: usize,
    floor_z: f64,
    map: &mut GlobalMap,
    clusters: &mut ClusterSet,
    params: &NetworkParams,
    config: &PipelineConfig,
) -> Result<ScanStats> {
    let start = Instant::now();
    if params.use_mcp() != config.use_mcp {
        return Err(Error::Validation(
            "checkpoint and config disagree on context pooling".into(),
        ));
    }
    let mut stats = ScanStats {
        index: scan_index,
        points_kept: 0,
        new_points: 0,
        clusters_merged: 0,
        instances: clusters.num_clusters(),
        ms_elapsed: 0.0,
    };
    let Some((kept, rows)) = stage_scan(scan, scan_index, floor_z, map, config)? else {
        stats.ms_elapsed = start.elapsed().as_secs_f64() * 1e3;
        return Ok(stats);
    };

    // context features once per distinct row, pooled per scan point
    let pooled = match (&params.context, &rows.context) {
        (Some(layers), Some(ctx)) => {
            let features = context_features(ctx.rows().view(), layers);
            Some(pool_context(&features, ctx.index()))
        }
        _ => None,
    };

    let mut classes = Vec::with_capacity(rows.batches.len());
    let mut embeddings = Vec::with_capacity(rows.batches.len());
    for plan in &rows.batches {
        let inputs = rows.inputs.select(Axis(0), &plan.rows);
        let pooled = pooled.as_ref().map(|p| p.select(Axis(0), &plan.rows));
        let fwd = forward_pooled(inputs.view(), pooled.as_ref().map(|p| p.view()), params)?;
        classes.push(fwd.predictions());
        embeddings.push(fwd.embeddings.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    }
    let k = rows.ids.len();
    let classes = scatter_outputs(&rows.batches, &classes, k);
    let embeddings = scatter_outputs(&rows.batches, &embeddings, k);
    let classes: Vec<usize> = classes.into_iter().map(|c| c.expect("every point batched")).collect();
    let embeddings: Vec<Vec<f64>> = embeddings.into_iter().map(|e| e.expect("every point batched")).collect();
    map.update_labels(&rows.ids, &classes, &embeddings)?;

    let fresh: Vec<(PointId, Vec<f64>)> = rows
        .inserted
        .iter()
        .map(|&id| {
            let e = map.points()[id as usize].last_embedding.clone().expect("just updated");
            (id, e)
        })
        .collect();
    let assignment = assign_new_points(clusters, &fresh, map, config.beta)?;

    stats.points_kept = kept;
    stats.new_points = rows.inserted.len();
    stats.clusters_merged = assignment.merges;
    stats.instances = clusters.num_clusters();
    stats.ms_elapsed = start.elapsed().as_secs_f64() * 1e3;
    Ok(stats)
}

/// Training batches as the online loop would see them: each scan is
/// inserted in turn so its context comes only from earlier scans.
pub fn stage_training_batches(scans: &[Scan], floor_z: f64, config: &PipelineConfig) -> Result<Vec<Batch>> {
    stage_training_batches_strided(scans, floor_z, config, 1)
}

/// Like [`stage_training_batches`], but only every `stride`-th scan yields
/// batches. All scans still enter the map, so context density matches a
/// full run.
pub fn stage_training_batches_strided(
    scans: &[Scan],
    floor_z: f64,
    config: &PipelineConfig,
    stride: usize,
) -> Result<Vec<Batch>> {
    config.validate()?;
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let mut map = GlobalMap::new(config.cell_size);
    let mut out = Vec::new();
    for (index, scan) in scans.iter().enumerate() {
        let Some((_, rows)) = stage_scan(scan, index, floor_z, &mut map, config)? else {
            continue;
        };
        if index % stride != 0 {
            continue;
        }
        for plan in &rows.batches {
            let context = rows.context.as_ref().map(|ctx| {
                let mut b = ContextBuilder::new(ctx.m());
                for &r in &plan.rows {
                    b.push_point((0..ctx.m()).map(|j| ctx.row(r, j)));
                }
                b.finish()
            });
            let point = |r: usize| &map.points()[rows.ids[r] as usize];
            out.push(Batch {
                inputs: rows.inputs.select(Axis(0), &plan.rows),
                context,
                gt_class: plan.rows.iter().map(|&r| point(r).gt_class).collect(),
                gt_instance: plan.rows.iter().map(|&r| point(r).gt_instance).collect(),
            });
        }
    }
    Ok(out)
}

pub struct RunOutput {
    pub map: GlobalMap,
    pub clusters: ClusterSet,
    pub stats: Vec<ScanStats>,
    /// `None` when no point received a prediction.
    pub report: Option<MetricsReport>,
}

/// Processes every scan of `dataset` in manifest order and scores the
/// final map against its carried ground truth.
pub fn run(
    dataset: &ScanDataset,
    floor_z: f64,
    params: &NetworkParams,
    config: &PipelineConfig,
) -> Result<RunOutput> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("dataset has no scans".into()));
    }
    let mut map = GlobalMap::new(config.cell_size);
    let mut clusters = ClusterSet::new();
    let mut stats = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let scan = dataset.load_scan(i)?;
        stats.push(process_scan(&scan, i, floor_z, &mut map, &mut clusters, params, config)?);
    }
    clusters.sync_map(&mut map)?;
    let report = evaluate_map(&map).ok().map(|e| MetricsReport::compute(&e));
    Ok(RunOutput {
        map,
        clusters,
        stats,
        report,
    })
}

/// Ground truth against predictions for every labeled map point.
pub fn evaluate_map(map: &GlobalMap) -> Result<EvalPair> {
    let (mut gc, mut pc, mut gi, mut pi) = (vec![], vec![], vec![], vec![]);
    for p in map.points() {
        if let (Some(c), Some(i)) = (p.pred_class, p.instance_id) {
            gc.push(p.gt_class);
            pc.push(c);
            gi.push(p.gt_instance);
            pi.push(i);
        }
    }
    EvalPair::new(gc, pc, gi, pi)
}

pub fn stats_csv(stats: &[ScanStats]) -> String {
    let mut out = String::from("index,points_kept,new_points,clusters_merged,instances\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.index, s.points_kept, s.new_points, s.clusters_merged, s.instances
        );
    }
    out
}

pub fn timing_csv(stats: &[ScanStats]) -> String {
    let mut out = String::from("index,ms_elapsed\n");
    for s in stats {
        let _ = writeln!(out, "{},{:.3}", s.index, s.ms_elapsed);
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
