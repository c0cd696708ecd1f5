mod common;

use std::collections::HashMap;
use std::fs;

use scanseg::clustering::ClusterSet;
use scanseg::globalmap::GlobalMap;
use scanseg::network::NetworkParams;
use scanseg::pipeline::{process_scan, run, stats_csv, PipelineConfig};
use scanseg::raytrace::{
    build_occupancy, simulate_trajectory, write_scan_dataset, Scan, ScanDataset, ScanParams, ScanPose,
};
use scanseg::synthetic::tiny_box;
use scanseg::Vec3;
use tempfile::TempDir;

fn box_scans() -> Vec<Scan> {
    let env = tiny_box(3).unwrap();
    let index = build_occupancy(&env, 0.1).unwrap();
    let path = [Vec3::new(0.3, 0.5, 0.5), Vec3::new(0.7, 0.5, 0.5)];
    simulate_trajectory(&path, 0.2, &index, &ScanParams::default()).unwrap()
}

fn config(use_mcp: bool) -> PipelineConfig {
    PipelineConfig {
        batch_n: 64,
        context_m: 8,
        use_mcp,
        seed: 5,
        ..Default::default()
    }
}

fn snapshot_bytes(map: &GlobalMap) -> Vec<u8> {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("snap.txt");
    map.write_snapshot(&path).unwrap();
    fs::read(path).unwrap()
}

#[test]
fn out_of_radius_scan_leaves_map_alone() {
    let scans = box_scans();
    let params = NetworkParams::init(true, 1);
    let cfg = config(true);
    let mut map = GlobalMap::new(0.1);
    let mut clusters = ClusterSet::new();
    process_scan(&scans[0], 0, 0.0, &mut map, &mut clusters, &params, &cfg).unwrap();
    let before = snapshot_bytes(&map);
    let far = Scan {
        pose: ScanPose::new(Vec3::new(50.0, 50.0, 0.5)),
        points: scans[1].points.clone(),
    };
    let stats = process_scan(&far, 1, 0.0, &mut map, &mut clusters, &params, &cfg).unwrap();
    assert_eq!((stats.points_kept, stats.new_points, stats.clusters_merged), (0, 0, 0));
    assert_eq!(snapshot_bytes(&map), before);
}

#[test]
fn repeated_scan_inserts_nothing() {
    let scans = box_scans();
    let params = NetworkParams::init(false, 1);
    let cfg = config(false);
    let mut map = GlobalMap::new(0.1);
    let mut clusters = ClusterSet::new();
    let first = process_scan(&scans[1], 0, 0.0, &mut map, &mut clusters, &params, &cfg).unwrap();
    assert!(first.new_points > 0);
    let second = process_scan(&scans[1], 1, 0.0, &mut map, &mut clusters, &params, &cfg).unwrap();
    assert_eq!(second.new_points, 0);
    assert_eq!(second.points_kept, first.points_kept);
    assert_eq!(map.len(), first.new_points);
}

#[test]
fn full_run_labels_everything_and_repeats_exactly() {
    let dir = TempDir::new().unwrap();
    write_scan_dataset(dir.path(), &box_scans(), 0.0).unwrap();
    let ds = ScanDataset::open(dir.path()).unwrap();
    let params = NetworkParams::init(true, 7);
    let a = run(&ds, 0.0, &params, &config(true)).unwrap();
    assert!(!a.map.is_empty());
    for p in a.map.points() {
        assert!(p.pred_class.is_some() && p.instance_id.is_some(), "point {} unlabeled", p.id);
    }
    let report = a.report.as_ref().unwrap();
    assert_eq!(report.points, a.map.len());

    let b = run(&ds, 0.0, &params, &config(true)).unwrap();
    assert_eq!(snapshot_bytes(&a.map), snapshot_bytes(&b.map));
    assert_eq!(stats_csv(&a.stats), stats_csv(&b.stats));

    let c = run(&ds, 0.0, &params, &PipelineConfig { seed: 6, ..config(true) }).unwrap();
    assert_eq!(c.map.len(), a.map.len());
}

#[test]
fn single_scan_report_covers_that_scan() {
    let scans = box_scans();
    let dir = TempDir::new().unwrap();
    write_scan_dataset(dir.path(), &scans[..1], 0.0).unwrap();
    let ds = ScanDataset::open(dir.path()).unwrap();
    let out = run(&ds, 0.0, &NetworkParams::init(false, 2), &config(false)).unwrap();
    assert_eq!(out.stats.len(), 1);
    assert_eq!(out.report.unwrap().points, out.stats[0].new_points);
}

#[test]
fn predictions_without_context_ignore_history() {
    let scans = box_scans();
    let params = common::random_params(false, 11);
    let cfg = config(false);
    let classes = |map: &GlobalMap| -> HashMap<[u64; 3], usize> {
        map.points()
            .iter()
            .filter_map(|p| p.pred_class.map(|c| (p.position.map(f64::to_bits).into(), c)))
            .collect()
    };

    let mut fresh = GlobalMap::new(0.1);
    process_scan(&scans[2], 2, 0.0, &mut fresh, &mut ClusterSet::new(), &params, &cfg).unwrap();

    let mut seq = GlobalMap::new(0.1);
    let mut clusters = ClusterSet::new();
    for (i, s) in scans.iter().enumerate() {
        process_scan(s, i, 0.0, &mut seq, &mut clusters, &params, &cfg).unwrap();
    }
    let seq_classes = classes(&seq);
    let fresh_classes = classes(&fresh);
    assert!(!fresh_classes.is_empty());
    for (pos, c) in &fresh_classes {
        assert_eq!(seq_classes.get(pos), Some(c));
    }
}

#[test]
fn missing_and_empty_datasets_are_errors() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("manifest.txt"), "# floor_z 0\n").unwrap();
    assert!(ScanDataset::open(dir.path()).is_err());

    fs::write(dir.path().join("manifest.txt"), "gone.txt 0 0 1\n").unwrap();
    let ds = ScanDataset::open(dir.path()).unwrap();
    let Err(err) = run(&ds, 0.0, &NetworkParams::init(false, 0), &config(false)) else {
        panic!("missing scan file accepted");
    };
    assert!(err.to_string().contains("gone.txt"), "{err}");
}
