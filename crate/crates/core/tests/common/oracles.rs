//! Independent brute-force oracles shared by the integration tests.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use scanseg::clustering::{assign_new_points, ClusterSet};
use scanseg::globalmap::GlobalMap;
use scanseg::pointcloud::LabeledPoint;
use scanseg::Vec3;

use super::rng;

/// True when both labelings induce the same partition.
pub fn same_partition<A: Eq + std::hash::Hash + Copy, B: Eq + std::hash::Hash + Copy>(
    a: &[A],
    b: &[B],
) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut ab: HashMap<A, B> = HashMap::new();
    let mut ba: HashMap<B, A> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x
    })
}

/// Component labels of an undirected graph given as an edge predicate,
/// by depth-first search over all pairs.
pub fn components(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut label = vec![usize::MAX; n];
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = s;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if label[v] == usize::MAX && edge(u, v) {
                    label[v] = s;
                    stack.push(v);
                }
            }
        }
    }
    label
}

pub struct ClusterScenario {
    pub positions: Vec<Vec3>,
    pub embeddings: Vec<Vec<f64>>,
    pub beta: f64,
}

fn cell(p: &Vec3) -> [i64; 3] {
    [(p.x / 0.1).floor() as i64, (p.y / 0.1).floor() as i64, (p.z / 0.1).floor() as i64]
}

/// Points at distinct cells of a small grid with embeddings scattered
/// around a few prototypes.
pub fn cluster_scenario(seed: u64, max_points: usize) -> ClusterScenario {
    let mut r = rng(seed);
    let side = r.gen_range(4..9i64);
    let mut cells: Vec<[i64; 3]> = (0..side)
        .flat_map(|x| (0..side).flat_map(move |y| (0..3).map(move |z| [x, y, z])))
        .collect();
    cells.shuffle(&mut r);
    let n = r.gen_range(20..=max_points.min(cells.len()));
    let dim = 8;
    let protos: Vec<Vec<f64>> = (0..r.gen_range(2..6))
        .map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let noise = r.gen_range(0.05..0.6);
    let positions = cells[..n]
        .iter()
        .map(|c| {
            Vec3::new(
                (c[0] as f64 + r.gen_range(0.05..0.95)) * 0.1,
                (c[1] as f64 + r.gen_range(0.05..0.95)) * 0.1,
                (c[2] as f64 + r.gen_range(0.05..0.95)) * 0.1,
            )
        })
        .collect();
    let embeddings = (0..n)
        .map(|_| {
            let p = &protos[r.gen_range(0..protos.len())];
            let v: Vec<f64> = p.iter().map(|x| x + r.gen_range(-noise..noise)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    ClusterScenario {
        positions,
        embeddings,
        beta: r.gen_range(0.5..0.95),
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Offline partition: components of the graph linking cell-adjacent points
/// whose cosine similarity exceeds beta.
pub fn offline_partition(s: &ClusterScenario) -> Vec<usize> {
    let cells: Vec<[i64; 3]> = s.positions.iter().map(cell).collect();
    components(s.positions.len(), |u, v| {
        u != v
            && (0..3).all(|k| (cells[u][k] - cells[v][k]).abs() <= 1)
            && cos(&s.embeddings[u], &s.embeddings[v]) > s.beta
    })
}

/// Feeds the scenario to the incremental engine in `scans` chunks following
/// `order`, returning per-original-point instance labels.
pub fn incremental_partition(s: &ClusterScenario, order: &[usize], scans: usize) -> Vec<u64> {
    let mut map = GlobalMap::new(0.1);
    let mut clusters = ClusterSet::new();
    let mut id_of = vec![0u32; s.positions.len()];
    let chunk = order.len().div_ceil(scans.max(1));
    for part in order.chunks(chunk) {
        let pts: Vec<LabeledPoint> = part
            .iter()
            .map(|&i| LabeledPoint::new(s.positions[i], [0.5; 3], 0, 0))
            .collect();
        let outcome = map.insert_scan(&pts);
        assert_eq!(outcome.inserted.len(), part.len());
        let mut fresh = Vec::new();
        for (&i, &id) in part.iter().zip(&outcome.owner) {
            id_of[i] = id;
            fresh.push((id, s.embeddings[i].clone()));
        }
        let ids: Vec<u32> = fresh.iter().map(|f| f.0).collect();
        let embs: Vec<Vec<f64>> = fresh.iter().map(|f| f.1.clone()).collect();
        map.update_labels(&ids, &vec![0; ids.len()], &embs).unwrap();
        assign_new_points(&mut clusters, &fresh, &map, s.beta).unwrap();
    }
    id_of.iter().map(|&id| clusters.instance_of(id).unwrap()).collect()
}

/// Partition scores straight from their definitions: pair enumeration for
/// ARI, label frequencies for the entropies and a normalized hypergeometric
/// recurrence for the expected mutual information. Returns (NMI, AMI, ARI).
pub fn partition_scores(u: &[u64], v: &[u64]) -> (f64, f64, f64) {
    let n = u.len();
    let nf = n as f64;
    let count = |xs: &[u64]| {
        let mut m: HashMap<u64, usize> = HashMap::new();
        for &x in xs {
            *m.entry(x).or_default() += 1;
        }
        m
    };
    let (cu, cv) = (count(u), count(v));
    let mut joint: HashMap<(u64, u64), usize> = HashMap::new();
    for (&a, &b) in u.iter().zip(v) {
        *joint.entry((a, b)).or_default() += 1;
    }
    let h = |c: &HashMap<u64, usize>| -> f64 {
        c.values().map(|&k| k as f64 / nf).map(|p| -p * p.ln()).sum()
    };
    let (hu, hv) = (h(&cu), h(&cv));
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &k)| {
            let pij = k as f64 / nf;
            pij * (pij / ((cu[&a] as f64 / nf) * (cv[&b] as f64 / nf))).ln()
        })
        .sum();
    let identical = same_partition(u, v);

    let nmi = if identical {
        1.0
    } else if hu == 0.0 || hv == 0.0 {
        0.0
    } else {
        mi / (hu * hv).sqrt()
    };

    let mut emi = 0.0;
    for &a in cu.values() {
        for &b in cv.values() {
            let lo = (a + b).saturating_sub(n);
            let hi = a.min(b);
            let mut w = vec![1.0f64];
            for k in lo..hi {
                let ratio = ((a - k) * (b - k)) as f64 / ((k + 1) * (n + k + 1 - a - b)) as f64;
                let last = *w.last().unwrap();
                w.push(last * ratio);
            }
            let total: f64 = w.iter().sum();
            for (off, wk) in w.iter().enumerate() {
                let k = lo + off;
                if k == 0 {
                    continue;
                }
                let kf = k as f64;
                emi += wk / total * kf / nf * (nf * kf / (a * b) as f64).ln();
            }
        }
    }
    let ami = if identical {
        1.0
    } else {
        let d = hu.max(hv) - emi;
        if d.abs() < f64::EPSILON { 0.0 } else { (mi - emi) / d }
    };

    let (mut same_both, mut same_u, mut same_v, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let su = u[i] == u[j];
            let sv = v[i] == v[j];
            same_both += f64::from(u8::from(su && sv));
            same_u += f64::from(u8::from(su));
            same_v += f64::from(u8::from(sv));
            pairs += 1.0;
        }
    }
    let ari = if identical {
        1.0
    } else {
        let expected = if pairs > 0.0 { same_u * same_v / pairs } else { 0.0 };
        let d = 0.5 * (same_u + same_v) - expected;
        if d == 0.0 { 0.0 } else { (same_both - expected) / d }
    };
    (nmi, ami, ari)
}

/// A random labeling of `n` points with up to `k` labels.
pub fn random_labels(n: usize, k: u64, seed: u64) -> Vec<u64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(0..k)).collect()
}
