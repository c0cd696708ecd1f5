//! Segmentation scores: per-class IOU, point and object accuracy, and the
//! NMI / AMI / ARI partition agreement measures.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::globalmap::SnapshotRow;
use crate::pointcloud::{ClassLegend, NUM_CLASSES};

/// Ground truth and predictions for the evaluated points.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub gt_class: Vec<usize>,
    pub pred_class: Vec<usize>,
    pub gt_instance: Vec<u64>,
    pub pred_instance: Vec<u64>,
}

impl EvalPair {
    pub fn new(
        gt_class: Vec<usize>,
        pred_class: Vec<usize>,
        gt_instance: Vec<u64>,
        pred_instance: Vec<u64>,
    ) -> Result<Self> {
        let n = gt_class.len();
        if n == 0 {
            return Err(Error::Validation("nothing to evaluate".into()));
        }
        if pred_class.len() != n || gt_instance.len() != n || pred_instance.len() != n {
            return Err(Error::Shape("evaluation arrays differ in length".into()));
        }
        if let Some(&c) = gt_class.iter().chain(&pred_class).find(|&&c| c >= NUM_CLASSES) {
            return Err(Error::Validation(format!("class {c} out of range")));
        }
        Ok(EvalPair {
            gt_class,
            pred_class,
            gt_instance,
            pred_instance,
        })
    }

    /// Keeps rows that carry both a predicted class and an instance label.
    pub fn from_snapshot(rows: &[SnapshotRow]) -> Result<Self> {
        let (mut gc, mut pc, mut gi, mut pi) = (vec![], vec![], vec![], vec![]);
        for r in rows {
            if let (Some(c), Some(i)) = (r.pred_class, r.instance_id) {
                gc.push(r.gt_class);
                pc.push(c);
                gi.push(r.gt_instance);
                pi.push(i);
            }
        }
        if gc.is_empty() {
            return Err(Error::Validation("snapshot has no predicted points".into()));
        }
        EvalPair::new(gc, pc, gi, pi)
    }

    pub fn len(&self) -> usize {
        self.gt_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_class.is_empty()
    }
}

/// Per-class IOU; `None` where a class is absent from both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct Iou {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn iou(eval: &EvalPair) -> Iou {
    let mut tp = [0usize; NUM_CLASSES];
    let mut fp = [0usize; NUM_CLASSES];
    let mut fn_ = [0usize; NUM_CLASSES];
    for (&g, &p) in eval.gt_class.iter().zip(&eval.pred_class) {
        if g == p {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|c| {
            let denom = tp[c] + fp[c] + fn_[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Iou { per_class, mean }
}

pub fn point_accuracy(eval: &EvalPair) -> f64 {
    let hits = eval
        .gt_class
        .iter()
        .zip(&eval.pred_class)
        .filter(|(g, p)| g == p)
        .count();
    hits as f64 / eval.len() as f64
}

fn majority(classes: impl Iterator<Item = usize>) -> usize {
    let mut counts = [0usize; NUM_CLASSES];
    for c in classes {
        counts[c] += 1;
    }
    // first maximum, so ties go to the smaller class id
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// Fraction of ground-truth instances matched by a predicted cluster with
/// point IoU of at least 0.5 whose majority predicted class equals the
/// instance's majority ground-truth class.
pub fn object_accuracy(eval: &EvalPair) -> f64 {
    let mut gt_members: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut pred_members: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut overlap: HashMap<(u64, u64), usize> = HashMap::new();
    for i in 0..eval.len() {
        let (g, p) = (eval.gt_instance[i], eval.pred_instance[i]);
        gt_members.entry(g).or_default().push(i);
        pred_members.entry(p).or_default().push(i);
        *overlap.entry((g, p)).or_default() += 1;
    }
    let pred_class: HashMap<u64, usize> = pred_members
        .iter()
        .map(|(&p, idx)| (p, majority(idx.iter().map(|&i| eval.pred_class[i]))))
        .collect();
    let mut matched = 0;
    for (&g, idx) in &gt_members {
        let class = majority(idx.iter().map(|&i| eval.gt_class[i]));
        let hit = overlap.iter().any(|(&(og, p), &inter)| {
            if og != g {
                return false;
            }
            let union = idx.len() + pred_members[&p].len() - inter;
            2 * inter >= union && pred_class[&p] == class
        });
        if hit {
            matched += 1;
        }
    }
    matched as f64 / gt_members.len() as f64
}

/// Contingency table between the ground-truth (rows) and predicted
/// (columns) instance partitions. Labels are sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub gt_labels: Vec<u64>,
    pub pred_labels: Vec<u64>,
    pub table: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
    /// Sum over cells of `C(n_ij, 2)`.
    pub pair_sum: u64,
}

fn comb2(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

fn labels_of(values: &[u64]) -> (Vec<u64>, HashMap<u64, usize>) {
    let mut labels = values.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let pos = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    (labels, pos)
}

pub fn pair_counting(eval: &EvalPair) -> Contingency {
    let (gt_labels, gpos) = labels_of(&eval.gt_instance);
    let (pred_labels, ppos) = labels_of(&eval.pred_instance);
    let mut table = vec![vec![0u64; pred_labels.len()]; gt_labels.len()];
    for (g, p) in eval.gt_instance.iter().zip(&eval.pred_instance) {
        table[gpos[g]][ppos[p]] += 1;
    }
    let row_sums = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums = (0..pred_labels.len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let pair_sum = table.iter().flatten().map(|&v| comb2(v)).sum();
    Contingency {
        gt_labels,
        pred_labels,
        table,
        row_sums,
        col_sums,
        n: eval.len() as u64,
        pair_sum,
    }
}

/// True when the two instance labelings induce the same partition.
fn identical_partitions(ct: &Contingency) -> bool {
    ct.gt_labels.len() == ct.pred_labels.len()
        && ct.table.iter().all(|row| row.iter().filter(|&&v| v > 0).count() == 1)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&a| a > 0)
        .map(|&a| {
            let p = a as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(ct: &Contingency) -> f64 {
    let n = ct.n as f64;
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (ct.row_sums[i] as f64 * ct.col_sums[j] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under the hypergeometric model of random
/// partitions with fixed marginals.
pub fn expected_mutual_information(ct: &Contingency) -> f64 {
    let n = ct.n;
    let nf = n as f64;
    let lf = |k: u64| ln_factorial(k);
    let mut emi = 0.0;
    for &a in &ct.row_sums {
        for &b in &ct.col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf(a) + lf(b) + lf(n - a) + lf(n - b) - lf(n);
            for nij in lo..=hi {
                let x = nij as f64;
                let log_p = fixed - lf(nij) - lf(a - nij) - lf(b - nij) - lf(n + nij - a - b);
                emi += x / nf * (nf * x / (a as f64 * b as f64)).ln() * log_p.exp();
            }
        }
    }
    emi
}

/// `I(U;V) / sqrt(H(U) H(V))`; when an entropy is zero, 1 for identical
/// partitions and 0 otherwise.
pub fn nmi(eval: &EvalPair) -> f64 {
    let ct = pair_counting(eval);
    if identical_partitions(&ct) {
        return 1.0;
    }
    let n = ct.n as f64;
    let (hu, hv) = (entropy(&ct.row_sums, n), entropy(&ct.col_sums, n));
    if hu == 0.0 || hv == 0.0 {
        return 0.0;
    }
    (mutual_information(&ct) / (hu * hv).sqrt()).clamp(0.0, 1.0)
}

/// `(I - E[I]) / (max(H(U), H(V)) - E[I])`.
pub fn ami(eval: &EvalPair) -> f64 {
    let ct = pair_counting(eval);
    if identical_partitions(&ct) {
        return 1.0;
    }
    let n = ct.n as f64;
    let h = entropy(&ct.row_sums, n).max(entropy(&ct.col_sums, n));
    let emi = expected_mutual_information(&ct);
    let denom = h - emi;
    if denom.abs() < f64::EPSILON {
        return 0.0;
    }
    (mutual_information(&ct) - emi) / denom
}

/// Hubert-Arabie adjusted Rand index.
pub fn ari(eval: &EvalPair) -> f64 {
    let ct = pair_counting(eval);
    if identical_partitions(&ct) {
        return 1.0;
    }
    let sa: f64 = ct.row_sums.iter().map(|&a| comb2(a) as f64).sum();
    let sb: f64 = ct.col_sums.iter().map(|&b| comb2(b) as f64).sum();
    let total = comb2(ct.n) as f64;
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let denom = 0.5 * (sa + sb) - expected;
    if denom == 0.0 {
        return 0.0;
    }
    (ct.pair_sum as f64 - expected) / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub iou: Iou,
    pub point_accuracy: f64,
    pub object_accuracy: f64,
    pub nmi: f64,
    pub ami: f64,
    pub ari: f64,
    pub points: usize,
}

pub const SUMMARY_HEADER: &str = "meanIOU,pointAcc,objAcc,NMI,AMI,ARI";

impl MetricsReport {
    pub fn compute(eval: &EvalPair) -> Self {
        MetricsReport {
            iou: iou(eval),
            point_accuracy: point_accuracy(eval),
            object_accuracy: object_accuracy(eval),
            nmi: nmi(eval),
            ami: ami(eval),
            ari: ari(eval),
            points: eval.len(),
        }
    }

    /// Per-class rows `class,name,iou` (empty iou when undefined), a blank
    /// line, then the summary header and values.
    pub fn to_csv(&self, legend: &ClassLegend) -> String {
        let mut out = String::from("class,name,iou\n");
        for (c, v) in self.iou.per_class.iter().enumerate() {
            let name = legend.name(c).unwrap_or("");
            match v {
                Some(v) => {
                    let _ = writeln!(out, "{c},{name},{v:.6}");
                }
                None => {
                    let _ = writeln!(out, "{c},{name},");
                }
            }
        }
        let _ = writeln!(out, "\n{SUMMARY_HEADER}");
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.iou.mean, self.point_accuracy, self.object_accuracy, self.nmi, self.ami, self.ari
        );
        out
    }

    pub fn write(&self, legend: &ClassLegend, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv(legend)).map_err(|e| Error::io(path, e))
    }
}

/// Reads the summary values back from a report written by
/// [`MetricsReport::to_csv`].
pub fn read_summary(text: &str) -> Option<[f64; 6]> {
    let mut lines = text.lines().skip_while(|l| *l != SUMMARY_HEADER);
    lines.next()?;
    let values: Vec<f64> = lines.next()?.split(',').map(|v| v.parse().ok()).collect::<Option<_>>()?;
    values.try_into().ok()
}
