use ndarray::{Array2, ArrayView2, Axis};

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the rows.
pub fn loss_classification(logits: ArrayView2<f64>, gt_class: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), gt_class.len(), "one label per row");
    if gt_class.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .axis_iter(Axis(0))
        .zip(gt_class)
        .map(|(row, &c)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[c]
        })
        .sum();
    total / gt_class.len() as f64
}

/// Squared euclidean distance matrix between rows, from the Gram matrix.
/// Exactly symmetric, zero on the diagonal and never negative.
fn pairwise_sq_dist(emb: ArrayView2<f64>) -> Array2<f64> {
    let n = emb.nrows();
    let gram = emb.dot(&emb.t());
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = (gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]]).max(0.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// A selected triplet and its hinge value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub loss: f64,
}

/// Enumerates every ordered anchor/positive pair and picks its semihard
/// negative: the closest negative strictly farther than the positive, or the
/// farthest negative when none is. Ties go to the lowest index.
pub fn semihard_triplets(emb: ArrayView2<f64>, gt_instance: &[u64], margin: f64) -> Vec<Triplet> {
    let n = emb.nrows();
    assert_eq!(n, gt_instance.len(), "one instance per row");
    let d = pairwise_sq_dist(emb);
    let d = d.as_slice().expect("fresh array");
    let mut out = Vec::new();
    // distances are finite and non-negative, so their bit patterns sort in
    // numeric order; pairing with the index breaks ties toward the lowest
    let mut negatives: Vec<(u64, usize)> = Vec::with_capacity(n);
    for a in 0..n {
        let row = &d[a * n..(a + 1) * n];
        negatives.clear();
        negatives.extend(
            (0..n)
                .filter(|&j| gt_instance[j] != gt_instance[a])
                .map(|j| (row[j].to_bits(), j)),
        );
        if negatives.is_empty() {
            continue;
        }
        negatives.sort_unstable();
        let max_d = negatives.last().unwrap().0;
        let hardest_far = negatives[negatives.partition_point(|x| x.0 < max_d)].1;
        for p in 0..n {
            if p == a || gt_instance[p] != gt_instance[a] {
                continue;
            }
            let d_ap = row[p];
            let pos = negatives.partition_point(|x| f64::from_bits(x.0) <= d_ap);
            let neg = negatives.get(pos).map_or(hardest_far, |x| x.1);
            let loss = (d_ap - row[neg] + margin).max(0.0);
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative: neg,
                loss,
            });
        }
    }
    out
}

/// Mean semihard triplet loss over all anchor/positive pairs; zero when the
/// batch has no valid triplet.
pub fn loss_triplet_semihard(emb: ArrayView2<f64>, gt_instance: &[u64], margin: f64) -> f64 {
    let triplets = semihard_triplets(emb, gt_instance, margin);
    if triplets.is_empty() {
        return 0.0;
    }
    triplets.iter().map(|t| t.loss).sum::<f64>() / triplets.len() as f64
}

/// Triplet loss and its gradient with respect to the embeddings, holding the
/// negative selection fixed.
pub fn triplet_semihard_grad(
    emb: ArrayView2<f64>,
    gt_instance: &[u64],
    margin: f64,
) -> (f64, Array2<f64>) {
    let triplets = semihard_triplets(emb, gt_instance, margin);
    let mut grad = Array2::zeros(emb.raw_dim());
    if triplets.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / triplets.len() as f64;
    let dim = emb.ncols();
    let emb = emb.as_standard_layout();
    let e = emb.as_slice().expect("standard layout");
    let g = grad.as_slice_mut().expect("fresh array");
    let mut total = 0.0;
    for t in &triplets {
        total += t.loss;
        if t.loss <= 0.0 {
            continue;
        }
        let (ai, pi, ni) = (t.anchor * dim, t.positive * dim, t.negative * dim);
        for k in 0..dim {
            let (a, p, n) = (e[ai + k], e[pi + k], e[ni + k]);
            // d/da (|a-p|^2 - |a-n|^2) = 2(n - p)
            g[ai + k] += 2.0 * scale * (n - p);
            g[pi + k] -= 2.0 * scale * (a - p);
            g[ni + k] += 2.0 * scale * (a - n);
        }
    }
    (total * scale, grad)
}
