use nalgebra::{DMatrix, SymmetricEigen};

/// Components whose variance falls below this fraction of the leading
/// variance are treated as absent.
const RANK_TOLERANCE: f64 = 1e-10;

/// Projects embeddings onto their top three principal axes and rescales
/// each axis to `[0, 1]` so the result can be used as RGB.
///
/// Missing components (rank below three, or fewer than three points) are
/// filled with 0.5. Axis signs are fixed so the largest-magnitude loading
/// is positive.
pub fn pca_to_rgb(embeddings: &[Vec<f64>]) -> Vec<[f64; 3]> {
    let n = embeddings.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = embeddings[0].len();
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| embeddings[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let leading = order.first().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0);

    let mut out = vec![[0.5; 3]; n];
    if leading <= f64::EPSILON {
        return out;
    }
    for (channel, &axis) in order.iter().take(3).enumerate() {
        if eig.eigenvalues[axis] <= RANK_TOLERANCE * leading {
            continue;
        }
        let mut v = eig.eigenvectors.column(axis).into_owned();
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs()));
        if pivot.is_some_and(|p| p < 0.0) {
            v = -v;
        }
        let proj = &centered * v;
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if hi - lo <= 0.0 {
            continue;
        }
        for (row, x) in out.iter_mut().zip(proj.iter()) {
            row[channel] = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
    out
}
