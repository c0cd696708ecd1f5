//! Central finite-difference check of every parameter entry.
//!
//! A perturbed entry only changes part of the network, so the check keeps
//! every intermediate array of the unperturbed pass and recomputes only what
//! the entry feeds into. The unperturbed pass is compared with the library
//! forward before any difference is taken.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use scanseg::network::{
    backward, evaluate_loss, forward, loss_classification, semihard_triplets, Batch, Dense,
    LossConfig, NetworkParams, EMBED_DIM, FEATURE_DIM, INPUT_DIM,
};

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
/// Entries where both gradients are below this magnitude are compared
/// absolutely; central differences cannot resolve smaller values to 1e-3.
pub const ABS_FLOOR: f64 = 1e-7;

pub struct GradReport {
    pub checked: usize,
    /// Entries whose ±STEP stencil crosses a ReLU, max-pool or triplet
    /// selection boundary; the loss is not differentiable across it.
    pub kinks: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

fn affine(x: ArrayView2<f64>, d: &Dense) -> Array2<f64> {
    x.dot(&d.weight.t()) + &d.bias
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Every intermediate array of one forward pass.
#[derive(Clone)]
struct Pass {
    h1pre: Array2<f64>,
    h1: Array2<f64>,
    h2pre: Array2<f64>,
    h2: Array2<f64>,
    pooled: Array2<f64>,
    pool_win: Array2<u32>,
    tin: Array2<f64>,
    tpre: Array2<f64>,
    t: Array2<f64>,
    epre: Array2<f64>,
    e: Array2<f64>,
    g: Array1<f64>,
    g_win: Vec<usize>,
    logits: Array2<f64>,
}

struct Net<'a> {
    batch: &'a Batch,
    params: &'a NetworkParams,
    loss: LossConfig,
}

impl Net<'_> {
    fn full(&self) -> Pass {
        let n = self.batch.len();
        let empty = Array2::zeros((0, 0));
        let mut pass = Pass {
            h1pre: empty.clone(),
            h1: empty.clone(),
            h2pre: empty.clone(),
            h2: empty.clone(),
            pooled: empty.clone(),
            pool_win: Array2::zeros((0, 0)),
            tin: self.batch.inputs.clone(),
            tpre: empty.clone(),
            t: empty.clone(),
            epre: empty.clone(),
            e: empty,
            g: Array1::zeros(FEATURE_DIM),
            g_win: vec![0; FEATURE_DIM],
            logits: Array2::zeros((n, 0)),
        };
        if let (Some(layers), Some(ctx)) = (&self.params.context, &self.batch.context) {
            pass.h1pre = affine(ctx.rows().view(), &layers.layer1);
            pass.h1 = relu(&pass.h1pre);
            pass.h2pre = affine(pass.h1.view(), &layers.layer2);
            pass.h2 = relu(&pass.h2pre);
            pass.pooled = Array2::zeros((n, FEATURE_DIM));
            pass.pool_win = Array2::zeros((n, FEATURE_DIM));
            for k in 0..FEATURE_DIM {
                self.pool_column(&mut pass, k);
            }
            pass.tin = ndarray::concatenate![Axis(1), self.batch.inputs.view(), pass.pooled.view()];
        }
        self.from_tin(&mut pass);
        pass
    }

    /// Max over each point's context rows in feature column `k`; the first
    /// occurrence wins ties.
    fn pool_column(&self, pass: &mut Pass, k: usize) {
        let index = self.batch.context.as_ref().unwrap().index();
        for i in 0..index.nrows() {
            let mut best = index[[i, 0]];
            for &u in index.row(i).iter().skip(1) {
                if pass.h2[[u as usize, k]] > pass.h2[[best as usize, k]] {
                    best = u;
                }
            }
            pass.pool_win[[i, k]] = best;
            pass.pooled[[i, k]] = pass.h2[[best as usize, k]];
        }
    }

    fn from_tin(&self, pass: &mut Pass) {
        pass.tpre = affine(pass.tin.view(), &self.params.trunk);
        self.from_tpre(pass);
    }

    fn from_tpre(&self, pass: &mut Pass) {
        pass.t = relu(&pass.tpre);
        for k in 0..FEATURE_DIM {
            Self::global_column(pass, k);
        }
        pass.epre = affine(pass.t.view(), &self.params.embed);
        self.from_epre(pass);
    }

    fn global_column(pass: &mut Pass, k: usize) {
        let mut best = 0;
        for i in 1..pass.t.nrows() {
            if pass.t[[i, k]] > pass.t[[best, k]] {
                best = i;
            }
        }
        pass.g_win[k] = best;
        pass.g[k] = pass.t[[best, k]];
    }

    /// Trunk column `k` changed in `tpre`: update it and everything after.
    fn from_tpre_column(&self, pass: &mut Pass, k: usize) {
        let w = self.params.embed.weight.column(k);
        for i in 0..pass.t.nrows() {
            let new = pass.tpre[[i, k]].max(0.0);
            let delta = new - pass.t[[i, k]];
            pass.t[[i, k]] = new;
            if delta != 0.0 {
                pass.epre.row_mut(i).scaled_add(delta, &w);
            }
        }
        Self::global_column(pass, k);
        self.from_epre(pass);
    }

    fn from_epre(&self, pass: &mut Pass) {
        pass.e = pass.epre.clone();
        for mut row in pass.e.rows_mut() {
            let norm = row.dot(&row).sqrt().max(1e-12);
            row.mapv_inplace(|v| v / norm);
        }
        let n = pass.e.nrows();
        let mut head = Array2::zeros((n, EMBED_DIM + FEATURE_DIM));
        head.slice_mut(s![.., ..EMBED_DIM]).assign(&pass.e);
        head.slice_mut(s![.., EMBED_DIM..]).assign(&pass.g.broadcast((n, FEATURE_DIM)).unwrap());
        pass.logits = affine(head.view(), &self.params.classify);
    }

    fn head_input(pass: &Pass, i: usize, c: usize) -> f64 {
        if c < EMBED_DIM {
            pass.e[[i, c]]
        } else {
            pass.g[c - EMBED_DIM]
        }
    }

    /// The pass with one parameter entry shifted by `delta`. `col` is `None`
    /// for a bias entry.
    fn perturbed(&self, base: &Pass, layer: &str, row: usize, col: Option<usize>, delta: f64) -> Pass {
        let mut p = base.clone();
        let n = p.tin.nrows();
        match layer {
            "classify" => {
                for i in 0..n {
                    let x = col.map_or(1.0, |c| Self::head_input(&p, i, c));
                    p.logits[[i, row]] += delta * x;
                }
            }
            "embed" => {
                for i in 0..n {
                    p.epre[[i, row]] += delta * col.map_or(1.0, |c| p.t[[i, c]]);
                }
                self.from_epre(&mut p);
            }
            "trunk" => {
                for i in 0..n {
                    p.tpre[[i, row]] += delta * col.map_or(1.0, |c| p.tin[[i, c]]);
                }
                self.from_tpre_column(&mut p, row);
            }
            "context2" => {
                for u in 0..p.h2pre.nrows() {
                    p.h2pre[[u, row]] += delta * col.map_or(1.0, |c| p.h1[[u, c]]);
                    p.h2[[u, row]] = p.h2pre[[u, row]].max(0.0);
                }
                self.pool_column(&mut p, row);
                let w = self.params.trunk.weight.column(INPUT_DIM + row);
                for i in 0..n {
                    let change = p.pooled[[i, row]] - p.tin[[i, INPUT_DIM + row]];
                    p.tin[[i, INPUT_DIM + row]] = p.pooled[[i, row]];
                    if change != 0.0 {
                        p.tpre.row_mut(i).scaled_add(change, &w);
                    }
                }
                self.from_tpre(&mut p);
            }
            "context1" => {
                let rows = self.batch.context.as_ref().unwrap().rows();
                let w = self.params.context.as_ref().unwrap().layer2.weight.column(row);
                for u in 0..p.h1pre.nrows() {
                    p.h1pre[[u, row]] += delta * col.map_or(1.0, |c| rows[[u, c]]);
                    let new = p.h1pre[[u, row]].max(0.0);
                    let change = new - p.h1[[u, row]];
                    p.h1[[u, row]] = new;
                    if change != 0.0 {
                        p.h2pre.row_mut(u).scaled_add(change, &w);
                    }
                }
                p.h2 = relu(&p.h2pre);
                for k in 0..FEATURE_DIM {
                    self.pool_column(&mut p, k);
                }
                p.tin.slice_mut(s![.., INPUT_DIM..]).assign(&p.pooled);
                self.from_tin(&mut p);
            }
            other => panic!("unknown layer {other}"),
        }
        p
    }

    /// Loss plus the triplet selection behind it.
    fn evaluate(&self, pass: &Pass) -> (f64, Vec<(usize, usize, usize, bool)>) {
        let ce = loss_classification(pass.logits.view(), &self.batch.gt_class);
        let triplets = semihard_triplets(pass.e.view(), &self.batch.gt_instance, self.loss.margin);
        let tri = if triplets.is_empty() {
            0.0
        } else {
            triplets.iter().map(|t| t.loss).sum::<f64>() / triplets.len() as f64
        };
        let selection = triplets
            .iter()
            .map(|t| (t.anchor, t.positive, t.negative, t.loss > 0.0))
            .collect();
        (ce + self.loss.lambda * tri, selection)
    }
}

fn same_mask(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.iter().zip(b).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
}

/// True when every ReLU state and max-pool winner of `p` matches `base`.
fn same_pattern(base: &Pass, p: &Pass) -> bool {
    base.g_win == p.g_win
        && same_mask(&base.t, &p.t)
        && base.pool_win == p.pool_win
        && same_mask(&base.h1, &p.h1)
        && same_mask(&base.h2, &p.h2)
}

pub fn check_gradients(batch: &Batch, params: &NetworkParams, loss: LossConfig) -> GradReport {
    let fwd = forward(batch, params).unwrap();
    let (grads, _) = backward(batch, params, &fwd, &loss).unwrap();

    let net = Net { batch, params, loss };
    let base = net.full();
    let (center_loss, center) = net.evaluate(&base);
    let library = evaluate_loss(batch, params, &loss).unwrap().total;
    assert!(
        (center_loss - library).abs() <= 1e-10 * library.abs().max(1.0),
        "reference pass {center_loss} disagrees with library {library}"
    );

    let mut report = GradReport {
        checked: 0,
        kinks: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    for (name, g) in grads.layers() {
        let (rows, cols) = g.weight.dim();
        let entries = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, Some(c))))
            .chain((0..rows).map(|r| (r, None)));
        for (r, c) in entries {
            let pass_up = net.perturbed(&base, name, r, c, STEP);
            let pass_down = net.perturbed(&base, name, r, c, -STEP);
            let (up, sel_up) = net.evaluate(&pass_up);
            let (down, sel_down) = net.evaluate(&pass_down);
            report.checked += 1;
            let smooth = sel_up == center
                && sel_down == center
                && same_pattern(&base, &pass_up)
                && same_pattern(&base, &pass_down);
            if !smooth {
                report.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * STEP);
            let exact = match c {
                Some(c) => g.weight[[r, c]],
                None => g.bias[r],
            };
            let scale = exact.abs().max(numeric.abs());
            let rel = if scale < ABS_FLOOR {
                0.0
            } else {
                (exact - numeric).abs() / scale
            };
            report.worst = report.worst.max(rel);
            if rel > REL_TOL {
                report.failures.push(format!(
                    "{name} ({r}, {c:?}): analytic {exact:e} numeric {numeric:e} rel {rel:e}"
                ));
            }
        }
    }
    report
}
