//! Forward pass and exact reverse-mode gradients.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

use super::batch::{Batch, ContextTensor};
use super::loss::{loss_classification, softmax, triplet_semihard_grad};
use super::params::{ContextLayers, Dense, Gradients, NetworkParams};
use super::{EMBED_DIM, FEATURE_DIM, INPUT_DIM};
use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

/// Weighting of the joint objective `CE + lambda * triplet`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub classification: f64,
    pub triplet: f64,
    pub total: f64,
}

fn affine(x: ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    let mut y = x.dot(&layer.weight.t());
    y += &layer.bias;
    y
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Column-wise max over selected rows; returns the values and, per column,
/// the winning row (first occurrence on ties).
struct ContextPool {
    hidden1: Array2<f64>,
    hidden2: Array2<f64>,
    /// `N × 200` table rows that won the max.
    winner: Array2<u32>,
    pooled: Array2<f64>,
}

fn pool_rows(hidden2: &Array2<f64>, index: &Array2<u32>) -> (Array2<f64>, Array2<u32>) {
    let (n, m) = index.dim();
    let mut pooled = Array2::zeros((n, FEATURE_DIM));
    let mut winner = Array2::zeros((n, FEATURE_DIM));
    for i in 0..n {
        let first = index[[i, 0]];
        let mut best = pooled.row_mut(i);
        best.assign(&hidden2.row(first as usize));
        let mut win = winner.row_mut(i);
        win.fill(first);
        for j in 1..m {
            let u = index[[i, j]];
            let row = hidden2.row(u as usize);
            for k in 0..FEATURE_DIM {
                if row[k] > best[k] {
                    best[k] = row[k];
                    win[k] = u;
                }
            }
        }
    }
    (pooled, winner)
}

fn context_hidden(rows: ArrayView2<f64>, layers: &ContextLayers) -> (Array2<f64>, Array2<f64>) {
    let mut hidden1 = affine(rows, &layers.layer1);
    relu_inplace(&mut hidden1);
    let mut hidden2 = affine(hidden1.view(), &layers.layer2);
    relu_inplace(&mut hidden2);
    (hidden1, hidden2)
}

fn context_pool(ctx: &ContextTensor, layers: &ContextLayers) -> ContextPool {
    let (hidden1, hidden2) = context_hidden(ctx.rows().view(), layers);
    let (pooled, winner) = pool_rows(&hidden2, ctx.index());
    ContextPool {
        hidden1,
        hidden2,
        winner,
        pooled,
    }
}

/// Per-row context features (`U × 200`) before pooling.
pub fn context_features(rows: ArrayView2<f64>, layers: &ContextLayers) -> Array2<f64> {
    context_hidden(rows, layers).1
}

/// Max over the `M` feature rows each point indexes (`N × M` into `features`).
pub fn pool_context(features: &Array2<f64>, index: &Array2<u32>) -> Array2<f64> {
    pool_rows(features, index).0
}

/// Pooled context features (`N × 200`) for a context tensor.
pub fn mcp_forward(ctx: &ContextTensor, layers: &ContextLayers) -> Array2<f64> {
    context_pool(ctx, layers).pooled
}

/// Network outputs plus everything the backward pass needs.
pub struct Forward {
    /// `N × 50`, unit rows.
    pub embeddings: Array2<f64>,
    /// `N × 13`.
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    context: Option<ContextPool>,
    pooled_only: bool,
    trunk_in: Array2<f64>,
    trunk: Array2<f64>,
    embed_norm: Array1<f64>,
    global_winner: Vec<usize>,
    head_in: Array2<f64>,
}

impl Forward {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// The max-pooled global feature shared by every point.
    pub fn global_feature(&self) -> Array1<f64> {
        self.head_in.row(0).slice(s![EMBED_DIM..]).to_owned()
    }

    pub fn trunk_features(&self) -> &Array2<f64> {
        &self.trunk
    }

    /// Fingerprint of every discrete choice made by the pass: ReLU on/off
    /// states and max-pool winners. Within a region where it is constant the
    /// network output is a smooth function of the parameters.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let hash_mask = |h: &mut DefaultHasher, a: &Array2<f64>| {
            for v in a.iter() {
                (*v > 0.0).hash(h);
            }
        };
        hash_mask(&mut h, &self.trunk);
        self.global_winner.hash(&mut h);
        if let Some(pool) = &self.context {
            hash_mask(&mut h, &pool.hidden1);
            hash_mask(&mut h, &pool.hidden2);
            pool.winner.iter().for_each(|w| w.hash(&mut h));
        }
        h.finish()
    }
}

pub fn forward(batch: &Batch, params: &NetworkParams) -> Result<Forward> {
    batch.validate(params.use_mcp())?;
    if !params.has_standard_shapes() {
        return Err(Error::Shape("parameter shapes do not match the architecture".into()));
    }
    match &params.context {
        Some(layers) => {
            let ctx = batch.context.as_ref().expect("validated");
            let pool = context_pool(ctx, layers);
            let joined = concatenate![Axis(1), batch.inputs.view(), pool.pooled.view()];
            let mut fwd = head(joined, params);
            fwd.context = Some(pool);
            Ok(fwd)
        }
        None => Ok(head(batch.inputs.clone(), params)),
    }
}

/// Inference from already pooled context features (`N × 200`), as produced
/// by [`context_features`] and [`pool_context`]. The result supports
/// predictions but not [`backward`].
pub fn forward_pooled(
    inputs: ArrayView2<f64>,
    pooled: Option<ArrayView2<f64>>,
    params: &NetworkParams,
) -> Result<Forward> {
    if !params.has_standard_shapes() {
        return Err(Error::Shape("parameter shapes do not match the architecture".into()));
    }
    if inputs.nrows() == 0 || inputs.ncols() != INPUT_DIM {
        return Err(Error::Shape(format!("inputs must be N x {INPUT_DIM}, N >= 1")));
    }
    let trunk_in = match (params.use_mcp(), pooled) {
        (true, Some(p)) if p.dim() == (inputs.nrows(), FEATURE_DIM) => {
            concatenate![Axis(1), inputs, p]
        }
        (false, None) => inputs.to_owned(),
        _ => return Err(Error::Shape("pooled context does not match the network".into())),
    };
    let mut fwd = head(trunk_in, params);
    fwd.pooled_only = true;
    Ok(fwd)
}

fn head(trunk_in: Array2<f64>, params: &NetworkParams) -> Forward {
    let n = trunk_in.nrows();
    let mut trunk = affine(trunk_in.view(), &params.trunk);
    relu_inplace(&mut trunk);

    let mut embeddings = affine(trunk.view(), &params.embed);
    let mut embed_norm = Array1::zeros(n);
    for (mut row, norm) in embeddings.rows_mut().into_iter().zip(embed_norm.iter_mut()) {
        let r = row.dot(&row).sqrt().max(NORM_FLOOR);
        *norm = r;
        row.mapv_inplace(|v| v / r);
    }

    let mut global = Array1::from_elem(FEATURE_DIM, f64::NEG_INFINITY);
    let mut global_winner = vec![0usize; FEATURE_DIM];
    for (i, row) in trunk.rows().into_iter().enumerate() {
        for k in 0..FEATURE_DIM {
            if row[k] > global[k] {
                global[k] = row[k];
                global_winner[k] = i;
            }
        }
    }

    let mut head_in = Array2::zeros((n, EMBED_DIM + FEATURE_DIM));
    head_in.slice_mut(s![.., ..EMBED_DIM]).assign(&embeddings);
    head_in
        .slice_mut(s![.., EMBED_DIM..])
        .assign(&global.broadcast((n, FEATURE_DIM)).unwrap());

    let logits = affine(head_in.view(), &params.classify);
    let probs = softmax(logits.view());

    Forward {
        embeddings,
        logits,
        probs,
        context: None,
        pooled_only: false,
        trunk_in,
        trunk,
        embed_norm,
        global_winner,
        head_in,
    }
}

fn dense_grad(d_out: &Array2<f64>, input: ArrayView2<f64>) -> Dense {
    Dense {
        weight: d_out.t().dot(&input),
        bias: d_out.sum_axis(Axis(0)),
    }
}

fn relu_backward(grad: &mut Array2<f64>, activated: &Array2<f64>) {
    Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Gradient of `CE + lambda * triplet` with respect to every parameter.
///
/// Max pools route the gradient to their recorded winner; ReLU passes
/// gradient only where its output is positive.
pub fn backward(
    batch: &Batch,
    params: &NetworkParams,
    fwd: &Forward,
    loss: &LossConfig,
) -> Result<(Gradients, LossValues)> {
    let n = batch.len();
    if fwd.logits.nrows() != n {
        return Err(Error::Shape("forward pass belongs to a different batch".into()));
    }
    if fwd.pooled_only {
        return Err(Error::Shape("forward pass from pooled features has no gradient cache".into()));
    }
    let classification = loss_classification(fwd.logits.view(), &batch.gt_class);
    let (triplet, d_emb_triplet) =
        triplet_semihard_grad(fwd.embeddings.view(), &batch.gt_instance, loss.margin);

    // softmax cross-entropy
    let mut d_logits = fwd.probs.clone();
    for (i, &c) in batch.gt_class.iter().enumerate() {
        d_logits[[i, c]] -= 1.0;
    }
    d_logits.mapv_inplace(|v| v / n as f64);

    let classify = dense_grad(&d_logits, fwd.head_in.view());
    let d_head = d_logits.dot(&params.classify.weight);

    let mut d_emb = d_head.slice(s![.., ..EMBED_DIM]).to_owned();
    d_emb.scaled_add(loss.lambda, &d_emb_triplet);
    let d_global = d_head.slice(s![.., EMBED_DIM..]).sum_axis(Axis(0));

    // row normalization: e = r / |r|  =>  dr = (de - e (e . de)) / |r|
    let mut d_raw = d_emb;
    for ((mut dr, e), &norm) in d_raw
        .rows_mut()
        .into_iter()
        .zip(fwd.embeddings.rows())
        .zip(fwd.embed_norm.iter())
    {
        let proj = dr.dot(&e);
        dr.zip_mut_with(&e, |d, &ev| *d = (*d - ev * proj) / norm);
    }

    let embed = dense_grad(&d_raw, fwd.trunk.view());
    let mut d_trunk = d_raw.dot(&params.embed.weight);
    for (k, &i) in fwd.global_winner.iter().enumerate() {
        d_trunk[[i, k]] += d_global[k];
    }
    relu_backward(&mut d_trunk, &fwd.trunk);
    let trunk = dense_grad(&d_trunk, fwd.trunk_in.view());

    let context = match (&params.context, &fwd.context) {
        (Some(layers), Some(pool)) => {
            let ctx = batch.context.as_ref().expect("validated");
            let d_in = d_trunk.dot(&params.trunk.weight);
            let d_pooled = d_in.slice(s![.., INPUT_DIM..]);
            let mut d_hidden2 = Array2::zeros(pool.hidden2.raw_dim());
            for i in 0..n {
                for k in 0..FEATURE_DIM {
                    d_hidden2[[pool.winner[[i, k]] as usize, k]] += d_pooled[[i, k]];
                }
            }
            relu_backward(&mut d_hidden2, &pool.hidden2);
            let layer2 = dense_grad(&d_hidden2, pool.hidden1.view());
            let mut d_hidden1 = d_hidden2.dot(&layers.layer2.weight);
            relu_backward(&mut d_hidden1, &pool.hidden1);
            let layer1 = dense_grad(&d_hidden1, ctx.rows().view());
            Some(ContextLayers { layer1, layer2 })
        }
        (None, None) => None,
        _ => return Err(Error::Shape("forward pass used a different variant".into())),
    };

    let grads = NetworkParams {
        context,
        trunk,
        embed,
        classify,
    };
    let values = LossValues {
        classification,
        triplet,
        total: classification + loss.lambda * triplet,
    };
    Ok((grads, values))
}

/// Joint loss of a batch without computing gradients.
pub fn evaluate_loss(batch: &Batch, params: &NetworkParams, loss: &LossConfig) -> Result<LossValues> {
    let fwd = forward(batch, params)?;
    let classification = loss_classification(fwd.logits.view(), &batch.gt_class);
    let triplet =
        super::loss::loss_triplet_semihard(fwd.embeddings.view(), &batch.gt_instance, loss.margin);
    Ok(LossValues {
        classification,
        triplet,
        total: classification + loss.lambda * triplet,
    })
}
