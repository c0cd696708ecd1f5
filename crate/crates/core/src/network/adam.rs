use ndarray::Zip;

use super::params::{Gradients, NetworkParams};
use crate::error::{Error, Result};

/// Bias-corrected ADAM with per-parameter moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: NetworkParams,
    pub second: NetworkParams,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }
}

pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let shapes_match = |a: &NetworkParams, b: &NetworkParams| {
        let (la, lb) = (a.layers(), b.layers());
        la.len() == lb.len()
            && la
                .iter()
                .zip(&lb)
                .all(|((_, x), (_, y))| x.weight.dim() == y.weight.dim() && x.bias.dim() == y.bias.dim())
    };
    if !shapes_match(params, grads) || !shapes_match(params, &state.first) {
        return Err(Error::Shape("gradient or moment shapes differ from parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let grads = grads.layers();
    let mut first = state.first.layers_mut();
    let mut second = state.second.layers_mut();
    for (i, (_, layer)) in params.layers_mut().into_iter().enumerate() {
        let g = grads[i].1;
        let m = &mut first[i].1;
        let v = &mut second[i].1;
        Zip::from(&mut layer.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(|w, &g, m, v| update(w, g, m, v, b1, b2, c1, c2, lr, eps));
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|w, &g, m, v| update(w, g, m, v, b1, b2, c1, c2, lr, eps));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(w: &mut f64, g: f64, m: &mut f64, v: &mut f64, b1: f64, b2: f64, c1: f64, c2: f64, lr: f64, eps: f64) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *w -= lr * m_hat / (v_hat.sqrt() + eps);
}
