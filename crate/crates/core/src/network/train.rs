use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::batch::Batch;
use super::model::{backward, forward, LossConfig};
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Training hyper-parameters, read from `key=value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_n: usize,
    pub context_m: usize,
    pub margin: f64,
    pub lambda: f64,
    pub seed: u64,
    pub use_mcp: bool,
    /// Write a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.001,
            batch_n: 256,
            context_m: 50,
            margin: 1.0,
            lambda: 1.0,
            seed: 0,
            use_mcp: true,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            lambda: self.lambda,
        }
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected key=value"))?;
            self.set(key.trim(), value.trim())
                .map_err(|m| Error::parse(origin, idx + 1, m))?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse().map_err(|_| format!("bad value '{value}' for {key}"))
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "N" | "batch_n" => self.batch_n = num(key, value)?,
            "M" | "context_m" => self.context_m = num(key, value)?,
            "alpha" | "margin" => self.margin = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "use_mcp" => self.use_mcp = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Validation("lr must be positive".into()));
        }
        if self.batch_n < 2 {
            return Err(Error::Validation("batch size must be at least 2".into()));
        }
        if self.context_m < 1 {
            return Err(Error::Validation("context count must be at least 1".into()));
        }
        if !(self.margin >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Validation("margin and lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "epochs={}\nlr={}\nN={}\nM={}\nalpha={}\nlambda={}\nseed={}\nuse_mcp={}\ncheckpoint_every={}\n",
            self.epochs,
            self.lr,
            self.batch_n,
            self.context_m,
            self.margin,
            self.lambda,
            self.seed,
            self.use_mcp,
            self.checkpoint_every
        )
    }
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub classification: f64,
    pub triplet: f64,
    pub total: f64,
    /// Fraction of rows whose argmax matched the label during the epoch.
    pub accuracy: f64,
}

pub fn loss_history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,classification,triplet,total,accuracy\n");
    for e in history {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            e.epoch, e.classification, e.triplet, e.total, e.accuracy
        );
    }
    out
}

/// Weights, optimizer state and progress of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig) -> Self {
        let params = NetworkParams::init(config.use_mcp, derive_seed(config.seed, &[0x1417]));
        let adam = AdamState::new(&params, config.lr);
        TrainState {
            params,
            adam,
            epochs_completed: 0,
        }
    }
}

/// Runs `config.epochs` further epochs over `batches`, shuffling batch order
/// each epoch with a stream derived from the seed and the absolute epoch
/// number (so resumed runs replay the same order).
///
/// `on_epoch` sees the state after every epoch; use it for checkpoints.
pub fn train(
    batches: &[Batch],
    config: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&TrainState, &EpochStats) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if batches.is_empty() {
        return Err(Error::Validation("training set has no batches".into()));
    }
    if state.params.use_mcp() != config.use_mcp {
        return Err(Error::Validation(
            "checkpoint and config disagree on context pooling".into(),
        ));
    }
    let loss = config.loss();
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    for _ in 0..config.epochs {
        let epoch = state.epochs_completed;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0xE90C, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let (mut ce, mut tri, mut tot) = (0.0, 0.0, 0.0);
        let (mut correct, mut rows) = (0usize, 0usize);
        for &b in &order {
            let batch = &batches[b];
            let fwd = forward(batch, &state.params)?;
            correct += fwd
                .predictions()
                .iter()
                .zip(&batch.gt_class)
                .filter(|(p, g)| p == g)
                .count();
            rows += batch.len();
            let (grads, values) = backward(batch, &state.params, &fwd, &loss)?;
            adam_step(&mut state.params, &grads, &mut state.adam)?;
            ce += values.classification;
            tri += values.triplet;
            tot += values.total;
        }
        state.epochs_completed += 1;
        let count = batches.len() as f64;
        let stats = EpochStats {
            epoch,
            classification: ce / count,
            triplet: tri / count,
            total: tot / count,
            accuracy: correct as f64 / rows as f64,
        };
        if !state.params.is_finite() {
            return Err(Error::Internal(format!("non-finite weights after epoch {epoch}")));
        }
        on_epoch(state, &stats)?;
        history.push(stats);
    }
    Ok(history)
}
