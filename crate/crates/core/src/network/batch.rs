use std::collections::HashMap;

use ndarray::Array2;

use super::INPUT_DIM;
use crate::error::{Error, Result};

/// An `N × M × 6` context tensor stored as a table of distinct rows plus an
/// `N × M` index into that table.
///
/// Neighbouring points share most of their context, so the per-row network
/// work is done once per distinct row. Rows are compared bit-for-bit, which
/// keeps every result identical to evaluating the dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTensor {
    rows: Array2<f64>,
    index: Array2<u32>,
}

impl ContextTensor {
    /// Builds from a dense `n * m` list of rows, point-major.
    pub fn from_dense(n: usize, m: usize, dense: &[[f64; INPUT_DIM]]) -> Result<Self> {
        if m == 0 {
            return Err(Error::Shape("context needs M >= 1".into()));
        }
        if dense.len() != n * m {
            return Err(Error::Shape(format!(
                "context has {} rows, expected {n} x {m}",
                dense.len()
            )));
        }
        let mut builder = ContextBuilder::new(m);
        for chunk in dense.chunks(m) {
            builder.push_point(chunk.iter().copied());
        }
        Ok(builder.finish())
    }

    pub fn n(&self) -> usize {
        self.index.nrows()
    }

    pub fn m(&self) -> usize {
        self.index.ncols()
    }

    /// Distinct context rows, `U × 6`.
    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// `N × M` indices into [`rows`](Self::rows).
    pub fn index(&self) -> &Array2<u32> {
        &self.index
    }

    pub fn row(&self, point: usize, slot: usize) -> [f64; INPUT_DIM] {
        let u = self.index[[point, slot]] as usize;
        std::array::from_fn(|c| self.rows[[u, c]])
    }

    /// Expands back to the dense point-major row list.
    pub fn to_dense(&self) -> Vec<[f64; INPUT_DIM]> {
        (0..self.n())
            .flat_map(|i| (0..self.m()).map(move |j| (i, j)))
            .map(|(i, j)| self.row(i, j))
            .collect()
    }
}

/// Incrementally interns context rows.
#[derive(Debug)]
pub struct ContextBuilder {
    m: usize,
    rows: Vec<[f64; INPUT_DIM]>,
    lookup: HashMap<[u64; INPUT_DIM], u32>,
    index: Vec<u32>,
}

impl ContextBuilder {
    pub fn new(m: usize) -> Self {
        ContextBuilder {
            m,
            rows: Vec::new(),
            lookup: HashMap::new(),
            index: Vec::new(),
        }
    }

    /// Appends one point's `M` context rows.
    pub fn push_point(&mut self, rows: impl IntoIterator<Item = [f64; INPUT_DIM]>) {
        let before = self.index.len();
        for row in rows {
            let bits = row.map(f64::to_bits);
            let next = self.rows.len() as u32;
            let id = *self.lookup.entry(bits).or_insert(next);
            if id == next {
                self.rows.push(row);
            }
            self.index.push(id);
        }
        assert_eq!(self.index.len() - before, self.m, "each point needs exactly M rows");
    }

    pub fn finish(self) -> ContextTensor {
        let n = self.index.len() / self.m;
        let rows = Array2::from_shape_fn((self.rows.len(), INPUT_DIM), |(u, c)| self.rows[u][c]);
        let index = Array2::from_shape_vec((n, self.m), self.index).expect("index shape");
        ContextTensor { rows, index }
    }
}

/// One network batch: `N` normalized points plus optional context.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `N × 6` rows of `(x, y, z, r, g, b)`.
    pub inputs: Array2<f64>,
    pub context: Option<ContextTensor>,
    pub gt_class: Vec<usize>,
    pub gt_instance: Vec<u64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn validate(&self, use_mcp: bool) -> Result<()> {
        let n = self.inputs.nrows();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if self.inputs.ncols() != INPUT_DIM {
            return Err(Error::Shape(format!(
                "inputs have {} columns, expected {INPUT_DIM}",
                self.inputs.ncols()
            )));
        }
        if self.gt_class.len() != n || self.gt_instance.len() != n {
            return Err(Error::Shape("label arrays disagree with batch size".into()));
        }
        if let Some(bad) = self.gt_class.iter().find(|&&c| c >= super::NUM_CLASSES) {
            return Err(Error::Shape(format!("class label {bad} out of range")));
        }
        if use_mcp {
            let ctx = self
                .context
                .as_ref()
                .ok_or_else(|| Error::Shape("context pooling enabled but batch has no context".into()))?;
            if ctx.n() != n {
                return Err(Error::Shape(format!(
                    "context covers {} points, batch has {n}",
                    ctx.n()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_dedups() {
        let a = [1.0, 2.0, 3.0, 0.1, 0.2, 0.3];
        let b = [0.0; 6];
        let dense = vec![a, b, a, a, b, b];
        let ctx = ContextTensor::from_dense(2, 3, &dense).unwrap();
        assert_eq!(ctx.rows().nrows(), 2);
        assert_eq!(ctx.to_dense(), dense);
        assert!(ContextTensor::from_dense(2, 2, &dense).is_err());
        assert!(ContextTensor::from_dense(0, 0, &[]).is_err());
    }
}
