//! Dense kernels used by the GCN forward and backward passes.
//!
//! Dense products go through ndarray (single-threaded `matrixmultiply`, so
//! accumulation order is fixed). Layer inputs that are mostly zeros, such as
//! bag-of-words node features, additionally carry a row-compressed view so
//! that the two products involving them skip the zeros.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// Inputs below this fraction of nonzeros use the sparse product kernels.
pub const SPARSE_DENSITY: f64 = 0.2;

/// Elementwise `max(x, 0)` with the mask of strictly positive entries.
pub fn relu(x: &Array2<f64>) -> (Array2<f64>, Array2<bool>) {
    let mask = x.mapv(|v| v > 0.0);
    let out = x.mapv(|v| if v > 0.0 { v } else { 0.0 });
    (out, mask)
}

/// Mean softmax cross-entropy over the columns in `index`, and its gradient
/// with respect to `logits` (zero outside `index`).
///
/// `logits` is `K × N`: one column of class scores per node.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    index: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if index.is_empty() {
        return Err(Error::EmptyIndexSet("softmax_cross_entropy"));
    }
    let (k, n) = logits.dim();
    if labels.len() != n {
        return Err(Error::shape("softmax_cross_entropy labels", n, labels.len()));
    }
    let scale = 1.0 / index.len() as f64;
    let mut grad = Array2::zeros((k, n));
    let mut loss = 0.0;
    for &i in index {
        if i >= n {
            return Err(Error::shape("softmax_cross_entropy index", format!("< {n}"), i));
        }
        let y = labels[i];
        if y >= k {
            return Err(Error::shape("softmax_cross_entropy label", format!("< {k}"), y));
        }
        let col = logits.column(i);
        let max = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = col.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss -= col[y] - log_norm;
        let mut g = grad.column_mut(i);
        for c in 0..k {
            g[c] = (col[c] - log_norm).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Column-wise argmax; ties resolve to the lowest class index.
pub fn argmax_columns(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (c, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Inverted dropout. Returns the scaled mask (`0` or `1/(1-rate)`), which is
/// also the derivative of the output with respect to the input.
pub fn dropout<R: Rng + ?Sized>(x: &Array2<f64>, rate: f64, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.random_bool(keep) { scale } else { 0.0 });
    (x * &mask, mask)
}

/// Row-compressed view of a dense matrix's nonzeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparse {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RowSparse {
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (nrows, ncols) = dense.dim();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.outer_iter() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

fn density(dense: ArrayView2<'_, f64>) -> f64 {
    let total = dense.len();
    if total == 0 {
        return 1.0;
    }
    dense.iter().filter(|&&v| v != 0.0).count() as f64 / total as f64
}

/// The input matrix `U` of one GCN layer (`C × N`), kept dense and, when
/// sparse enough, also row-compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInput {
    dense: Array2<f64>,
    sparse: Option<RowSparse>,
}

impl LayerInput {
    pub fn new(dense: Array2<f64>) -> Self {
        let sparse = (density(dense.view()) < SPARSE_DENSITY).then(|| RowSparse::from_dense(dense.view()));
        Self { dense, sparse }
    }

    pub fn dense(&self) -> &Array2<f64> {
        &self.dense
    }

    pub fn is_sparse(&self) -> bool {
        self.sparse.is_some()
    }

    /// `w · U` for `w` of shape `C' × C`.
    pub fn left_mul(&self, w: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.sparse {
            None => w.dot(&self.dense),
            Some(u) => {
                // Accumulate (w·U)ᵀ row by row: row i gathers w[:, c]·U[c, i].
                let wt = w.t().as_standard_layout().into_owned();
                let mut out_t = Array2::zeros((u.ncols, w.nrows()));
                for c in 0..u.nrows {
                    let wc = wt.row(c);
                    for (i, v) in u.row(c) {
                        Zip::from(out_t.row_mut(i)).and(&wc).for_each(|o, &x| *o += v * x);
                    }
                }
                out_t.t().as_standard_layout().into_owned()
            }
        }
    }

    /// `p · Uᵀ` for `p` of shape `C' × N`.
    pub fn right_mul_transposed(&self, p: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.sparse {
            None => p.dot(&self.dense.t()),
            Some(u) => {
                let pt = p.t().as_standard_layout().into_owned();
                let mut out_t = Array2::zeros((u.nrows, p.nrows()));
                for c in 0..u.nrows {
                    let mut dst = out_t.row_mut(c);
                    for (i, v) in u.row(c) {
                        Zip::from(&mut dst).and(pt.row(i)).for_each(|o, &x| *o += v * x);
                    }
                }
                out_t.t().as_standard_layout().into_owned()
            }
        }
    }
}

/// Frobenius inner product `Σ a_ij b_ij`.
pub fn frobenius_dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}
