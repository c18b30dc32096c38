//! Graph representation, degree statistics, and the normalized propagation
//! operator `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
//!
//! Node features follow the channels-by-nodes convention: a `C × N` matrix
//! whose column `i` is the feature vector of node `i`. Propagation is a right
//! multiplication `X · Â`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Symmetric adjacency in CSR form. Neighbor lists are sorted, contain no
/// duplicates and no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    /// Builds a symmetric adjacency from an arbitrary edge list. Each pair is
    /// treated as undirected; duplicates collapse and self-loops are dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u != v {
                pairs.push((u, v));
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut indptr = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            indptr[u + 1] += 1;
        }
        for i in 0..num_nodes {
            indptr[i + 1] += indptr[i];
        }
        let indices = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Self { indptr, indices })
    }

    pub fn num_nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.indices[self.indptr[node]..self.indptr[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.indptr[node + 1] - self.indptr[node]
    }

    /// Number of stored ordered pairs; twice the undirected edge count.
    pub fn num_directed_edges(&self) -> usize {
        self.indices.len()
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.indices.len() / 2
    }

    /// Undirected edges as `(u, v)` with `u < v`, in sorted order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|u| {
                self.neighbors(u)
                    .iter()
                    .copied()
                    .filter(move |&v| u < v)
                    .map(move |v| (u, v))
            })
            .collect()
    }
}

/// Transductive train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= num_nodes {
                    return Err(Error::InvalidGraph(format!(
                        "{name} split index {i} out of range for {num_nodes} nodes"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidGraph(format!(
                        "node {i} appears twice across splits ({name})"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// Immutable graph with node features, labels and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    adjacency: Adjacency,
    degrees: Vec<usize>,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Splits,
}

impl GraphBundle {
    /// `features` is `C × N` (one column per node).
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let adjacency = Adjacency::from_edges(num_nodes, edges)?;
        Self::from_adjacency(adjacency, features, labels, num_classes, splits)
    }

    pub fn from_adjacency(
        adjacency: Adjacency,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let n = adjacency.num_nodes();
        if features.ncols() != n {
            return Err(Error::shape("graph features", format!("{n} columns"), features.ncols()));
        }
        if labels.len() != n {
            return Err(Error::shape("graph labels", n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        splits.validate(n)?;
        let degrees = (0..n).map(|i| adjacency.degree(i)).collect();
        Ok(Self {
            adjacency,
            degrees,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Raw degrees; the self-loop is not counted.
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    /// Returns a copy of this graph with nodes relabelled: old node `i`
    /// becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != n || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::InvalidGraph("not a permutation".into()));
        }
        let edges: Vec<_> = self
            .adjacency
            .undirected_edges()
            .into_iter()
            .map(|(u, v)| (perm[u], perm[v]))
            .collect();
        let mut features = Array2::zeros(self.features.raw_dim());
        let mut labels = vec![0; n];
        for i in 0..n {
            features.column_mut(perm[i]).assign(&self.features.column(i));
            labels[perm[i]] = self.labels[i];
        }
        let map = |s: &[usize]| s.iter().map(|&i| perm[i]).collect::<Vec<_>>();
        let splits = Splits {
            train: map(&self.splits.train),
            val: map(&self.splits.val),
            test: map(&self.splits.test),
        };
        GraphBundle::new(n, &edges, features, labels, self.num_classes, splits)
    }
}

/// Degree sums used by the isometric initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeStats {
    /// `Σ_i (d_i + 1)`
    pub s1: u128,
    /// `Σ_{i,j} (d_i + 1)(d_j + 1)`
    pub s2: u128,
}

impl DegreeStats {
    pub fn s1_f64(&self) -> f64 {
        self.s1 as f64
    }

    pub fn s2_f64(&self) -> f64 {
        self.s2 as f64
    }
}

/// The double sum over node pairs factorizes as `(Σ_i (d_i + 1))²`.
pub fn degree_sum_statistics(graph: &GraphBundle) -> DegreeStats {
    let s1: u128 = graph.degrees().iter().map(|&d| d as u128 + 1).sum();
    DegreeStats { s1, s2: s1 * s1 }
}

/// Square sparse matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }
}

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`, symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    matrix: CsrMatrix,
}

impl PropagationOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.dim()
    }
}

pub fn build_propagation_operator(graph: &GraphBundle) -> PropagationOperator {
    let adj = graph.adjacency();
    let n = adj.num_nodes();
    let deg = graph.degrees();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(adj.num_directed_edges() + n);
    let mut values = Vec::with_capacity(adj.num_directed_edges() + n);
    indptr.push(0);
    for i in 0..n {
        let nbrs = adj.neighbors(i);
        // Self-loop slots into sorted position.
        let split = nbrs.partition_point(|&j| j < i);
        let ordered = nbrs[..split]
            .iter()
            .chain(std::iter::once(&i))
            .chain(nbrs[split..].iter());
        for &j in ordered {
            indices.push(j);
            values.push(if i == j {
                1.0 / (deg[i] + 1) as f64
            } else {
                1.0 / (((deg[i] + 1) * (deg[j] + 1)) as f64).sqrt()
            });
        }
        indptr.push(indices.len());
    }
    PropagationOperator {
        matrix: CsrMatrix {
            indptr,
            indices,
            values,
        },
    }
}

/// `dense · Â` for a `C × N` dense matrix.
pub fn spmm(op: &PropagationOperator, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = op.num_nodes();
    if dense.ncols() != n {
        return Err(Error::shape("spmm", format!("{n} columns"), dense.ncols()));
    }
    let m = &op.matrix;
    let mut out = Array2::zeros((dense.nrows(), n));
    // Â is symmetric, so column j of Â is row j of the CSR.
    for (src, mut dst) in dense.outer_iter().zip(out.outer_iter_mut()) {
        for j in 0..n {
            let mut acc = 0.0;
            for k in m.indptr[j]..m.indptr[j + 1] {
                acc += src[m.indices[k]] * m.values[k];
            }
            dst[j] = acc;
        }
    }
    Ok(out)
}
