//! Independent reference computations, written directly from the defining
//! formulas with dense loops.

use gcnflow::GraphBundle;
use ndarray::Array2;

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` built densely from the undirected edge list.
pub fn dense_propagation(graph: &GraphBundle) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut a = Array2::<f64>::eye(n);
    for (u, v) in graph.adjacency().undirected_edges() {
        a[[u, v]] = 1.0;
        a[[v, u]] = 1.0;
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt())
}

/// `Σ_i Σ_j (d_i + 1)(d_j + 1)`, literally.
pub fn s2_double_sum(degrees: &[usize]) -> u128 {
    let mut total = 0u128;
    for &di in degrees {
        for &dj in degrees {
            total += (di as u128 + 1) * (dj as u128 + 1);
        }
    }
    total
}

/// `Tr(X (I − Â) Xᵀ)` with the dense oracle operator.
pub fn dense_energy(x: &Array2<f64>, graph: &GraphBundle) -> f64 {
    let n = graph.num_nodes();
    let lap = Array2::<f64>::eye(n) - dense_propagation(graph);
    x.dot(&lap).dot(&x.t()).diag().sum()
}
