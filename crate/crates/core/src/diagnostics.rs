//! Gradient flow and Dirichlet energy.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gcn::GradientSet;
use crate::graph::{spmm, GraphBundle, PropagationOperator};
use crate::linalg::frobenius_dot;

/// Per-layer gradient norms `‖gₗ‖_p` and their mean `GF_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub per_layer: Vec<f64>,
    pub mean_flow: f64,
    pub p: f64,
}

impl FlowReport {
    pub fn from_per_layer(per_layer: Vec<f64>, p: f64) -> Self {
        let mean_flow = per_layer.iter().sum::<f64>() / per_layer.len().max(1) as f64;
        Self { per_layer, mean_flow, p }
    }

    /// `min_l ‖gₗ‖ / max_l ‖gₗ‖`; 1 means perfectly even flow across layers.
    pub fn uniformity(&self) -> f64 {
        let max = self.per_layer.iter().copied().fold(0.0, f64::max);
        let min = self.per_layer.iter().copied().fold(f64::INFINITY, f64::min);
        if max > 0.0 {
            min / max
        } else {
            0.0
        }
    }
}

pub fn gradient_flow(grads: &GradientSet, p: f64) -> Result<FlowReport> {
    if grads.is_empty() {
        return Err(Error::EmptyIndexSet("gradient_flow"));
    }
    if !(p >= 1.0) {
        return Err(Error::Config(format!("norm order {p} must be >= 1")));
    }
    let per_layer = grads.weights.iter().map(|g| entrywise_norm(g.view(), p)).collect();
    Ok(FlowReport::from_per_layer(per_layer, p))
}

fn entrywise_norm(g: ArrayView2<'_, f64>, p: f64) -> f64 {
    if p == 1.0 {
        g.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else if p.is_infinite() {
        g.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        g.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Dirichlet energy of each layer's output, first hidden layer to logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub per_layer: Vec<f64>,
}

/// `½ Σ_{(i,j)} ‖xᵢ/√(1+dᵢ) − xⱼ/√(1+dⱼ)‖²` over ordered edge pairs, for a
/// `C × N` feature matrix.
pub fn dirichlet_energy(x: &Array2<f64>, graph: &GraphBundle) -> Result<f64> {
    let n = graph.num_nodes();
    if x.ncols() != n {
        return Err(Error::shape("dirichlet_energy", format!("{n} columns"), x.ncols()));
    }
    let scale: Vec<f64> = graph
        .degrees()
        .iter()
        .map(|&d| 1.0 / ((d + 1) as f64).sqrt())
        .collect();
    // Row-major access per node pair would stride; work on the transpose.
    let xt = x.t().as_standard_layout().into_owned();
    let adj = graph.adjacency();
    let mut total = 0.0;
    for i in 0..n {
        let xi = xt.row(i);
        for &j in adj.neighbors(i) {
            let xj = xt.row(j);
            total += xi
                .iter()
                .zip(xj.iter())
                .map(|(a, b)| {
                    let d = a * scale[i] - b * scale[j];
                    d * d
                })
                .sum::<f64>();
        }
    }
    Ok(0.5 * total)
}

/// Trace form `Tr(X L Xᵀ)` with `L = I − Â = D̃^{-1/2}(D − A)D̃^{-1/2}`.
pub fn dirichlet_energy_trace(x: &Array2<f64>, op: &PropagationOperator) -> Result<f64> {
    let propagated = spmm(op, x.view())?;
    Ok(frobenius_dot(x, x) - frobenius_dot(x, &propagated))
}

/// Energies of the hidden outputs followed by the logits.
pub fn layer_energies(hidden: &[Array2<f64>], logits: &Array2<f64>, graph: &GraphBundle) -> Result<EnergyReport> {
    let per_layer = hidden
        .iter()
        .chain(std::iter::once(logits))
        .map(|h| dirichlet_energy(h, graph))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyReport { per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Splits;
    use ndarray::array;

    fn bare(n: usize, edges: &[(usize, usize)]) -> GraphBundle {
        GraphBundle::new(n, edges, Array2::zeros((1, n)), vec![0; n], 1, Splits::default()).unwrap()
    }

    fn grads(ws: Vec<Array2<f64>>) -> GradientSet {
        GradientSet { weights: ws, biases: None }
    }

    #[test]
    fn flow_three_four_five() {
        let r = gradient_flow(&grads(vec![array![[3.0, 4.0]]]), 2.0).unwrap();
        assert_eq!(r.per_layer, vec![5.0]);
        assert_eq!(r.mean_flow, 5.0);
    }

    #[test]
    fn flow_mean_over_layers() {
        let r = gradient_flow(&grads(vec![array![[3.0, 4.0]], array![[0.0, 0.0]]]), 2.0).unwrap();
        assert_eq!(r.mean_flow, 2.5);
    }

    #[test]
    fn flow_l1_norm() {
        let r = gradient_flow(&grads(vec![array![[1.0, -2.0]]]), 1.0).unwrap();
        assert_eq!(r.per_layer, vec![3.0]);
        assert_eq!(r.mean_flow, 3.0);
    }

    #[test]
    fn flow_rejects_empty_and_bad_order() {
        assert!(gradient_flow(&grads(vec![]), 2.0).is_err());
        assert!(gradient_flow(&grads(vec![array![[1.0]]]), 0.5).is_err());
    }

    #[test]
    fn energy_constant_on_triangle() {
        let g = bare(3, &[(0, 1), (1, 2), (2, 0)]);
        let x = Array2::from_elem((4, 3), 2.5);
        assert!(dirichlet_energy(&x, &g).unwrap().abs() < 1e-15);
    }

    #[test]
    fn energy_two_node_path() {
        let g = bare(2, &[(0, 1)]);
        let e = dirichlet_energy(&array![[1.0, 0.0]], &g).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn energy_three_node_path_center_spike() {
        let g = bare(3, &[(0, 1), (1, 2)]);
        let e = dirichlet_energy(&array![[0.0, 1.0, 0.0]], &g).unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn energy_shape_mismatch() {
        let g = bare(2, &[(0, 1)]);
        assert!(dirichlet_energy(&array![[1.0, 0.0, 3.0]], &g).is_err());
    }

    #[test]
    fn uniformity_ratio() {
        let r = FlowReport::from_per_layer(vec![1.0, 4.0, 2.0], 2.0);
        assert_eq!(r.uniformity(), 0.25);
    }
}
