#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use gcnflow::{generate_synthetic, GraphBundle, Splits, SyntheticKind, SyntheticParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random Erdős–Rényi graph with `2..=max_nodes` nodes, Gaussian features
/// and every node in the training split.
pub fn random_graph(seed: u64, max_nodes: usize, num_features: usize, num_classes: usize) -> GraphBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.random_range(2..=max_nodes);
    let p = rng.random_range(0.1..0.8);
    let params = SyntheticParams {
        num_features,
        num_classes,
        signal: 1.0,
        train_fraction: 1.0,
        val_fraction: 0.0,
    };
    generate_synthetic(&SyntheticKind::ErdosRenyi { n, p }, &params, seed).unwrap()
}

pub fn sbm(seed: u64) -> GraphBundle {
    let params = SyntheticParams {
        num_features: 24,
        num_classes: 3,
        signal: 0.6,
        train_fraction: 0.3,
        val_fraction: 0.3,
    };
    let kind = SyntheticKind::StochasticBlock {
        sizes: vec![20, 20, 20],
        p_in: 0.2,
        p_out: 0.02,
    };
    generate_synthetic(&kind, &params, seed).unwrap()
}

/// Graph with explicit edges and all-zero features.
pub fn bare(n: usize, edges: &[(usize, usize)]) -> GraphBundle {
    GraphBundle::new(n, edges, Array2::zeros((1, n)), vec![0; n], 1, Splits::default()).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
