//! Weight initializers: Glorot uniform and the topology-aware isometric
//! family, whose scale is tied to the degree sums of the graph.
//!
//! For a layer `W ∈ R^{C'×C}` the isometric target is that every column has
//! squared norm `N² / Σ_{i,j}(d_i+1)(d_j+1)` and distinct columns are
//! orthogonal. The i.i.d. variants hit the per-entry variance
//! `Σ² = N² / (C' · S2)`; the orthogonal variant satisfies both column
//! conditions exactly.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{degree_sum_statistics, GraphBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GlorotUniform,
    IsoUniform,
    IsoGaussian,
    IsoOrthogonal,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::GlorotUniform => "glorot_uniform",
            InitKind::IsoUniform => "iso_uniform",
            InitKind::IsoGaussian => "iso_gaussian",
            InitKind::IsoOrthogonal => "iso_orthogonal",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    /// Accepts both the long names and the short CLI spellings.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot" | "glorot_uniform" => Ok(InitKind::GlorotUniform),
            "iso" | "iso_uniform" => Ok(InitKind::IsoUniform),
            "iso-gauss" | "iso_gaussian" => Ok(InitKind::IsoGaussian),
            "iso-ortho" | "iso_orthogonal" => Ok(InitKind::IsoOrthogonal),
            other => Err(Error::Config(format!("unknown init scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

/// Target squared column norm `N² / S2`.
pub fn iso_magnitude(graph: &GraphBundle) -> f64 {
    let n = graph.num_nodes() as f64;
    n * n / degree_sum_statistics(graph).s2_f64()
}

/// Per-entry variance `Σ² = N² / (C' · S2)`.
pub fn iso_variance(graph: &GraphBundle, out_dim: usize) -> f64 {
    iso_magnitude(graph) / out_dim as f64
}

/// Half-width `b = √(3N² / (C' · S2))` of the isometric uniform law, whose
/// variance `b²/3` equals [`iso_variance`].
pub fn iso_uniform_bound(graph: &GraphBundle, out_dim: usize) -> f64 {
    (3.0 * iso_variance(graph, out_dim)).sqrt()
}

pub fn glorot_bound(out_dim: usize, in_dim: usize) -> f64 {
    (6.0 / (out_dim + in_dim) as f64).sqrt()
}

/// Draws a `out_dim × in_dim` weight matrix.
pub fn initialize<R: Rng + ?Sized>(
    out_dim: usize,
    in_dim: usize,
    kind: InitKind,
    graph: &GraphBundle,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if out_dim == 0 || in_dim == 0 {
        return Err(Error::Config(format!("invalid weight shape {out_dim}x{in_dim}")));
    }
    let shape = (out_dim, in_dim);
    let w = match kind {
        InitKind::GlorotUniform => uniform(shape, glorot_bound(out_dim, in_dim), rng),
        InitKind::IsoUniform => uniform(shape, iso_uniform_bound(graph, out_dim), rng),
        InitKind::IsoGaussian => {
            let normal = Normal::new(0.0, iso_variance(graph, out_dim).sqrt())
                .map_err(|e| Error::Config(e.to_string()))?;
            Array2::from_shape_simple_fn(shape, || normal.sample(rng))
        }
        InitKind::IsoOrthogonal => {
            if out_dim < in_dim {
                return Err(Error::OrthogonalShape { out_dim, in_dim });
            }
            let mut w = Array2::from_shape_simple_fn(shape, || rng.sample(rand_distr::StandardNormal));
            orthonormalize_columns(&mut w);
            w *= iso_magnitude(graph).sqrt();
            w
        }
    };
    Ok(w)
}

fn uniform<R: Rng + ?Sized>(shape: (usize, usize), bound: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

/// Modified Gram-Schmidt over columns, run twice so the result is orthogonal
/// to working precision. Requires `nrows >= ncols` and full column rank,
/// which holds almost surely for Gaussian draws.
fn orthonormalize_columns(w: &mut Array2<f64>) {
    let cols = w.ncols();
    for _pass in 0..2 {
        for k in 0..cols {
            for j in 0..k {
                let (done, mut rest) = w.view_mut().split_at(Axis(1), k);
                let qj = done.column(j);
                let mut vk = rest.column_mut(0);
                let proj = qj.dot(&vk);
                vk.scaled_add(-proj, &qj);
            }
            let mut vk = w.column_mut(k);
            let norm = vk.dot(&vk).sqrt();
            vk /= norm;
        }
    }
}
