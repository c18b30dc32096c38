//! Deep vanilla-GCN training lab.
//!
//! A dense, 64-bit GCN with a hand-written backward pass, built to study why
//! deep GCNs fail to train and what fixes them:
//!
//! - [`init`]: Glorot and isometric (degree-normalized) weight initialization.
//! - [`diagnostics`]: per-layer gradient flow and Dirichlet energy.
//! - [`rewiring`]: skip connections switched on when a layer's gradient decays.
//! - [`train`]: full-batch Adam training with metric logging.
//! - [`data`]: on-disk dataset bundles and synthetic graphs.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod init;
pub mod linalg;
pub mod model;
pub mod rewiring;
pub mod train;

pub use data::{generate_synthetic, load_bundle, save_bundle, BundleManifest, SyntheticKind, SyntheticParams};
pub use diagnostics::{dirichlet_energy, dirichlet_energy_trace, gradient_flow, EnergyReport, FlowReport};
pub use error::{Error, Result};
pub use gcn::{gcn_backward, gcn_forward, ForwardMode, GradientSet, TapeCache};
pub use graph::{build_propagation_operator, degree_sum_statistics, spmm, GraphBundle, PropagationOperator, Splits};
pub use init::{initialize, iso_magnitude, iso_uniform_bound, InitKind, InitScheme};
pub use model::{build_model, Architecture, ModelState, SkipMode, SkipSource};
pub use rewiring::RewiringState;
pub use train::{evaluate, train, TrainConfig, TrainOutcome};
