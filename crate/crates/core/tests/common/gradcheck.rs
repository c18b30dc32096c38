//! Central finite-difference check of the manual backward pass.

use gcnflow::gcn::{gcn_backward, gcn_forward, ForwardMode, TapeCache};
use gcnflow::graph::{build_propagation_operator, GraphBundle, PropagationOperator};
use gcnflow::linalg::softmax_cross_entropy;
use gcnflow::model::{build_model, Architecture, ModelState, SkipMode, SkipSource};
use gcnflow::{InitKind, InitScheme};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Relative errors are taken against at least this magnitude. Central
/// differences at `H` carry absolute noise near 1e-11, which would swamp
/// the ratio on entries much smaller than this.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

pub struct Case {
    pub graph: GraphBundle,
    pub op: PropagationOperator,
    pub dropout: f64,
    pub dropout_seed: u64,
}

impl Case {
    fn run(&self, model: &ModelState) -> (f64, Array2<f64>, TapeCache) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let mode = ForwardMode::Train {
            dropout: self.dropout,
            rng: &mut rng,
        };
        let (logits, tape) = gcn_forward(model, &self.op, self.graph.features(), mode).unwrap();
        let (loss, dlogits) =
            softmax_cross_entropy(&logits, self.graph.labels(), &self.graph.splits().train).unwrap();
        (loss, dlogits, tape)
    }
}

fn same_activation_pattern(a: &TapeCache, b: &TapeCache) -> bool {
    (0..a.depth().saturating_sub(1)).all(|l| a.relu_mask(l) == b.relu_mask(l))
}

/// Returns the max relative error over all weight and bias entries and the
/// number of entries skipped because the perturbation crossed a ReLU kink.
pub fn check(case: &Case, model: &ModelState) -> (f64, usize, usize) {
    let (_, dlogits, tape) = case.run(model);
    let grads = gcn_backward(model, &case.op, &tape, &dlogits).unwrap();
    let mut worst = 0.0f64;
    let mut skipped = 0;
    let mut checked = 0;
    let mut compare = |analytic: f64, plus: (f64, TapeCache), minus: (f64, TapeCache)| {
        if !same_activation_pattern(&plus.1, &tape) || !same_activation_pattern(&minus.1, &tape) {
            skipped += 1;
            return;
        }
        checked += 1;
        let numeric = (plus.0 - minus.0) / (2.0 * H);
        let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
        worst = worst.max((analytic - numeric).abs() / scale);
    };

    for l in 0..model.num_layers() {
        let (rows, cols) = model.weights()[l].dim();
        for r in 0..rows {
            for c in 0..cols {
                let shifted = |delta: f64| {
                    let mut m = model.clone();
                    m.weights_mut()[l][[r, c]] += delta;
                    let (loss, _, tape) = case.run(&m);
                    (loss, tape)
                };
                let plus = shifted(H);
                let minus = shifted(-H);
                compare(grads.weights[l][[r, c]], plus, minus);
            }
        }
        if let Some(bias_grads) = &grads.biases {
            for k in 0..bias_grads[l].len() {
                let shifted = |delta: f64| {
                    let mut m = model.clone();
                    m.biases_mut().unwrap()[l][k] += delta;
                    let (loss, _, tape) = case.run(&m);
                    (loss, tape)
                };
                let plus = shifted(H);
                let minus = shifted(-H);
                compare(bias_grads[l][k], plus, minus);
            }
        }
    }
    (worst, checked, skipped)
}

pub fn model_for(
    graph: &GraphBundle,
    layers: usize,
    hidden: usize,
    seed: u64,
    mode: SkipMode,
    source: SkipSource,
    bias: bool,
) -> ModelState {
    let arch = Architecture {
        num_layers: layers,
        input_dim: graph.num_features(),
        hidden_dim: hidden,
        num_classes: graph.num_classes(),
    };
    let scheme = InitScheme {
        kind: InitKind::GlorotUniform,
        seed,
    };
    let mut model = build_model(arch, scheme, graph)
        .unwrap()
        .with_skip(mode, 0.3, source)
        .unwrap();
    if mode == SkipMode::Dynamic {
        for l in 0..layers {
            if model.skip_eligible(l) {
                model.set_skip_flag(l, true).unwrap();
            }
        }
    }
    if bias {
        model = model.with_bias();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        for b in model.biases_mut().unwrap() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    model
}

pub const MODES: [(SkipMode, SkipSource); 6] = [
    (SkipMode::None, SkipSource::FirstLayerOutput),
    (SkipMode::Residual, SkipSource::FirstLayerOutput),
    (SkipMode::Initial, SkipSource::FirstLayerOutput),
    (SkipMode::Jumping, SkipSource::FirstLayerOutput),
    (SkipMode::Dynamic, SkipSource::FirstLayerOutput),
    (SkipMode::Dynamic, SkipSource::PreviousLayer),
];

/// Runs the full grid and returns the worst relative error seen.
pub fn sweep(seeds: std::ops::Range<u64>) -> (f64, usize, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = super::random_graph(seed, 8, rng.random_range(2..=5), rng.random_range(2..=3));
        let op = build_propagation_operator(&graph);
        let case = Case {
            graph,
            op,
            dropout: if seed % 2 == 0 { 0.0 } else { 0.3 },
            dropout_seed: seed * 7 + 1,
        };
        for layers in [2, 4, 6] {
            let hidden = rng.random_range(2..=5);
            for (mode, source) in MODES {
                let model = model_for(&case.graph, layers, hidden, seed, mode, source, seed % 3 == 0);
                let (w, c, s) = check(&case, &model);
                assert!(
                    w < TOLERANCE,
                    "seed {seed} L={layers} {mode} {source:?}: relative error {w:e}"
                );
                worst = worst.max(w);
                checked += c;
                skipped += s;
            }
        }
    }
    (worst, checked, skipped)
}

