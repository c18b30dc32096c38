mod common;

use gcnflow::gcn::{gcn_forward, ForwardMode};
use gcnflow::graph::build_propagation_operator;
use gcnflow::linalg::softmax_cross_entropy;
use gcnflow::model::{build_model, read_checkpoint, write_checkpoint, Architecture, ModelState, SkipMode, SkipSource};
use gcnflow::rewiring::RewiringState;
use gcnflow::{GraphBundle, InitKind, InitScheme};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn deep_model(g: &GraphBundle, layers: usize, kind: InitKind, seed: u64) -> ModelState {
    let arch = Architecture {
        num_layers: layers,
        input_dim: g.num_features(),
        hidden_dim: 6,
        num_classes: g.num_classes(),
    };
    build_model(arch, InitScheme { kind, seed }, g).unwrap()
}

fn eval(model: &ModelState, g: &GraphBundle) -> Array2<f64> {
    let op = build_propagation_operator(g);
    gcn_forward(model, &op, g.features(), ForwardMode::Eval).unwrap().0
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let g = common::sbm(1);
    let model = deep_model(&g, 8, InitKind::IsoUniform, 1);
    assert_eq!(eval(&model, &g), eval(&model, &g));
}

#[test]
fn permutation_equivariance() {
    for seed in 0..20 {
        let g = common::random_graph(seed, 6, 3, 2);
        let model = deep_model(&g, 3, InitKind::GlorotUniform, seed);
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pg = g.permuted(&perm).unwrap();
        let base = eval(&model, &g);
        let moved = eval(&model, &pg);
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..base.nrows() {
                assert!((base[[k, i]] - moved[[k, p]]).abs() < 1e-12, "seed {seed}");
            }
        }
    }
}

#[test]
fn single_layer_is_linear_in_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = common::random_graph(8, 8, 4, 3);
    let op = build_propagation_operator(&g);
    let model = ModelState::from_weights(vec![common::random_matrix(&mut rng, 3, 4)]).unwrap();
    let run = |x: &Array2<f64>| gcn_forward(&model, &op, x, ForwardMode::Eval).unwrap().0;
    for _ in 0..10 {
        let n = g.num_nodes();
        let x = common::random_matrix(&mut rng, 4, n);
        let y = common::random_matrix(&mut rng, 4, n);
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let lhs = run(&(&x * a + &y * b));
        let rhs = run(&x) * a + run(&y) * b;
        assert!(common::max_abs_diff(&lhs, &rhs) < 1e-12);
    }
}

#[test]
fn inactive_flags_ignore_alpha() {
    let g = common::sbm(2);
    let base = deep_model(&g, 5, InitKind::IsoUniform, 2);
    let plain = eval(&base, &g);
    for alpha in [0.0, 0.3, 1.0] {
        for source in [SkipSource::FirstLayerOutput, SkipSource::PreviousLayer] {
            let dynamic = base.clone().with_skip(SkipMode::Dynamic, alpha, source).unwrap();
            assert_eq!(eval(&dynamic, &g), plain);
        }
    }
}

#[test]
fn static_skips_at_zero_alpha_match_plain_model() {
    let g = common::sbm(3);
    let base = deep_model(&g, 5, InitKind::GlorotUniform, 3);
    let plain = eval(&base, &g);
    for mode in [SkipMode::Residual, SkipMode::Initial] {
        let skipped = base.clone().with_skip(mode, 0.0, SkipSource::FirstLayerOutput).unwrap();
        assert_eq!(eval(&skipped, &g), plain, "{mode}");
    }
}

#[test]
fn skip_term_reads_first_layer_snapshot() {
    let g = common::sbm(4);
    let op = build_propagation_operator(&g);
    let mut model = deep_model(&g, 3, InitKind::IsoUniform, 4)
        .with_skip(SkipMode::Dynamic, 0.25, SkipSource::FirstLayerOutput)
        .unwrap();
    model.set_skip_flag(1, true).unwrap();
    let (_, tape) = gcn_forward(&model, &op, g.features(), ForwardMode::Eval).unwrap();
    let mut state = RewiringState::new(3, 0.25, 0.5, SkipSource::FirstLayerOutput).unwrap();
    assert!(state.skip_term(&tape, 1).is_err());
    state.record_baseline(&gcnflow::FlowReport::from_per_layer(vec![1.0; 3], 2.0)).unwrap();
    state
        .update_skips(&gcnflow::FlowReport::from_per_layer(vec![1.0, 0.0, 1.0], 2.0), 1)
        .unwrap();
    let term = state.skip_term(&tape, 1).unwrap();
    assert_eq!(term, tape.layer1_output().unwrap() * 0.25);
}

#[test]
fn previous_layer_skip_at_full_alpha_with_zero_weights() {
    // α = 1 with a zero layer: the combined output is the previous output.
    let g = common::sbm(5);
    let op = build_propagation_operator(&g);
    let mut model = deep_model(&g, 4, InitKind::IsoUniform, 5)
        .with_skip(SkipMode::Dynamic, 1.0, SkipSource::PreviousLayer)
        .unwrap();
    model.weights_mut()[2].fill(0.0);
    model.set_skip_flag(2, true).unwrap();
    let (_, tape) = gcn_forward(&model, &op, g.features(), ForwardMode::Eval).unwrap();
    assert_eq!(tape.hidden_outputs()[2], tape.hidden_outputs()[1]);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let logits = common::random_matrix(&mut rng, 3, 4) * 3.0;
    let labels = [2, 0, 1, 1];
    let index = [0, 1, 3];
    let (_, grad) = softmax_cross_entropy(&logits, &labels, &index).unwrap();
    let h = 1e-5;
    for k in 0..3 {
        for i in 0..4 {
            let mut plus = logits.clone();
            plus[[k, i]] += h;
            let mut minus = logits.clone();
            minus[[k, i]] -= h;
            let numeric = (softmax_cross_entropy(&plus, &labels, &index).unwrap().0
                - softmax_cross_entropy(&minus, &labels, &index).unwrap().0)
                / (2.0 * h);
            let analytic = grad[[k, i]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-6 || (analytic - numeric).abs() < 1e-11, "({k},{i}): {analytic} vs {numeric}");
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let g = common::sbm(6);
    let mut model = deep_model(&g, 4, InitKind::IsoOrthogonal, 6)
        .with_skip(SkipMode::Dynamic, 0.2, SkipSource::PreviousLayer)
        .unwrap()
        .with_bias();
    model.set_skip_flag(2, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    write_checkpoint(&model, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_checkpoint(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.weights(), model.weights());
    assert_eq!(back.skip_flags(), model.skip_flags());
    assert_eq!(back.skip_mode(), SkipMode::Dynamic);
    assert_eq!(back.skip_source(), SkipSource::PreviousLayer);
    assert_eq!(back.init_scheme(), model.init_scheme());
    assert_eq!(eval(&back, &g), eval(&model, &g));
}
