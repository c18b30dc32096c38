mod common;

use common::gradcheck;
use gcnflow::gcn::{gcn_backward, gcn_forward, ForwardMode};
use gcnflow::graph::build_propagation_operator;
use gcnflow::linalg::softmax_cross_entropy;
use gcnflow::model::{SkipMode, SkipSource};

#[test]
fn analytic_gradients_match_central_differences() {
    let (worst, checked, skipped) = gradcheck::sweep(0..20);
    eprintln!("worst relative error {worst:e} over {checked} entries ({skipped} kink-crossing entries skipped)");
    assert!(checked > 1000);
    assert!(skipped * 100 < checked, "too many kink crossings: {skipped}/{checked}");
}

#[test]
fn single_layer_gradient_has_closed_form() {
    // Single layer, no hidden activations: ∂L/∂W = (∂L/∂Z) Â Xᵀ.
    let graph = common::random_graph(3, 6, 3, 2);
    let op = build_propagation_operator(&graph);
    let model = gradcheck::model_for(&graph, 1, 1, 3, SkipMode::None, SkipSource::FirstLayerOutput, false);
    let (logits, tape) = gcn_forward(&model, &op, graph.features(), ForwardMode::Eval).unwrap();
    let (_, dlogits) = softmax_cross_entropy(&logits, graph.labels(), &graph.splits().train).unwrap();
    let grads = gcn_backward(&model, &op, &tape, &dlogits).unwrap();
    let a_hat = op.matrix().to_dense();
    let expected = dlogits.dot(&a_hat).dot(&graph.features().t());
    assert!(common::max_abs_diff(&grads.weights[0], &expected) < 1e-12);
}
