//! Forward pass with a recorded tape, and manual reverse-mode backward pass
//! for the fixed GCN computation graph.
//!
//! Layer `l` (0-based) computes `Zₗ = Wₗ Uₗ Â (+ bₗ)` where `Uₗ` is the
//! (dropped-out) layer input. Hidden layers apply ReLU, with the configured
//! skip connection; the last layer returns raw logits.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::graph::{spmm, PropagationOperator};
use crate::linalg::{dropout, relu, LayerInput};
use crate::model::{apply_static_skip, ModelState, SkipMode, SkipSource};
use crate::rewiring::skip_source_term;

pub enum ForwardMode<'a> {
    /// Deterministic, no dropout.
    Eval,
    /// Inverted dropout on every layer input at `dropout` rate.
    Train { dropout: f64, rng: &'a mut dyn RngCore },
}

/// Activations recorded by [`gcn_forward`] for [`gcn_backward`].
#[derive(Debug, Clone)]
pub struct TapeCache {
    inputs: Vec<LayerInput>,
    dropout_masks: Vec<Option<Array2<f64>>>,
    relu_masks: Vec<Array2<bool>>,
    hidden_outputs: Vec<Array2<f64>>,
    skip_mode: SkipMode,
    alpha: f64,
    skip_source: SkipSource,
    skip_flags: Vec<bool>,
}

impl TapeCache {
    pub fn depth(&self) -> usize {
        self.inputs.len()
    }

    /// Input `Uₗ` seen by layer `l` after dropout.
    pub fn layer_input(&self, layer: usize) -> &Array2<f64> {
        self.inputs[layer].dense()
    }

    pub fn relu_mask(&self, layer: usize) -> Option<&Array2<bool>> {
        self.relu_masks.get(layer)
    }

    pub fn dropout_mask(&self, layer: usize) -> Option<&Array2<f64>> {
        self.dropout_masks[layer].as_ref()
    }

    /// Post-activation outputs of the hidden layers, in order.
    pub fn hidden_outputs(&self) -> &[Array2<f64>] {
        &self.hidden_outputs
    }

    /// Output of the first layer, the initial-residual skip source.
    pub fn layer1_output(&self) -> Option<&Array2<f64>> {
        self.hidden_outputs.first()
    }

    pub fn skip_flags(&self) -> &[bool] {
        &self.skip_flags
    }
}

/// `∂L/∂Wₗ` for every layer, plus bias gradients when the model has biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Option<Vec<Array1<f64>>>,
}

impl GradientSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn gcn_forward(
    model: &ModelState,
    op: &PropagationOperator,
    features: &Array2<f64>,
    mut mode: ForwardMode<'_>,
) -> Result<(Array2<f64>, TapeCache)> {
    let n = op.num_nodes();
    let l_total = model.num_layers();
    if features.ncols() != n {
        return Err(Error::shape("gcn_forward features", format!("{n} columns"), features.ncols()));
    }
    if features.nrows() != model.weights()[0].ncols() {
        return Err(Error::shape(
            "gcn_forward features",
            format!("{} rows", model.weights()[0].ncols()),
            features.nrows(),
        ));
    }

    let mut tape = TapeCache {
        inputs: Vec::with_capacity(l_total),
        dropout_masks: Vec::with_capacity(l_total),
        relu_masks: Vec::with_capacity(l_total.saturating_sub(1)),
        hidden_outputs: Vec::with_capacity(l_total.saturating_sub(1)),
        skip_mode: model.skip_mode(),
        alpha: model.alpha(),
        skip_source: model.skip_source(),
        skip_flags: model.skip_flags().to_vec(),
    };

    for l in 0..l_total {
        let last = l + 1 == l_total;
        let raw_input = if l == 0 {
            features.clone()
        } else if last && model.skip_mode() == SkipMode::Jumping {
            apply_static_skip(SkipMode::Jumping, model.alpha(), &tape.hidden_outputs)?
        } else {
            tape.hidden_outputs[l - 1].clone()
        };
        let (input, mask) = match &mut mode {
            ForwardMode::Eval => (raw_input, None),
            ForwardMode::Train { dropout: rate, .. } if *rate <= 0.0 => (raw_input, None),
            ForwardMode::Train { dropout: rate, rng } => {
                let (x, m) = dropout(&raw_input, *rate, &mut **rng);
                (x, Some(m))
            }
        };
        let input = LayerInput::new(input);

        let w = &model.weights()[l];
        let mut z = spmm(op, input.left_mul(w.view()).view())?;
        if let Some(biases) = model.biases() {
            z += &biases[l].view().insert_axis(Axis(1));
        }
        tape.inputs.push(input);
        tape.dropout_masks.push(mask);

        if last {
            return Ok((z, tape));
        }

        let flagged = model.skip_flags()[l];
        let (h, relu_mask) = match model.skip_mode() {
            SkipMode::Dynamic if flagged => {
                let term = skip_source_term(model.alpha(), model.skip_source(), &tape.hidden_outputs, l)?;
                relu(&(z + &term))
            }
            SkipMode::Residual | SkipMode::Initial if flagged => {
                let (act, m) = relu(&z);
                let other = if model.skip_mode() == SkipMode::Residual {
                    tape.hidden_outputs[l - 1].clone()
                } else {
                    tape.hidden_outputs[0].clone()
                };
                (apply_static_skip(model.skip_mode(), model.alpha(), &[other, act])?, m)
            }
            _ => relu(&z),
        };
        tape.relu_masks.push(relu_mask);
        tape.hidden_outputs.push(h);
    }
    unreachable!("model has at least one layer")
}

pub fn gcn_backward(
    model: &ModelState,
    op: &PropagationOperator,
    tape: &TapeCache,
    dlogits: &Array2<f64>,
) -> Result<GradientSet> {
    let l_total = model.num_layers();
    if tape.depth() != l_total {
        return Err(Error::shape("gcn_backward tape depth", l_total, tape.depth()));
    }
    if tape.skip_flags != model.skip_flags() || tape.skip_mode != model.skip_mode() {
        return Err(Error::shape("gcn_backward skip wiring", "tape wiring", "different model wiring"));
    }
    let expected = (model.weights()[l_total - 1].nrows(), op.num_nodes());
    if dlogits.dim() != expected {
        return Err(Error::shape("gcn_backward dlogits", format!("{expected:?}"), format!("{:?}", dlogits.dim())));
    }

    let alpha = tape.alpha;
    let mut d_hidden: Vec<Option<Array2<f64>>> = vec![None; l_total - 1];
    let accumulate = |slot: &mut Option<Array2<f64>>, g: Array2<f64>| match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    };
    let mut weight_grads = vec![Array2::zeros((0, 0)); l_total];
    let mut bias_grads = model.biases().map(|_| vec![Array1::zeros(0); l_total]);

    for l in (0..l_total).rev() {
        let dz = if l + 1 == l_total {
            dlogits.clone()
        } else {
            let dh = d_hidden[l]
                .take()
                .unwrap_or_else(|| Array2::zeros(tape.hidden_outputs[l].raw_dim()));
            let mask = &tape.relu_masks[l];
            let flagged = tape.skip_flags[l];
            match tape.skip_mode {
                SkipMode::Dynamic if flagged => {
                    let da = masked(&dh, mask, 1.0);
                    let target = match tape.skip_source {
                        SkipSource::FirstLayerOutput => 0,
                        SkipSource::PreviousLayer => l - 1,
                    };
                    accumulate(&mut d_hidden[target], &da * alpha);
                    da
                }
                SkipMode::Residual | SkipMode::Initial if flagged => {
                    let target = if tape.skip_mode == SkipMode::Residual { l - 1 } else { 0 };
                    accumulate(&mut d_hidden[target], &dh * alpha);
                    masked(&dh, mask, 1.0 - alpha)
                }
                _ => masked(&dh, mask, 1.0),
            }
        };

        // Z = W U Â: backprop through the right factor multiplies by Âᵀ = Â.
        let p = spmm(op, dz.view())?;
        weight_grads[l] = tape.inputs[l].right_mul_transposed(p.view());
        if let Some(bg) = bias_grads.as_mut() {
            bg[l] = dz.sum_axis(Axis(1));
        }
        if l == 0 {
            break;
        }
        let mut d_input = model.weights()[l].t().dot(&p);
        if let Some(m) = &tape.dropout_masks[l] {
            d_input *= m;
        }
        if l + 1 == l_total && tape.skip_mode == SkipMode::Jumping {
            let share = 1.0 / (l_total - 1) as f64;
            for slot in d_hidden.iter_mut() {
                accumulate(slot, &d_input * share);
            }
        } else {
            accumulate(&mut d_hidden[l - 1], d_input);
        }
    }

    Ok(GradientSet {
        weights: weight_grads,
        biases: bias_grads,
    })
}

fn masked(g: &Array2<f64>, mask: &Array2<bool>, scale: f64) -> Array2<f64> {
    let mut out = g.clone();
    Zip::from(&mut out).and(mask).for_each(|v, &on| {
        *v = if on { *v * scale } else { 0.0 };
    });
    out
}
