//! Gradient-guided dynamic rewiring.
//!
//! Each eligible layer's weight-gradient norm is compared against its value
//! after the first optimization step. When it falls below `p` times that
//! baseline the layer receives a sticky skip connection carrying `α` times
//! the skip source (by default, the first layer's output) into its
//! pre-activation.

use ndarray::Array2;
use serde::Serialize;

use crate::diagnostics::FlowReport;
use crate::error::{Error, Result};
use crate::gcn::TapeCache;
use crate::model::SkipSource;

/// One skip activation, as written to the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipEvent {
    pub epoch: usize,
    pub layer: usize,
    pub baseline: f64,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewiringState {
    baseline_flow: Option<Vec<f64>>,
    active: Vec<bool>,
    alpha: f64,
    p_threshold: f64,
    skip_source: SkipSource,
    activation_log: Vec<SkipEvent>,
}

impl RewiringState {
    pub fn new(num_layers: usize, alpha: f64, p_threshold: f64, skip_source: SkipSource) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        if !(0.0..1.0).contains(&p_threshold) {
            return Err(Error::Config(format!("p_threshold {p_threshold} outside [0, 1)")));
        }
        Ok(Self {
            baseline_flow: None,
            active: vec![false; num_layers],
            alpha,
            p_threshold,
            skip_source,
            activation_log: Vec::new(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.active.len()
    }

    pub fn baseline_flow(&self) -> Option<&[f64]> {
        self.baseline_flow.as_deref()
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p_threshold(&self) -> f64 {
        self.p_threshold
    }

    pub fn skip_source(&self) -> SkipSource {
        self.skip_source
    }

    pub fn activation_log(&self) -> &[SkipEvent] {
        &self.activation_log
    }

    fn eligible(&self, layer: usize) -> bool {
        layer >= 1 && layer + 1 < self.active.len()
    }

    /// Stores the per-layer flow of the first optimization step.
    pub fn record_baseline(&mut self, flow: &FlowReport) -> Result<()> {
        if self.baseline_flow.is_some() {
            return Err(Error::BaselineAlreadyRecorded);
        }
        if flow.per_layer.len() != self.active.len() {
            return Err(Error::shape("record_baseline", self.active.len(), flow.per_layer.len()));
        }
        for (l, &f) in flow.per_layer.iter().enumerate() {
            if f == 0.0 && self.eligible(l) {
                log::warn!("layer {l} has zero baseline gradient flow; its skip can never activate");
            }
        }
        self.baseline_flow = Some(flow.per_layer.clone());
        Ok(())
    }

    /// Applies the indicator `‖gₗ‖ < p · baseline_l` to every eligible layer
    /// and returns the layers activated by this call.
    pub fn update_skips(&mut self, flow: &FlowReport, epoch: usize) -> Result<Vec<usize>> {
        let baseline = self.baseline_flow.as_ref().ok_or(Error::BaselineMissing)?;
        if flow.per_layer.len() != self.active.len() {
            return Err(Error::shape("update_skips", self.active.len(), flow.per_layer.len()));
        }
        let mut fired = Vec::new();
        for l in 0..self.active.len() {
            if !self.eligible(l) || self.active[l] {
                continue;
            }
            let current = flow.per_layer[l];
            if current < self.p_threshold * baseline[l] {
                self.active[l] = true;
                self.activation_log.push(SkipEvent {
                    epoch,
                    layer: l,
                    baseline: baseline[l],
                    flow: current,
                });
                fired.push(l);
            }
        }
        Ok(fired)
    }

    /// `α` times the skip source for `layer`, read from a recorded tape.
    pub fn skip_term(&self, tape: &TapeCache, layer: usize) -> Result<Array2<f64>> {
        if !self.active.get(layer).copied().unwrap_or(false) {
            return Err(Error::SkipNotAllowed {
                layer,
                reason: "skip is not active",
            });
        }
        skip_source_term(self.alpha, self.skip_source, tape.hidden_outputs(), layer)
    }
}

/// `α · source` for a skip into `layer`, given the hidden outputs computed so
/// far (`hidden[k]` is the output of layer `k`).
pub fn skip_source_term(alpha: f64, source: SkipSource, hidden: &[Array2<f64>], layer: usize) -> Result<Array2<f64>> {
    if layer == 0 {
        return Err(Error::SkipNotAllowed {
            layer,
            reason: "first layer has no upstream source",
        });
    }
    let index = match source {
        SkipSource::FirstLayerOutput => 0,
        SkipSource::PreviousLayer => layer - 1,
    };
    let src = hidden.get(index).ok_or(Error::SkipNotAllowed {
        layer,
        reason: "skip source not computed yet",
    })?;
    Ok(src * alpha)
}
