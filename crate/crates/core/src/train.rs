//! Full-batch transductive training: Adam with L2 weight decay, per-epoch
//! gradient-flow logging, periodic Dirichlet energy, dynamic rewiring, and
//! best-validation model selection.

use std::io::Write;

use ndarray::{Array, Dimension, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{gradient_flow, layer_energies, EnergyReport, FlowReport};
use crate::error::{Error, Result};
use crate::gcn::{gcn_backward, gcn_forward, ForwardMode};
use crate::graph::{build_propagation_operator, GraphBundle, PropagationOperator};
use crate::init::{InitKind, InitScheme};
use crate::linalg::{argmax_columns, softmax_cross_entropy};
use crate::model::{build_model_with_rng, Architecture, ModelState, SkipMode, SkipSource};
use crate::rewiring::{RewiringState, SkipEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub init: InitKind,
    pub skip_mode: SkipMode,
    pub alpha: f64,
    pub p_threshold: f64,
    pub skip_source: SkipSource,
    pub dropout: f64,
    pub seed: u64,
    /// Evaluate every `eval_stride` epochs (and on the last epoch).
    pub eval_stride: usize,
    /// Log Dirichlet energies every `energy_stride` epochs; 0 disables.
    pub energy_stride: usize,
    /// Norm order of the gradient-flow metric.
    pub flow_norm: f64,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 5e-4,
            epochs: 1500,
            hidden_dim: 64,
            num_layers: 2,
            init: InitKind::GlorotUniform,
            skip_mode: SkipMode::None,
            alpha: 0.1,
            p_threshold: 0.5,
            skip_source: SkipSource::FirstLayerOutput,
            dropout: 0.5,
            seed: 0,
            eval_stride: 1,
            energy_stride: 10,
            flow_norm: 2.0,
            bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.p_threshold) {
            return bad(format!("p_threshold must be in [0, 1), got {}", self.p_threshold));
        }
        if self.eval_stride == 0 {
            return bad("eval_stride must be >= 1".into());
        }
        if !(self.flow_norm >= 1.0) {
            return bad(format!("flow norm order must be >= 1, got {}", self.flow_norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<D: Dimension> {
    pub m: Array<f64, D>,
    pub v: Array<f64, D>,
}

impl<D: Dimension> AdamMoments<D> {
    pub fn zeros_like(param: &Array<f64, D>) -> Self {
        Self {
            m: Array::zeros(param.raw_dim()),
            v: Array::zeros(param.raw_dim()),
        }
    }
}

/// One Adam update at step `t ≥ 1`. Weight decay enters as an L2 term added
/// to the gradient before the moment updates.
pub fn adam_step<D: Dimension>(
    param: &mut Array<f64, D>,
    grad: &Array<f64, D>,
    moments: &mut AdamMoments<D>,
    t: usize,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("adam step counter starts at 1".into()));
    }
    if param.shape() != grad.shape() || param.shape() != moments.m.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("{:?}", param.shape()),
            format!("{:?}", grad.shape()),
        ));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    Zip::from(param)
        .and(grad)
        .and(&mut moments.m)
        .and(&mut moments.v)
        .for_each(|w, &g, m, v| {
            let g = g + cfg.weight_decay * *w;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
    Ok(())
}

/// One epoch of training history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub flow: FlowReport,
    pub energy: Option<EnergyReport>,
    pub skip_events: Vec<SkipEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub best_val_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: usize,
    pub active_skips: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model snapshot at the best-validation epoch.
    pub model: ModelState,
    pub history: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

/// Loss and accuracy of `logits` restricted to `split`.
pub fn split_metrics(logits: &ndarray::Array2<f64>, labels: &[usize], split: &[usize]) -> Result<(f64, f64)> {
    let (loss, _) = softmax_cross_entropy(logits, labels, split)?;
    let predicted = argmax_columns(logits);
    let hits = split.iter().filter(|&&i| predicted[i] == labels[i]).count();
    Ok((loss, hits as f64 / split.len() as f64))
}

/// Eval-mode loss and accuracy on `split`.
pub fn evaluate(
    model: &ModelState,
    graph: &GraphBundle,
    op: &PropagationOperator,
    split: &[usize],
) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::EmptyIndexSet("evaluate"));
    }
    let (logits, _) = gcn_forward(model, op, graph.features(), ForwardMode::Eval)?;
    split_metrics(&logits, graph.labels(), split)
}

fn stride_hit(epoch: usize, stride: usize, last: usize) -> bool {
    stride > 0 && (epoch.is_multiple_of(stride) || epoch == last)
}

pub fn train(graph: &GraphBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    let op = build_propagation_operator(graph);
    train_with_operator(graph, &op, config)
}

pub fn train_with_operator(graph: &GraphBundle, op: &PropagationOperator, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = graph.splits();
    if splits.train.is_empty() {
        return Err(Error::EmptyIndexSet("train split"));
    }
    if splits.val.is_empty() {
        return Err(Error::EmptyIndexSet("validation split"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = Architecture {
        num_layers: config.num_layers,
        input_dim: graph.num_features(),
        hidden_dim: config.hidden_dim,
        num_classes: graph.num_classes(),
    };
    let scheme = InitScheme {
        kind: config.init,
        seed: config.seed,
    };
    let mut model = build_model_with_rng(arch, scheme, graph, &mut rng)?.with_skip(
        config.skip_mode,
        config.alpha,
        config.skip_source,
    )?;
    if config.bias {
        model = model.with_bias();
    }
    let mut rewiring = (config.skip_mode == SkipMode::Dynamic)
        .then(|| RewiringState::new(config.num_layers, config.alpha, config.p_threshold, config.skip_source))
        .transpose()?;

    let adam = AdamConfig::new(config.lr, config.weight_decay);
    let no_decay = AdamConfig {
        weight_decay: 0.0,
        ..adam
    };
    let mut weight_moments: Vec<_> = model.weights().iter().map(AdamMoments::zeros_like).collect();
    let mut bias_moments: Option<Vec<_>> = model
        .biases()
        .map(|bs| bs.iter().map(AdamMoments::zeros_like).collect());

    let last = config.epochs - 1;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, f64, ModelState)> = None;

    for epoch in 0..config.epochs {
        let (logits, tape) = gcn_forward(
            &model,
            op,
            graph.features(),
            ForwardMode::Train {
                dropout: config.dropout,
                rng: &mut rng,
            },
        )?;
        model.cache_layer1(tape.layer1_output().cloned());
        let (train_loss, dlogits) = softmax_cross_entropy(&logits, graph.labels(), &splits.train)?;
        let grads = gcn_backward(&model, op, &tape, &dlogits)?;
        drop(tape);
        let flow = gradient_flow(&grads, config.flow_norm)?;

        let mut skip_events = Vec::new();
        if let Some(state) = rewiring.as_mut() {
            if epoch == 0 {
                state.record_baseline(&flow)?;
            } else {
                let before = state.activation_log().len();
                for layer in state.update_skips(&flow, epoch)? {
                    model.set_skip_flag(layer, true)?;
                }
                skip_events.extend_from_slice(&state.activation_log()[before..]);
            }
        }

        let t = epoch + 1;
        for ((w, g), m) in model.weights_mut().iter_mut().zip(&grads.weights).zip(&mut weight_moments) {
            adam_step(w, g, m, t, &adam)?;
        }
        if let (Some(bs), Some(gs), Some(ms)) = (model.biases_mut(), grads.biases.as_ref(), bias_moments.as_mut()) {
            for ((b, g), m) in bs.iter_mut().zip(gs).zip(ms) {
                adam_step(b, g, m, t, &no_decay)?;
            }
        }

        let do_eval = stride_hit(epoch, config.eval_stride, last);
        let do_energy = stride_hit(epoch, config.energy_stride, last);
        let mut record = MetricsRecord {
            epoch,
            train_loss,
            val_loss: None,
            val_accuracy: None,
            test_accuracy: None,
            flow,
            energy: None,
            skip_events,
        };
        if do_eval || do_energy {
            let (logits, tape) = gcn_forward(&model, op, graph.features(), ForwardMode::Eval)?;
            if do_energy {
                record.energy = Some(layer_energies(tape.hidden_outputs(), &logits, graph)?);
            }
            if do_eval {
                let (val_loss, val_acc) = split_metrics(&logits, graph.labels(), &splits.val)?;
                let test_acc = if splits.test.is_empty() {
                    None
                } else {
                    Some(split_metrics(&logits, graph.labels(), &splits.test)?.1)
                };
                record.val_loss = Some(val_loss);
                record.val_accuracy = Some(val_acc);
                record.test_accuracy = test_acc;
                if best.as_ref().is_none_or(|(_, acc, _, _)| val_acc > *acc) {
                    best = Some((epoch, val_acc, test_acc.unwrap_or(f64::NAN), model.clone()));
                }
            }
        }
        history.push(record);
    }

    let (best_val_epoch, best_val_accuracy, test_accuracy, best_model) =
        best.expect("the last epoch is always evaluated");
    let active_skips = best_model
        .skip_flags()
        .iter()
        .enumerate()
        .filter_map(|(l, &on)| on.then_some(l))
        .collect();
    Ok(TrainOutcome {
        model: best_model,
        history,
        summary: RunSummary {
            best_val_epoch,
            best_val_accuracy,
            test_accuracy,
            epochs: config.epochs,
            active_skips,
        },
    })
}

/// Trains one independent run per seed, in parallel, sharing only the graph.
/// Results come back in seed order.
pub fn seed_sweep(graph: &GraphBundle, config: &TrainConfig, seeds: &[u64]) -> Vec<Result<TrainOutcome>> {
    let op = build_propagation_operator(graph);
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            train_with_operator(graph, &op, &cfg)
        })
        .collect()
}

/// Writes a metrics log: a header line, one JSON object per epoch, and a
/// closing summary object.
pub fn write_metrics_jsonl<W: Write>(
    mut out: W,
    header: &serde_json::Value,
    history: &[MetricsRecord],
    summary: &RunSummary,
) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::json!({ "manifest": header }))?;
    for record in history {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    writeln!(out, "{}", serde_json::json!({ "summary": summary }))?;
    out.flush()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
