//! L-layer vanilla GCN model state, the hidden-width schedule, static skip
//! baselines, and checkpoint I/O.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBundle;
use crate::init::{initialize, InitKind, InitScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    None,
    Residual,
    Initial,
    Jumping,
    Dynamic,
}

impl SkipMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipMode::None => "none",
            SkipMode::Residual => "residual",
            SkipMode::Initial => "initial",
            SkipMode::Jumping => "jumping",
            SkipMode::Dynamic => "dynamic",
        }
    }

    pub fn is_static(self) -> bool {
        matches!(self, SkipMode::Residual | SkipMode::Initial | SkipMode::Jumping)
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SkipMode::None),
            "residual" => Ok(SkipMode::Residual),
            "initial" => Ok(SkipMode::Initial),
            "jumping" => Ok(SkipMode::Jumping),
            "dynamic" => Ok(SkipMode::Dynamic),
            other => Err(Error::Config(format!("unknown skip mode '{other}'"))),
        }
    }
}

/// Where a dynamic skip takes its signal from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipSource {
    /// Post-activation output of the first layer.
    FirstLayerOutput,
    /// Output of the layer directly below.
    PreviousLayer,
}

impl FromStr for SkipSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "first_layer_output" => Ok(SkipSource::FirstLayerOutput),
            "prev" | "previous_layer" => Ok(SkipSource::PreviousLayer),
            other => Err(Error::Config(format!("unknown skip source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    /// `(out, in)` shape of every layer: `C → hidden → … → hidden → K`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let l = self.num_layers;
        (0..l)
            .map(|i| {
                let input = if i == 0 { self.input_dim } else { self.hidden_dim };
                let output = if i + 1 == l { self.num_classes } else { self.hidden_dim };
                (output, input)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if self.input_dim == 0 || self.num_classes == 0 || (self.num_layers > 1 && self.hidden_dim == 0) {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    arch: Architecture,
    init: InitScheme,
    weights: Vec<Array2<f64>>,
    biases: Option<Vec<Array1<f64>>>,
    skip_mode: SkipMode,
    alpha: f64,
    skip_source: SkipSource,
    skip_flags: Vec<bool>,
    layer1_cache: Option<Array2<f64>>,
}

/// Builds a model with weights drawn from a generator seeded by `scheme.seed`.
pub fn build_model(arch: Architecture, scheme: InitScheme, graph: &GraphBundle) -> Result<ModelState> {
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
    build_model_with_rng(arch, scheme, graph, &mut rng)
}

/// Builds a model drawing weights from `rng`, layer by layer in order.
///
/// Under [`InitKind::IsoOrthogonal`], layers with fewer outputs than inputs
/// (typically the first and the classifier) cannot have orthogonal columns
/// and are drawn from [`InitKind::IsoUniform`] instead.
pub fn build_model_with_rng<R: Rng + ?Sized>(
    arch: Architecture,
    scheme: InitScheme,
    graph: &GraphBundle,
    rng: &mut R,
) -> Result<ModelState> {
    arch.validate()?;
    let weights = arch
        .layer_shapes()
        .into_iter()
        .map(|(out, inp)| {
            let kind = match scheme.kind {
                InitKind::IsoOrthogonal if out < inp => InitKind::IsoUniform,
                k => k,
            };
            initialize(out, inp, kind, graph, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelState {
        arch,
        init: scheme,
        weights,
        biases: None,
        skip_mode: SkipMode::None,
        alpha: 0.0,
        skip_source: SkipSource::FirstLayerOutput,
        skip_flags: vec![false; arch.num_layers],
        layer1_cache: None,
    })
}

impl ModelState {
    /// Model from explicit weight matrices; shapes must chain.
    pub fn from_weights(weights: Vec<Array2<f64>>) -> Result<Self> {
        let first = weights.first().ok_or_else(|| Error::Config("no layers".into()))?;
        for pair in weights.windows(2) {
            if pair[0].nrows() != pair[1].ncols() {
                return Err(Error::shape("layer chain", pair[0].nrows(), pair[1].ncols()));
            }
        }
        let l = weights.len();
        let arch = Architecture {
            num_layers: l,
            input_dim: first.ncols(),
            hidden_dim: if l > 1 { first.nrows() } else { 0 },
            num_classes: weights[l - 1].nrows(),
        };
        Ok(Self {
            arch,
            init: InitScheme {
                kind: InitKind::GlorotUniform,
                seed: 0,
            },
            weights,
            biases: None,
            skip_mode: SkipMode::None,
            alpha: 0.0,
            skip_source: SkipSource::FirstLayerOutput,
            skip_flags: vec![false; l],
            layer1_cache: None,
        })
    }

    /// Sets the skip configuration. Static modes switch on every eligible
    /// flag; `None` and `Dynamic` start with all flags off.
    pub fn with_skip(mut self, mode: SkipMode, alpha: f64, source: SkipSource) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        self.skip_mode = mode;
        self.alpha = alpha;
        self.skip_source = source;
        let static_on = matches!(mode, SkipMode::Residual | SkipMode::Initial);
        self.skip_flags = (0..self.num_layers())
            .map(|l| static_on && self.skip_eligible(l))
            .collect();
        Ok(self)
    }

    /// Adds zero-initialized biases to every layer.
    pub fn with_bias(mut self) -> Self {
        self.biases = Some(self.weights.iter().map(|w| Array1::zeros(w.nrows())).collect());
        self
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> Option<&[Array1<f64>]> {
        self.biases.as_deref()
    }

    pub fn biases_mut(&mut self) -> Option<&mut [Array1<f64>]> {
        self.biases.as_deref_mut()
    }

    pub fn skip_mode(&self) -> SkipMode {
        self.skip_mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn skip_source(&self) -> SkipSource {
        self.skip_source
    }

    pub fn skip_flags(&self) -> &[bool] {
        &self.skip_flags
    }

    /// Skips may target hidden layers other than the first (0-based index
    /// `1..=L-2`): the first layer has no upstream source and the classifier
    /// has a different width.
    pub fn skip_eligible(&self, layer: usize) -> bool {
        layer >= 1 && layer + 1 < self.num_layers()
    }

    pub fn set_skip_flag(&mut self, layer: usize, on: bool) -> Result<()> {
        if layer >= self.num_layers() {
            return Err(Error::SkipNotAllowed {
                layer,
                reason: "no such layer",
            });
        }
        if on && !self.skip_eligible(layer) {
            let reason = if layer == 0 {
                "first layer has no upstream source"
            } else {
                "classifier width differs from hidden width"
            };
            return Err(Error::SkipNotAllowed { layer, reason });
        }
        self.skip_flags[layer] = on;
        Ok(())
    }

    pub fn layer1_cache(&self) -> Option<&Array2<f64>> {
        self.layer1_cache.as_ref()
    }

    pub fn cache_layer1(&mut self, output: Option<Array2<f64>>) {
        self.layer1_cache = output;
    }
}

/// Combines layer outputs for the static skip baselines.
///
/// `outputs` holds the post-activation outputs `[X¹, …, Xˡ]` of the hidden
/// layers computed so far, the current layer last.
/// - residual: `(1-α)·Xˡ + α·Xˡ⁻¹`
/// - initial: `(1-α)·Xˡ + α·X¹`
/// - jumping: elementwise mean of all outputs
///
/// With a single output the residual and initial forms return it unchanged.
pub fn apply_static_skip(mode: SkipMode, alpha: f64, outputs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let current = outputs
        .last()
        .ok_or_else(|| Error::Config("apply_static_skip needs at least one output".into()))?;
    if outputs.iter().any(|o| o.dim() != current.dim()) {
        return Err(Error::shape(
            "apply_static_skip",
            format!("{:?}", current.dim()),
            "mixed shapes",
        ));
    }
    let mix = |other: &Array2<f64>| current * (1.0 - alpha) + other * alpha;
    match mode {
        SkipMode::Residual if outputs.len() >= 2 => Ok(mix(&outputs[outputs.len() - 2])),
        SkipMode::Initial if outputs.len() >= 2 => Ok(mix(&outputs[0])),
        SkipMode::Residual | SkipMode::Initial => Ok(current.clone()),
        SkipMode::Jumping => {
            let mut sum = Array2::zeros(current.raw_dim());
            for o in outputs {
                sum += o;
            }
            Ok(sum / outputs.len() as f64)
        }
        SkipMode::None | SkipMode::Dynamic => Err(Error::Config(format!(
            "apply_static_skip called with non-static mode {mode}"
        ))),
    }
}

const CHECKPOINT_FORMAT: &str = "gcnflow-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub skip_mode: SkipMode,
    pub alpha: f64,
    pub skip_source: SkipSource,
    pub skip_flags: Vec<bool>,
    pub seed: u64,
    pub scheme: InitKind,
    /// `[rows, cols]` per layer, in payload order.
    pub shapes: Vec<[usize; 2]>,
    pub bias: bool,
}

/// Writes a checkpoint: one line of JSON metadata, then every weight matrix
/// as row-major little-endian `f64`, layer by layer, followed by the biases
/// when present.
pub fn write_checkpoint<W: Write>(model: &ModelState, mut out: W) -> std::io::Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        num_layers: model.arch.num_layers,
        input_dim: model.arch.input_dim,
        hidden_dim: model.arch.hidden_dim,
        num_classes: model.arch.num_classes,
        skip_mode: model.skip_mode,
        alpha: model.alpha,
        skip_source: model.skip_source,
        skip_flags: model.skip_flags.clone(),
        seed: model.init.seed,
        scheme: model.init.kind,
        shapes: model.weights.iter().map(|w| [w.nrows(), w.ncols()]).collect(),
        bias: model.biases.is_some(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for w in &model.weights {
        for v in w.as_standard_layout().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(biases) = &model.biases {
        for b in biases {
            for v in b {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<ModelState> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut line = String::new();
    input
        .read_line(&mut line)
        .map_err(|e| bad(format!("reading header: {e}")))?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header json: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.shapes.len() != header.num_layers || header.skip_flags.len() != header.num_layers {
        return Err(bad("layer count disagrees with shapes or flags".into()));
    }
    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        input
            .read_exact(&mut buf)
            .map_err(|e| bad(format!("payload truncated: {e}")))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    };
    let mut weights = Vec::with_capacity(header.num_layers);
    for &[r, c] in &header.shapes {
        let data = read_f64s(r * c)?;
        weights.push(Array2::from_shape_vec((r, c), data).map_err(|e| bad(e.to_string()))?);
    }
    let biases = if header.bias {
        let mut out = Vec::new();
        for &[r, _] in &header.shapes {
            out.push(Array1::from(read_f64s(r)?));
        }
        Some(out)
    } else {
        None
    };
    let mut model = ModelState::from_weights(weights)?;
    let arch = Architecture {
        num_layers: header.num_layers,
        input_dim: header.input_dim,
        hidden_dim: header.hidden_dim,
        num_classes: header.num_classes,
    };
    if arch.layer_shapes() != model.arch.layer_shapes() {
        return Err(bad("declared dimensions disagree with weight shapes".into()));
    }
    model.arch = arch;
    model.init = InitScheme {
        kind: header.scheme,
        seed: header.seed,
    };
    model.biases = biases;
    model.skip_mode = header.skip_mode;
    model.alpha = header.alpha;
    model.skip_source = header.skip_source;
    for (l, &on) in header.skip_flags.iter().enumerate() {
        model.set_skip_flag(l, on)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Splits;

    fn graph(n: usize) -> GraphBundle {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        GraphBundle::new(n, &edges, Array2::zeros((4, n)), vec![0; n], 3, Splits::default()).unwrap()
    }

    fn scheme() -> InitScheme {
        InitScheme {
            kind: InitKind::GlorotUniform,
            seed: 1,
        }
    }

    fn shapes(m: &ModelState) -> Vec<(usize, usize)> {
        m.weights().iter().map(|w| w.dim()).collect()
    }

    #[test]
    fn cora_shaped_two_layer() {
        let arch = Architecture {
            num_layers: 2,
            input_dim: 1433,
            hidden_dim: 64,
            num_classes: 7,
        };
        let m = build_model(arch, scheme(), &graph(5)).unwrap();
        assert_eq!(shapes(&m), vec![(64, 1433), (7, 64)]);
    }

    #[test]
    fn single_layer_maps_input_to_classes() {
        let arch = Architecture {
            num_layers: 1,
            input_dim: 4,
            hidden_dim: 16,
            num_classes: 3,
        };
        let m = build_model(arch, scheme(), &graph(5)).unwrap();
        assert_eq!(shapes(&m), vec![(3, 4)]);
    }

    #[test]
    fn orthogonal_scheme_falls_back_on_wide_layers() {
        let arch = Architecture {
            num_layers: 3,
            input_dim: 20,
            hidden_dim: 8,
            num_classes: 3,
        };
        let s = InitScheme {
            kind: InitKind::IsoOrthogonal,
            seed: 2,
        };
        let m = build_model(arch, s, &graph(5)).unwrap();
        let mid = &m.weights()[1];
        let gram = mid.t().dot(mid);
        let mag = gram[[0, 0]];
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { mag } else { 0.0 };
            assert!((v - target).abs() < 1e-12);
        }
    }

    #[test]
    fn ten_layer_schedule() {
        let arch = Architecture {
            num_layers: 10,
            input_dim: 1433,
            hidden_dim: 64,
            num_classes: 7,
        };
        let m = build_model(arch, scheme(), &graph(5)).unwrap();
        let s = shapes(&m);
        assert_eq!(s.len(), 10);
        assert_eq!(s.iter().filter(|&&d| d == (64, 64)).count(), 8);
        assert_eq!(s[0], (64, 1433));
        assert_eq!(s[9], (7, 64));
    }

    #[test]
    fn zero_layers_rejected() {
        let arch = Architecture {
            num_layers: 0,
            input_dim: 4,
            hidden_dim: 4,
            num_classes: 2,
        };
        assert!(build_model(arch, scheme(), &graph(3)).is_err());
    }

    #[test]
    fn skip_flag_eligibility() {
        let m = ModelState::from_weights(vec![Array2::zeros((3, 2)), Array2::zeros((3, 3)), Array2::zeros((2, 3))])
            .unwrap();
        let mut m = m.with_skip(SkipMode::Dynamic, 0.1, SkipSource::FirstLayerOutput).unwrap();
        assert!(m.set_skip_flag(0, true).is_err());
        assert!(m.set_skip_flag(2, true).is_err());
        m.set_skip_flag(1, true).unwrap();
        assert_eq!(m.skip_flags(), &[false, true, false]);
        let m = m.with_skip(SkipMode::Residual, 0.1, SkipSource::FirstLayerOutput).unwrap();
        assert_eq!(m.skip_flags(), &[false, true, false]);
    }

    #[test]
    fn static_skip_alpha_zero_is_identity() {
        let a = Array2::from_elem((2, 3), 1.5);
        let b = Array2::from_elem((2, 3), -4.0);
        let c = Array2::from_elem((2, 3), 0.25);
        let outs = [a, b, c.clone()];
        assert_eq!(apply_static_skip(SkipMode::Residual, 0.0, &outs).unwrap(), c);
        assert_eq!(apply_static_skip(SkipMode::Initial, 0.0, &outs).unwrap(), c);
    }

    #[test]
    fn residual_alpha_one_copies_previous() {
        let prev = Array2::from_elem((2, 2), 3.0);
        let cur = Array2::from_elem((2, 2), 7.0);
        let out = apply_static_skip(SkipMode::Residual, 1.0, &[prev.clone(), cur]).unwrap();
        assert_eq!(out, prev);
    }

    #[test]
    fn jumping_of_equal_outputs() {
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.5);
        let out = apply_static_skip(SkipMode::Jumping, 0.3, &[x.clone(), x.clone(), x.clone()]).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn static_skip_rejects_dynamic_mode() {
        let x = Array2::zeros((1, 1));
        assert!(apply_static_skip(SkipMode::Dynamic, 0.1, &[x]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Architecture {
            num_layers: 3,
            input_dim: 4,
            hidden_dim: 5,
            num_classes: 3,
        };
        let mut m = build_model(arch, scheme(), &graph(6))
            .unwrap()
            .with_skip(SkipMode::Dynamic, 0.2, SkipSource::PreviousLayer)
            .unwrap()
            .with_bias();
        m.set_skip_flag(1, true).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn checkpoint_truncated_payload() {
        let arch = Architecture {
            num_layers: 2,
            input_dim: 4,
            hidden_dim: 5,
            num_classes: 3,
        };
        let m = build_model(arch, scheme(), &graph(6)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(matches!(read_checkpoint(&buf[..]), Err(Error::Checkpoint(_))));
    }
}
