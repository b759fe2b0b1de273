//! Leaky-ReLU multilayer perceptrons viewed as continuous piecewise-affine maps.
//!
//! Every hidden layer is an affine map followed by a leaky-ReLU; the last layer
//! is a purely affine head. On the region selected by an [`ActivationPattern`]
//! the whole network reduces to a single [`AffineMap`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};

/// Checkpoint format version written by [`MlpNetwork::save`].
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::DimensionMismatch { expected: weight.nrows(), found: bias.len() });
        }
        Ok(Self { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    leaky_slope: f64,
}

/// On/off state of every hidden unit; bit set iff the pre-activation is `> 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn active_count(&self) -> usize {
        self.layers.iter().flatten().filter(|b| **b).count()
    }
}

/// `x -> slope * x + offset`, the network restricted to one region.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub slope: Matrix,
    pub offset: Vector,
}

impl AffineMap {
    pub fn apply(&self, x: &Vector) -> Vector {
        &self.slope * x + &self.offset
    }
}

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCoord {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

impl std::fmt::Display for ParamCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamCoord::Weight { layer, row, col } => write!(f, "layer {layer} weight[{row},{col}]"),
            ParamCoord::Bias { layer, row } => write!(f, "layer {layer} bias[{row}]"),
        }
    }
}

/// Per-layer gradients, same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl ParamGrads {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Matrix::zeros(l.weight.nrows(), l.weight.ncols())).collect(),
            biases: net.layers.iter().map(|l| Vector::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Parameters in the order of [`MlpNetwork::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    out.push(w[(i, j)]);
                }
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cached intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (N x d_in), starting with the batch itself.
    pub inputs: Vec<Matrix>,
    /// Pre-activations of each layer (N x d_out).
    pub preacts: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.preacts.last().expect("network has at least one layer")
    }

    /// Activation pattern of sample `row`.
    pub fn pattern(&self, row: usize) -> ActivationPattern {
        let hidden = self.preacts.len() - 1;
        ActivationPattern {
            layers: self.preacts[..hidden]
                .iter()
                .map(|p| p.row(row).iter().map(|v| *v > 0.0).collect())
                .collect(),
        }
    }

    /// Smallest |pre-activation| over all hidden units and samples.
    pub fn min_hidden_margin(&self) -> f64 {
        let hidden = self.preacts.len() - 1;
        self.preacts[..hidden]
            .iter()
            .flat_map(|p| p.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl MlpNetwork {
    pub fn new(layers: Vec<Layer>, leaky_slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&leaky_slope) {
            return Err(Error::InvalidArgument(format!("leaky slope {leaky_slope} not in [0, 1)")));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} does not chain into layer input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        let finite = layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("non-finite network parameters".into()));
        }
        Ok(Self { layers, leaky_slope })
    }

    /// Random network with layer sizes `dims = [D, h_1, ..., K]`.
    ///
    /// Weights are uniform with variance `2 / d_in`; biases uniform on
    /// `[-1/sqrt(d_in), 1/sqrt(d_in)]`.
    pub fn random(dims: &[usize], leaky_slope: f64, rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let limit = (6.0 / d_in as f64).sqrt();
                let bias_limit = (1.0 / d_in as f64).sqrt();
                let mut weight = Matrix::zeros(d_out, d_in);
                for i in 0..d_out {
                    for j in 0..d_in {
                        weight[(i, j)] = rng.uniform_range(-limit, limit);
                    }
                }
                let bias = Vector::from_fn(d_out, |_, _| rng.uniform_range(-bias_limit, bias_limit));
                Layer { weight, bias }
            })
            .collect();
        Self::new(layers, leaky_slope)
    }

    /// Purely affine network `x -> W x + b`.
    pub fn affine(weight: Matrix, bias: Vector) -> Result<Self> {
        Self::new(vec![Layer::new(weight, bias)?], 0.0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Layer sizes `[D, h_1, ..., K]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(Layer::output_dim)).collect()
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        Ok(())
    }

    fn gate(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.leaky_slope * v
        }
    }

    fn gate_slope(&self, active: bool) -> f64 {
        if active {
            1.0
        } else {
            self.leaky_slope
        }
    }

    fn forward_inner(&self, x: &Vector) -> (Vector, ActivationPattern) {
        let mut h = x.clone();
        let mut pattern = Vec::with_capacity(self.hidden_layers());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = &layer.weight * &h + &layer.bias;
            if l == last {
                h = pre;
            } else {
                pattern.push(pre.iter().map(|v| *v > 0.0).collect());
                h = pre.map(|v| self.gate(v));
            }
        }
        (h, ActivationPattern { layers: pattern })
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        self.check_input(x)?;
        Ok(self.forward_inner(x).0)
    }

    /// Output and region pattern from one pass.
    pub fn forward_with_pattern(&self, x: &Vector) -> Result<(Vector, ActivationPattern)> {
        self.check_input(x)?;
        Ok(self.forward_inner(x))
    }

    pub fn activation_pattern(&self, x: &Vector) -> Result<ActivationPattern> {
        self.check_input(x)?;
        Ok(self.forward_inner(x).1)
    }

    pub fn same_region(&self, x1: &Vector, x2: &Vector) -> Result<bool> {
        Ok(self.activation_pattern(x1)? == self.activation_pattern(x2)?)
    }

    /// Smallest |pre-activation| over the hidden units at `x`: a lower bound on
    /// how far the input sits from a region boundary, in pre-activation units.
    pub fn hidden_margin(&self, x: &Vector) -> Result<f64> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut margin = f64::INFINITY;
        for layer in &self.layers[..self.layers.len() - 1] {
            let pre = &layer.weight * &h + &layer.bias;
            margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            h = pre.map(|v| self.gate(v));
        }
        Ok(margin)
    }

    /// Slope and offset of the network on the region identified by `pattern`.
    pub fn region_affine_map(&self, pattern: &ActivationPattern) -> Result<AffineMap> {
        if pattern.layers.len() != self.hidden_layers() {
            return Err(Error::ShapeMismatch(format!(
                "pattern has {} layers, network has {} hidden layers",
                pattern.layers.len(),
                self.hidden_layers()
            )));
        }
        for (l, bits) in pattern.layers.iter().enumerate() {
            if bits.len() != self.layers[l].output_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "pattern layer {l} has {} bits, layer width is {}",
                    bits.len(),
                    self.layers[l].output_dim()
                )));
            }
        }
        let mut slope = self.layers[0].weight.clone();
        let mut offset = self.layers[0].bias.clone();
        for (l, bits) in pattern.layers.iter().enumerate() {
            for (i, active) in bits.iter().enumerate() {
                let g = self.gate_slope(*active);
                slope.row_mut(i).scale_mut(g);
                offset[i] *= g;
            }
            let next = &self.layers[l + 1];
            slope = &next.weight * slope;
            offset = &next.weight * offset + &next.bias;
        }
        Ok(AffineMap { slope, offset })
    }

    /// `‖f(x) - (A x + b)‖ / max(1, ‖f(x)‖)` for the region containing `x`.
    pub fn verify_affine_consistency(&self, x: &Vector) -> Result<f64> {
        let (y, pattern) = self.forward_with_pattern(x)?;
        let map = self.region_affine_map(&pattern)?;
        Ok((&y - map.apply(x)).norm() / y.norm().max(1.0))
    }

    /// Batched forward pass keeping every intermediate for backpropagation.
    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: &Matrix) -> Result<ForwardTrace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = &h * layer.weight.transpose();
            for mut row in pre.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let next = if l == last { pre.clone() } else { pre.map(|v| self.gate(v)) };
            inputs.push(std::mem::replace(&mut h, next));
            preacts.push(pre);
        }
        Ok(ForwardTrace { inputs, preacts })
    }

    pub fn forward_rows(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_batch(x)?.preacts.pop().expect("non-empty"))
    }

    /// Reverse-mode pass: gradients of a scalar loss given `d loss / d output`.
    ///
    /// A pre-activation of exactly zero takes the inactive (leaky) branch.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Matrix) -> Result<ParamGrads> {
        let out = trace.output();
        if grad_output.shape() != out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.shape(),
                out.shape()
            )));
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut delta = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                let pre = &trace.preacts[l];
                delta.zip_apply(pre, |d, p| *d *= self.gate_slope(p > 0.0));
            }
            grads.weights[l] = delta.transpose() * &trace.inputs[l];
            grads.biases[l] = delta.row_sum().transpose();
            if l > 0 {
                delta = &delta * &self.layers[l].weight;
            }
        }
        Ok(grads)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Layer by layer: weights row-major, then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for i in 0..l.weight.nrows() {
                for j in 0..l.weight.ncols() {
                    out.push(l.weight[(i, j)]);
                }
            }
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn param_coord(&self, mut index: usize) -> Option<ParamCoord> {
        for (layer, l) in self.layers.iter().enumerate() {
            let nw = l.weight.len();
            if index < nw {
                let cols = l.weight.ncols();
                return Some(ParamCoord::Weight { layer, row: index / cols, col: index % cols });
            }
            index -= nw;
            if index < l.bias.len() {
                return Some(ParamCoord::Bias { layer, row: index });
            }
            index -= l.bias.len();
        }
        None
    }

    pub fn param(&self, coord: ParamCoord) -> f64 {
        match coord {
            ParamCoord::Weight { layer, row, col } => self.layers[layer].weight[(row, col)],
            ParamCoord::Bias { layer, row } => self.layers[layer].bias[row],
        }
    }

    pub fn set_param(&mut self, coord: ParamCoord, value: f64) {
        match coord {
            ParamCoord::Weight { layer, row, col } => self.layers[layer].weight[(row, col)] = value,
            ParamCoord::Bias { layer, row } => self.layers[layer].bias[row] = value,
        }
    }

    /// Mutable access for optimizers; shapes must not change.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: "infomax-lab/mlp".into(),
            format_version: CHECKPOINT_VERSION,
            leaky_slope: self.leaky_slope,
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.transpose().as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { kind: "checkpoint", version: ck.format_version });
        }
        let layers = ck
            .layers
            .iter()
            .map(|l| {
                if l.weight.len() != l.rows * l.cols {
                    return Err(Error::ShapeMismatch(format!(
                        "weight array of length {} for a {}x{} layer",
                        l.weight.len(),
                        l.rows,
                        l.cols
                    )));
                }
                Layer::new(Matrix::from_row_slice(l.rows, l.cols, &l.weight), Vector::from_column_slice(&l.bias))
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Self::new(layers, ck.leaky_slope)?;
        if net.input_dim() != ck.input_dim || net.output_dim() != ck.output_dim {
            return Err(Error::ShapeMismatch("checkpoint header dims disagree with layers".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Parse { what: "checkpoint".into(), message: e.to_string() })?;
        Self::from_checkpoint(&ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json().as_bytes())?;
        Ok(())
    }
}

/// On-disk checkpoint layout (JSON). Weights are row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub leaky_slope: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}
