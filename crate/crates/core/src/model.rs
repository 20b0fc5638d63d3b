//! Two-layer unidirectional LSTM regressor with a per-step `tanh(w·h + b)`
//! head, trained on the CCC loss with Adam and coupled L2 weight decay.
//!
//! Weights live in one flat `Vec<f64>`; [`Layout`] names the blocks. Gate
//! rows are ordered input, forget, cell, output.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ccc, Moments, CCC_GUARD};

pub const LAYERS: usize = 2;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
/// Targets are mapped onto this symmetric range before training.
pub const TARGET_RANGE: f64 = 0.9;

/// Dense row-major matrix, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    64
}

fn default_layers() -> usize {
    LAYERS
}

impl ModelConfig {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dim: default_hidden(),
            layers: LAYERS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim", "must be positive"));
        }
        if self.layers != LAYERS {
            return Err(Error::invalid("layers", format!("only {LAYERS} layers are supported")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub segment_length: usize,
    /// Segments per optimizer step.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::recola()
    }
}

impl TrainConfig {
    /// Speech profile: 100-frame segments, 100 epochs.
    pub fn recola() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            max_epochs: 100,
            segment_length: 100,
            batch_size: 8,
        }
    }

    /// Video profile: whole 19-window clips, 2500 epochs.
    pub fn gamevibe() -> Self {
        Self {
            max_epochs: 2500,
            segment_length: 19,
            ..Self::recola()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        if self.segment_length < 2 {
            return Err(Error::invalid("segment_length", "must be at least 2"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Affine target map `scaled = scale * raw + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub scale: f64,
    pub offset: f64,
}

impl TargetScaling {
    pub const IDENTITY: TargetScaling = TargetScaling {
        scale: 1.0,
        offset: 0.0,
    };

    /// Maps `[min, max]` of `targets` onto `[-0.9, 0.9]`.
    pub fn fit(targets: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = targets
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Training("no finite training targets".into()));
        }
        if hi <= lo {
            return Err(Error::Training("training targets are constant".into()));
        }
        let scale = 2.0 * TARGET_RANGE / (hi - lo);
        Ok(Self {
            scale,
            offset: -TARGET_RANGE - scale * lo,
        })
    }

    pub fn apply(&self, raw: f64) -> f64 {
        self.scale * raw + self.offset
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        (scaled - self.offset) / self.scale
    }
}

/// Named block of the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Fan-in used for initialization.
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<ParamBlock>,
}

impl Layout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, fan_in: usize| {
            blocks.push(ParamBlock {
                name,
                rows,
                cols,
                offset,
                fan_in,
            });
            offset += rows * cols;
        };
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.input_dim } else { h };
            push(format!("lstm{l}.w_in"), 4 * h, input, input + h);
            push(format!("lstm{l}.w_rec"), 4 * h, h, input + h);
            push(format!("lstm{l}.bias"), 4 * h, 1, input + h);
        }
        push("head.weight".into(), 1, h, h);
        push("head.bias".into(), 1, 1, h);
        Self { blocks }
    }

    pub fn weight_count(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerView {
    w_in: usize,
    w_rec: usize,
    bias: usize,
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: ModelConfig,
    layout: Layout,
    weights: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations kept for backpropagation.
struct LayerTrace {
    inputs: Vec<f64>,
    gates: Vec<f64>,
    cells: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
}

struct ForwardTrace {
    layers: Vec<LayerTrace>,
    outputs: Vec<f64>,
}

impl Network {
    /// Uniform initialization in `±1/sqrt(fan_in)`, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = vec![0.0; layout.weight_count()];
        for block in &layout.blocks {
            let bound = 1.0 / (block.fan_in as f64).sqrt();
            for w in &mut weights[block.range()] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(Self {
            config,
            layout,
            weights,
        })
    }

    pub fn from_weights(config: ModelConfig, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        if weights.len() != layout.weight_count() {
            return Err(Error::LengthMismatch {
                left: layout.weight_count(),
                right: weights.len(),
            });
        }
        Ok(Self {
            config,
            layout,
            weights,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn layer_view(&self, l: usize) -> LayerView {
        let base = l * 3;
        let b = &self.layout.blocks;
        LayerView {
            w_in: b[base].offset,
            w_rec: b[base + 1].offset,
            bias: b[base + 2].offset,
            input: b[base].cols,
            hidden: self.config.hidden_dim,
        }
    }

    fn head_offsets(&self) -> (usize, usize) {
        let n = self.layout.blocks.len();
        (self.layout.blocks[n - 2].offset, self.layout.blocks[n - 1].offset)
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.input_dim {
            return Err(Error::invalid(
                "features",
                format!("expected {} columns, got {}", self.config.input_dim, features.cols()),
            ));
        }
        if features.rows() == 0 {
            return Err(Error::Empty("feature sequence"));
        }
        Ok(())
    }

    /// One output in (−1, 1) per time step; step `n` only sees steps `<= n`.
    pub fn forward(&self, features: &Matrix) -> Result<Vec<f64>> {
        self.check_input(features)?;
        Ok(self.run(features).outputs)
    }

    fn run_layer(&self, view: LayerView, inputs: Vec<f64>, steps: usize) -> LayerTrace {
        let h = view.hidden;
        let w = &self.weights;
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut cell_tanh = vec![0.0; steps * h];
        let mut hidden = vec![0.0; steps * h];
        let zero = vec![0.0; h];
        for t in 0..steps {
            let x = &inputs[t * view.input..(t + 1) * view.input];
            let (h_prev, c_prev) = if t == 0 {
                (&zero[..], &zero[..])
            } else {
                (&hidden[(t - 1) * h..t * h], &cells[(t - 1) * h..t * h])
            };
            let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for r in 0..4 * h {
                let w_in = &w[view.w_in + r * view.input..view.w_in + (r + 1) * view.input];
                let w_rec = &w[view.w_rec + r * h..view.w_rec + (r + 1) * h];
                z[r] = w[view.bias + r] + dot(w_in, x) + dot(w_rec, h_prev);
            }
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = if (2 * h..3 * h).contains(&r) { zr.tanh() } else { sigmoid(*zr) };
            }
            let mut c_new = vec![0.0; h];
            for j in 0..h {
                c_new[j] = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            }
            let (cells_t, tanh_t, hidden_t) = (
                &mut cells[t * h..(t + 1) * h],
                &mut cell_tanh[t * h..(t + 1) * h],
                &mut hidden[t * h..(t + 1) * h],
            );
            for j in 0..h {
                cells_t[j] = c_new[j];
                tanh_t[j] = c_new[j].tanh();
                hidden_t[j] = z[3 * h + j] * tanh_t[j];
            }
        }
        LayerTrace {
            inputs,
            gates,
            cells,
            cell_tanh,
            hidden,
        }
    }

    fn run(&self, features: &Matrix) -> ForwardTrace {
        let steps = features.rows();
        let mut layers = Vec::with_capacity(self.config.layers);
        let mut inputs = features.as_slice().to_vec();
        for l in 0..self.config.layers {
            let trace = self.run_layer(self.layer_view(l), inputs, steps);
            inputs = trace.hidden.clone();
            layers.push(trace);
        }
        let h = self.config.hidden_dim;
        let (head_w, head_b) = self.head_offsets();
        let top = &layers[layers.len() - 1].hidden;
        let outputs = (0..steps)
            .map(|t| (self.weights[head_b] + dot(&self.weights[head_w..head_w + h], &top[t * h..(t + 1) * h])).tanh())
            .collect();
        ForwardTrace { layers, outputs }
    }

    /// Accumulates `d loss / d weights` into `grad` given `d loss / d outputs`.
    fn backward(&self, trace: &ForwardTrace, d_out: &[f64], grad: &mut [f64]) {
        let h = self.config.hidden_dim;
        let steps = d_out.len();
        let (head_w, head_b) = self.head_offsets();
        let top = &trace.layers[trace.layers.len() - 1].hidden;
        let mut d_hidden = vec![0.0; steps * h];
        for t in 0..steps {
            let y = trace.outputs[t];
            let d_pre = d_out[t] * (1.0 - y * y);
            grad[head_b] += d_pre;
            axpy(d_pre, &top[t * h..(t + 1) * h], &mut grad[head_w..head_w + h]);
            axpy(d_pre, &self.weights[head_w..head_w + h], &mut d_hidden[t * h..(t + 1) * h]);
        }
        for l in (0..self.config.layers).rev() {
            d_hidden = self.backward_layer(self.layer_view(l), &trace.layers[l], &d_hidden, grad, l > 0);
        }
    }

    fn backward_layer(
        &self,
        view: LayerView,
        trace: &LayerTrace,
        d_hidden: &[f64],
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Vec<f64> {
        let h = view.hidden;
        let steps = d_hidden.len() / h;
        let w = &self.weights;
        let mut d_inputs = if want_input_grad {
            vec![0.0; steps * view.input]
        } else {
            Vec::new()
        };
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let zero = vec![0.0; h];
        for t in (0..steps).rev() {
            let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_tanh = &trace.cell_tanh[t * h..(t + 1) * h];
            let (h_prev, c_prev) = if t == 0 {
                (&zero[..], &zero[..])
            } else {
                (&trace.hidden[(t - 1) * h..t * h], &trace.cells[(t - 1) * h..t * h])
            };
            for j in 0..h {
                let dh = d_hidden[t * h + j] + dh_next[j];
                let (i, f, c, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dc = dc_next[j] + dh * o * (1.0 - c_tanh[j] * c_tanh[j]);
                dz[j] = dc * c * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - c * c);
                dz[3 * h + j] = dh * c_tanh[j] * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let x = &trace.inputs[t * view.input..(t + 1) * view.input];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * h {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                grad[view.bias + r] += d;
                let in_row = view.w_in + r * view.input..view.w_in + (r + 1) * view.input;
                let rec_row = view.w_rec + r * h..view.w_rec + (r + 1) * h;
                axpy(d, x, &mut grad[in_row.clone()]);
                axpy(d, h_prev, &mut grad[rec_row.clone()]);
                axpy(d, &w[rec_row], &mut dh_next);
                if want_input_grad {
                    axpy(d, &w[in_row], &mut d_inputs[t * view.input..(t + 1) * view.input]);
                }
            }
        }
        d_inputs
    }

    /// CCC loss of one sequence and its gradient (accumulated into `grad`).
    /// Returns `None`, leaving `grad` untouched, when the target is flat.
    pub fn loss_and_gradient(&self, features: &Matrix, target: &[f64], grad: &mut [f64]) -> Result<Option<f64>> {
        self.check_input(features)?;
        if target.len() != features.rows() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: target.len(),
            });
        }
        if target.len() < 2 || is_flat(target) {
            return Ok(None);
        }
        let trace = self.run(features);
        let (loss, d_out) = ccc_loss_gradient(&trace.outputs, target);
        self.backward(&trace, &d_out, grad);
        Ok(Some(loss))
    }
}

fn is_flat(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

/// `1 − ccc(pred, target)` and its gradient with respect to `pred`.
/// Below the CCC denominator guard the loss is 1 with zero gradient.
pub fn ccc_loss_gradient(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let m = Moments::of(pred, target);
    let denom = m.ccc_denominator();
    if denom < CCC_GUARD {
        return (1.0, vec![0.0; pred.len()]);
    }
    let numer = 2.0 * m.cov;
    let rho = numer / denom;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&x, &y)| {
            let d_numer = 2.0 * (y - m.mean_y) / n;
            let d_denom = 2.0 * (x - m.mean_x) / n + 2.0 * (m.mean_x - m.mean_y) / n;
            -(d_numer / denom - numer * d_denom / (denom * denom))
        })
        .collect();
    (1.0 - rho, grad)
}

/// Features and one target channel for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub features: Matrix,
    pub target: Vec<f64>,
}

impl Sequence {
    pub fn new(features: Matrix, target: Vec<f64>) -> Result<Self> {
        if features.rows() != target.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: target.len(),
            });
        }
        Ok(Self { features, target })
    }

    /// Non-overlapping chunks of `len` steps; a trailing chunk shorter than 2 is dropped.
    pub fn segments(&self, len: usize) -> Vec<Sequence> {
        let mut out = Vec::new();
        let mut start = 0;
        while start + 2 <= self.target.len() {
            let end = (start + len).min(self.target.len());
            out.push(Sequence {
                features: self.features.slice_rows(start, end),
                target: self.target[start..end].to_vec(),
            });
            start = end;
        }
        out
    }
}

/// Adam state with coupled L2 weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(size: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            m: vec![0.0; size],
            v: vec![0.0; size],
            step: 0,
        }
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..weights.len() {
            let g = grad[i] + self.weight_decay * weights[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            weights[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub scaling: TargetScaling,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Training segments skipped per epoch because their target was flat.
    pub skipped_segments: usize,
    pub history: Vec<EpochStats>,
}

impl TrainedModel {
    /// Forward pass mapped back to target units.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        let raw = self.network.forward(features)?;
        Ok(raw.into_iter().map(|v| self.scaling.invert(v)).collect())
    }
}

/// `1 − ccc` over the concatenated (scaled) validation sequences.
fn validation_loss(net: &Network, valid: &[Sequence]) -> Result<f64> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for s in valid {
        pred.extend(net.forward(&s.features)?);
        target.extend_from_slice(&s.target);
    }
    Ok(1.0 - ccc(&pred, &target)?)
}

/// Trains on `train` (raw target units) and keeps the weights of the epoch
/// with the lowest validation CCC loss. Epoch 0 is the initialization.
pub fn train(train: &[Sequence], valid: &[Sequence], model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainedModel> {
    train_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("no training sequences".into()));
    }
    if valid.is_empty() {
        return Err(Error::Training("no validation sequences".into()));
    }
    let scaling = TargetScaling::fit(train.iter().flat_map(|s| s.target.iter().copied()))?;
    let scale = |s: &Sequence| Sequence {
        features: s.features.clone(),
        target: s.target.iter().map(|&v| scaling.apply(v)).collect(),
    };
    let segments: Vec<Sequence> = train
        .iter()
        .flat_map(|s| scale(s).segments(train_cfg.segment_length))
        .collect();
    let skipped_segments = segments.iter().filter(|s| is_flat(&s.target)).count();
    let usable: Vec<Sequence> = segments.into_iter().filter(|s| !is_flat(&s.target)).collect();
    if usable.is_empty() {
        return Err(Error::Training("every training segment has a constant target".into()));
    }
    let valid: Vec<Sequence> = valid.iter().map(scale).collect();

    let mut net = Network::new(model_cfg.clone())?;
    for s in usable.iter().chain(&valid) {
        net.check_input(&s.features)?;
    }
    let mut adam = Adam::new(net.weights.len(), train_cfg.learning_rate, train_cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed ^ 0x005e_ed0f_7a11);
    let mut order: Vec<usize> = (0..usable.len()).collect();

    let mut best_loss = validation_loss(&net, &valid)?;
    let mut best_weights = net.weights.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(train_cfg.max_epochs);
    let mut grad = vec![0.0; net.weights.len()];

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &usable[i];
                batch_loss += net
                    .loss_and_gradient(&s.features, &s.target, &mut grad)?
                    .unwrap_or(0.0);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut net.weights, &grad);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / usable.len() as f64;
        let validation_loss = validation_loss(&net, &valid)?;
        if !validation_loss.is_finite() {
            return Err(Error::Training(format!("validation loss diverged at epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best_weights.copy_from_slice(&net.weights);
            best_epoch = epoch;
        }
    }
    net.weights = best_weights;
    Ok(TrainedModel {
        network: net,
        scaling,
        best_epoch,
        best_validation_loss: best_loss,
        skipped_segments,
        history,
    })
}

/// Comparison of analytic and central finite-difference loss gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|a − n| / max(|a|, |n|, REL_FLOOR)` over all weights.
    pub max_relative_error: f64,
    /// Largest `|a − n|` over weights whose analytic gradient is exactly 0.
    pub max_zero_gradient_error: f64,
    pub parameters: usize,
}

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Checks the CCC-loss gradient of `network` on one sequence.
pub fn gradient_check(network: &Network, features: &Matrix, target: &[f64]) -> Result<GradientCheck> {
    network.check_input(features)?;
    if target.len() != features.rows() {
        return Err(Error::LengthMismatch {
            left: features.rows(),
            right: target.len(),
        });
    }
    let loss_of = |net: &Network| -> f64 {
        let out = net.run(features).outputs;
        ccc_loss_gradient(&out, target).0
    };
    let trace = network.run(features);
    let (_, d_out) = ccc_loss_gradient(&trace.outputs, target);
    let mut analytic = vec![0.0; network.weights.len()];
    network.backward(&trace, &d_out, &mut analytic);

    let mut probe = network.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_zero: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let w = probe.weights[i];
        probe.weights[i] = w + FD_STEP;
        let up = loss_of(&probe);
        probe.weights[i] = w - FD_STEP;
        let down = loss_of(&probe);
        probe.weights[i] = w;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = (a - numeric).abs();
        if a == 0.0 {
            max_zero = max_zero.max(err);
        }
        max_rel = max_rel.max(err / a.abs().max(numeric.abs()).max(REL_FLOOR));
    }
    Ok(GradientCheck {
        max_relative_error: max_rel,
        max_zero_gradient_error: max_zero,
        parameters: analytic.len(),
    })
}

const CHECKPOINT_MARKER: &[u8] = b"\n%%WEIGHTS%%\n";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    model: ModelConfig,
    scaling: TargetScaling,
    best_epoch: usize,
    best_validation_loss: f64,
    skipped_segments: usize,
    weight_count: usize,
    layout: Vec<ParamBlock>,
}

impl TrainedModel {
    /// TOML header, a marker line, then the weights as little-endian f64.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            format_version: 1,
            model: self.network.config.clone(),
            scaling: self.scaling,
            best_epoch: self.best_epoch,
            best_validation_loss: self.best_validation_loss,
            skipped_segments: self.skipped_segments,
            weight_count: self.network.weights.len(),
            layout: self.network.layout.blocks.clone(),
        };
        let mut out = toml::to_string(&header).expect("checkpoint header serializes").into_bytes();
        out.extend_from_slice(CHECKPOINT_MARKER);
        for w in &self.network.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let split = bytes
            .windows(CHECKPOINT_MARKER.len())
            .position(|w| w == CHECKPOINT_MARKER)
            .ok_or_else(|| Error::format(origin, "missing weight marker"))?;
        let text = std::str::from_utf8(&bytes[..split]).map_err(|e| Error::format(origin, e.to_string()))?;
        let header: CheckpointHeader = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        let body = &bytes[split + CHECKPOINT_MARKER.len()..];
        if body.len() != header.weight_count * 8 {
            return Err(Error::format(
                origin,
                format!("expected {} weight bytes, found {}", header.weight_count * 8, body.len()),
            ));
        }
        let weights = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let network = Network::from_weights(header.model, weights)?;
        if network.layout.blocks != header.layout {
            return Err(Error::format(origin, "layout descriptor does not match the model config"));
        }
        Ok(Self {
            network,
            scaling: header.scaling,
            best_epoch: header.best_epoch,
            best_validation_loss: header.best_validation_loss,
            skipped_segments: header.skipped_segments,
            history: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden_dim: 4,
            layers: 2,
            seed,
        }
    }

    #[test]
    fn layout_counts() {
        let layout = Layout::for_config(&tiny(0));
        // layer 0: 16*3 + 16*4 + 16; layer 1: 16*4 + 16*4 + 16; head 4 + 1
        assert_eq!(layout.weight_count(), 128 + 144 + 5);
        assert_eq!(layout.block("head.bias").unwrap().offset, 128 + 144 + 4);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = tiny(1);
        let n = Layout::for_config(&cfg).weight_count();
        let net = Network::from_weights(cfg, vec![0.0; n]).unwrap();
        let out = net.forward(&random_matrix(6, 3, 2)).unwrap();
        assert_eq!(out, vec![0.0; 6]);
    }

    #[test]
    fn forward_is_causal_bounded_and_deterministic() {
        let net = Network::new(tiny(3)).unwrap();
        let x = random_matrix(8, 3, 4);
        let full = net.forward(&x).unwrap();
        assert!(full.iter().all(|v| v.abs() < 1.0));
        let prefix = net.forward(&x.slice_rows(0, 5)).unwrap();
        assert_eq!(&full[..5], &prefix[..]);
        let mut changed = x.clone();
        changed.row_mut(6).iter_mut().for_each(|v| *v += 10.0);
        assert_eq!(&net.forward(&changed).unwrap()[..6], &full[..6]);
        let again = Network::new(tiny(3)).unwrap().forward(&x).unwrap();
        assert_eq!(full, again);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Network::new(tiny(0)).unwrap();
        assert!(net.forward(&random_matrix(4, 2, 0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(Network::new(ModelConfig { layers: 3, ..tiny(0) }).is_err());
        assert!(Network::new(ModelConfig { hidden_dim: 0, ..tiny(0) }).is_err());
        assert!(TrainConfig {
            segment_length: 1,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn ccc_gradient_matches_finite_differences() {
        let pred = [0.1, -0.3, 0.25, 0.7, -0.05];
        let target = [0.0, -0.2, 0.4, 0.5, 0.1];
        let (loss, grad) = ccc_loss_gradient(&pred, &target);
        assert!((loss - crate::metrics::ccc_loss(&pred, &target).unwrap()).abs() < 1e-15);
        for i in 0..pred.len() {
            let mut p = pred;
            p[i] += 1e-6;
            let up = ccc_loss_gradient(&p, &target).0;
            p[i] -= 2e-6;
            let down = ccc_loss_gradient(&p, &target).0;
            assert!((grad[i] - (up - down) / 2e-6).abs() < 1e-8);
        }
    }

    #[test]
    fn ccc_gradient_is_guarded_on_flat_input() {
        let (loss, grad) = ccc_loss_gradient(&[0.2; 4], &[0.2; 4]);
        assert_eq!(loss, 1.0);
        assert!(grad.iter().all(|g| *g == 0.0));
        // Constant prediction against a moving target stays finite.
        let (loss, grad) = ccc_loss_gradient(&[0.0; 4], &[0.1, 0.5, -0.2, 0.3]);
        assert_eq!(loss, 1.0);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_check_tiny() {
        let net = Network::new(tiny(11)).unwrap();
        let x = random_matrix(5, 3, 12);
        let target = [0.3, -0.1, 0.6, 0.2, -0.4];
        let check = gradient_check(&net, &x, &target).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
    }

    #[test]
    fn unused_input_has_zero_gradient() {
        let net = Network::new(tiny(5)).unwrap();
        let mut x = random_matrix(5, 3, 6);
        for t in 0..5 {
            x.row_mut(t)[0] = 0.0;
        }
        let mut grad = vec![0.0; net.weights().len()];
        net.loss_and_gradient(&x, &[0.3, -0.1, 0.6, 0.2, -0.4], &mut grad).unwrap();
        let block = net.layout().block("lstm0.w_in").unwrap();
        for r in 0..block.rows {
            assert_eq!(grad[block.offset + r * block.cols], 0.0);
        }
        let check = gradient_check(&net, &x, &[0.3, -0.1, 0.6, 0.2, -0.4]).unwrap();
        assert!(check.max_zero_gradient_error < 1e-8);
    }

    #[test]
    fn scaling_round_trip() {
        let s = TargetScaling::fit([2.0, -1.0, 0.5]).unwrap();
        assert!((s.apply(-1.0) + 0.9).abs() < 1e-15);
        assert!((s.apply(2.0) - 0.9).abs() < 1e-15);
        for v in [-3.0, 0.0, 0.25, 7.5] {
            assert!((s.invert(s.apply(v)) - v).abs() < 1e-12);
        }
        assert!(TargetScaling::fit([1.0, 1.0]).is_err());
        assert_eq!(TargetScaling::IDENTITY.invert(0.3), 0.3);
    }

    #[test]
    fn segments_cover_sequence() {
        let s = Sequence::new(random_matrix(7, 2, 0), (0..7).map(f64::from).collect()).unwrap();
        let parts = s.segments(3);
        let lens: Vec<usize> = parts.iter().map(|p| p.target.len()).collect();
        assert_eq!(lens, [3, 3]);
        let parts = s.segments(5);
        assert_eq!(parts.iter().map(|p| p.target.len()).collect::<Vec<_>>(), [5, 2]);
    }

    #[test]
    fn weight_decay_shrinks_weights_without_loss_gradient() {
        let mut net = Network::new(tiny(9)).unwrap();
        let mut adam = Adam::new(net.weights().len(), 1e-3, 1e-4);
        let zero = vec![0.0; net.weights().len()];
        let mut norm = net.weights().iter().map(|w| w * w).sum::<f64>();
        for _ in 0..20 {
            adam.step(net.weights_mut(), &zero);
            let next = net.weights().iter().map(|w| w * w).sum::<f64>();
            assert!(next < norm);
            norm = next;
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::new(tiny(2)).unwrap();
        let model = TrainedModel {
            network: net,
            scaling: TargetScaling { scale: 0.5, offset: 0.1 },
            best_epoch: 7,
            best_validation_loss: 0.25,
            skipped_segments: 1,
            history: Vec::new(),
        };
        let bytes = model.to_checkpoint_bytes();
        let back = TrainedModel::from_checkpoint_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.network, model.network);
        assert_eq!(back.scaling, model.scaling);
        assert_eq!(back.best_epoch, 7);
        assert!(TrainedModel::from_checkpoint_bytes(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
    }

    #[test]
    fn predict_inverts_scaling() {
        let net = Network::new(tiny(4)).unwrap();
        let x = random_matrix(5, 3, 1);
        let raw = net.forward(&x).unwrap();
        let mut model = TrainedModel {
            network: net,
            scaling: TargetScaling::IDENTITY,
            best_epoch: 0,
            best_validation_loss: 1.0,
            skipped_segments: 0,
            history: Vec::new(),
        };
        assert_eq!(model.predict(&x).unwrap(), raw);
        model.scaling = TargetScaling { scale: 0.5, offset: 0.0 };
        let doubled = model.predict(&x).unwrap();
        for (d, r) in doubled.iter().zip(&raw) {
            assert!((d - 2.0 * r).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let cfg = tiny(8);
        let seq = Sequence::new(random_matrix(6, 3, 3), vec![0.1, 0.4, -0.2, 0.3, 0.0, 0.5]).unwrap();
        let train_cfg = TrainConfig {
            max_epochs: 0,
            segment_length: 6,
            ..TrainConfig::default()
        };
        let model = train(std::slice::from_ref(&seq), std::slice::from_ref(&seq), &cfg, &train_cfg).unwrap();
        assert_eq!(model.best_epoch, 0);
        assert_eq!(model.network, Network::new(cfg).unwrap());
    }

    #[test]
    fn training_errors() {
        let cfg = tiny(0);
        let flat = Sequence::new(random_matrix(4, 3, 0), vec![0.2; 4]).unwrap();
        let moving = Sequence::new(random_matrix(4, 3, 1), vec![0.0, 1.0, 0.5, 0.2]).unwrap();
        assert!(train(&[], std::slice::from_ref(&moving), &cfg, &TrainConfig::default()).is_err());
        assert!(train(std::slice::from_ref(&flat), std::slice::from_ref(&moving), &cfg, &TrainConfig::default()).is_err());
        // Each segment flat even though the sequence is not.
        let steps = Sequence::new(random_matrix(4, 3, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let cfg2 = TrainConfig {
            segment_length: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&[steps], &[moving], &cfg, &cfg2), Err(Error::Training(_))));
    }
}
