//! Zero-bias deep ReLU networks with a linear softmax head.
//!
//! `a^l = W^l h^{l-1}`, `h^l = max(a^l, 0)` for `l = 1..L`, with `h^0 = x`,
//! followed by `logits = head · h^L`. The backward pass is written out by
//! hand and exposes `∂ℓ/∂a^l` and `∂ℓ/∂W^l` for every layer so the norm
//! ratios of the forward and backward signals can be inspected.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gaussian_matrix, Matrix, RngState, Vector};

/// Gaussian initialization schemes, each defined by a per-layer variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitScheme {
    /// Variance `2 / fan_out`.
    #[serde(rename = "he")]
    HeFanOut,
    /// Variance `2 / fan_in`.
    #[serde(rename = "he-fanin")]
    HeFanIn,
    /// Variance `2 / (fan_in + fan_out)`, Gaussian rather than uniform.
    #[serde(rename = "glorot")]
    Glorot,
}

impl InitScheme {
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::HeFanOut => 2.0 / fan_out as f64,
            InitScheme::HeFanIn => 2.0 / fan_in as f64,
            InitScheme::Glorot => 2.0 / (fan_in + fan_out) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::HeFanOut => "he",
            InitScheme::HeFanIn => "he-fanin",
            InitScheme::Glorot => "glorot",
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he" | "he-fanout" => Ok(InitScheme::HeFanOut),
            "he-fanin" => Ok(InitScheme::HeFanIn),
            "glorot" => Ok(InitScheme::Glorot),
            other => Err(Error::invalid(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// Architecture of a network: `widths = [n_0, n_1, …, n_L]` plus the head size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(widths: Vec<usize>, num_classes: usize, seed: u64) -> Result<Self> {
        let config = Self {
            widths,
            num_classes,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("widths must list the input and at least one layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("all widths must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReluNet {
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    head: Matrix,
}

impl ReluNet {
    /// Assembles a network from explicit weights; biases are set to zero.
    pub fn from_parts(weights: Vec<Matrix>, head: Matrix) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in weights.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::DimensionMismatch {
                    context: "layer chain",
                    expected: pair[0].rows(),
                    actual: pair[1].cols(),
                });
            }
        }
        let top = weights.last().map(Matrix::rows).unwrap_or(0);
        if head.cols() != top {
            return Err(Error::DimensionMismatch {
                context: "head input",
                expected: top,
                actual: head.cols(),
            });
        }
        let biases = weights.iter().map(|w| Vector::zeros(w.rows())).collect();
        Ok(Self { weights, biases, head })
    }

    /// Initializes from `config.seed`.
    pub fn init(config: &NetworkConfig, scheme: InitScheme) -> Result<Self> {
        init_network(config, scheme, RngState::from_seed(config.seed).derive_tag("network"))
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head.rows()
    }

    /// `[n_0, n_1, …, n_L]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(Matrix::rows))
            .collect()
    }

    /// `W^1 … W^L` (index 0 holds `W^1`).
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    /// Adds `delta` to one weight entry; `layer` is 1-based.
    pub fn perturb_weight(&mut self, layer: usize, i: usize, j: usize, delta: f64) {
        let w = &mut self.weights[layer - 1];
        let v = w.get(i, j);
        w.set(i, j, v + delta);
    }
}

/// Draws every `W^l` i.i.d. Gaussian with the scheme's variance, zero biases,
/// and a head drawn with the same scheme (`fan_out = K`).
///
/// Layer `l` uses the sub-stream `rng.derive(l)`, so networks built from the
/// same state with different widths share their leading weight blocks.
pub fn init_network(config: &NetworkConfig, scheme: InitScheme, rng: RngState) -> Result<ReluNet> {
    config.validate()?;
    let weights = config
        .widths
        .windows(2)
        .enumerate()
        .map(|(idx, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            gaussian_matrix(
                fan_out,
                fan_in,
                scheme.variance(fan_in, fan_out),
                rng.derive(idx as u64 + 1),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let top = *config.widths.last().unwrap();
    let head = gaussian_matrix(
        config.num_classes,
        top,
        scheme.variance(top, config.num_classes),
        rng.derive_tag("head"),
    )?;
    ReluNet::from_parts(weights, head)
}

fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&v| v.max(0.0)).collect()
}

/// Everything the forward pass computed for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: Vector,
    /// `a^1 … a^L`
    pub preacts: Vec<Vector>,
    /// `h^1 … h^L`
    pub acts: Vec<Vector>,
    pub logits: Vector,
}

impl ForwardTrace {
    /// `h^{l}` for `l = 0..=L`, with `h^0 = x`.
    pub fn act(&self, l: usize) -> &Vector {
        if l == 0 {
            &self.input
        } else {
            &self.acts[l - 1]
        }
    }
}

pub fn forward(net: &ReluNet, x: &Vector) -> Result<ForwardTrace> {
    if x.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: net.input_dim(),
            actual: x.dim(),
        });
    }
    let mut preacts = Vec::with_capacity(net.depth());
    let mut acts: Vec<Vector> = Vec::with_capacity(net.depth());
    for (w, b) in net.weights.iter().zip(&net.biases) {
        let prev = acts.last().unwrap_or(x);
        let mut a = w.matvec(prev.as_slice())?;
        a.iter_mut().zip(b.as_slice()).for_each(|(ai, bi)| *ai += bi);
        acts.push(Vector::from_vec(relu(&a)));
        preacts.push(Vector::from_vec(a));
    }
    let logits = net.head.matvec(acts.last().unwrap().as_slice())?;
    Ok(ForwardTrace {
        input: x.clone(),
        preacts,
        acts,
        logits: Vector::from_vec(logits),
    })
}

/// Numerically stable `(−log softmax(z)[label], softmax(z) − onehot(label))`.
fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits[label];
    let mut residual: Vec<f64> = exps.iter().map(|e| e / total).collect();
    residual[label] -= 1.0;
    (loss, residual)
}

/// Cross-entropy of `softmax(logits)` against `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(softmax_xent(logits, label).0)
}

/// Loss and `δ(x, y) = ∂ℓ/∂a^L`.
///
/// The head sees `h^L = ReLU(a^L)`, so `δ = 𝟙(a^L) ⊙ headᵀ (softmax − onehot)`.
pub fn head_loss_grad(trace: &ForwardTrace, net: &ReluNet, label: usize) -> Result<(f64, Vector)> {
    if label >= net.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            net.num_classes()
        )));
    }
    let (loss, residual) = softmax_xent(trace.logits.as_slice(), label);
    let mut delta = net.head.tr_matvec(&residual)?;
    let top = trace.preacts.last().unwrap();
    for (d, &a) in delta.iter_mut().zip(top.as_slice()) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    Ok((loss, Vector::from_vec(delta)))
}

/// Per-layer gradients of one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTrace {
    pub delta: Vector,
    /// `∂ℓ/∂a^1 … ∂ℓ/∂a^L`
    pub da: Vec<Vector>,
    /// `∂ℓ/∂W^1 … ∂ℓ/∂W^L`
    pub dw: Vec<Matrix>,
    /// Present when the trace came from [`gradients`].
    pub loss: Option<f64>,
}

/// Backpropagates `delta = ∂ℓ/∂a^L` through the ReLU stack.
///
/// `∂ℓ/∂a^l = 𝟙(a^l > 0) ⊙ (W^{l+1})ᵀ ∂ℓ/∂a^{l+1}` and
/// `∂ℓ/∂W^l = ∂ℓ/∂a^l (h^{l-1})ᵀ`.
pub fn backward(net: &ReluNet, trace: &ForwardTrace, delta: &Vector) -> Result<GradientTrace> {
    let depth = net.depth();
    let top = net.weights[depth - 1].rows();
    if delta.dim() != top {
        return Err(Error::DimensionMismatch {
            context: "backward delta",
            expected: top,
            actual: delta.dim(),
        });
    }
    if trace.preacts.len() != depth {
        return Err(Error::DimensionMismatch {
            context: "trace depth",
            expected: depth,
            actual: trace.preacts.len(),
        });
    }

    let mut da = vec![delta.clone(); depth];
    for l in (0..depth - 1).rev() {
        let mut g = net.weights[l + 1].tr_matvec(da[l + 1].as_slice())?;
        for (gi, &a) in g.iter_mut().zip(trace.preacts[l].as_slice()) {
            if a <= 0.0 {
                *gi = 0.0;
            }
        }
        da[l] = Vector::from_vec(g);
    }

    let dw = da
        .iter()
        .enumerate()
        .map(|(l, d)| outer(d.as_slice(), trace.act(l).as_slice()))
        .collect();

    Ok(GradientTrace {
        delta: delta.clone(),
        da,
        dw,
        loss: None,
    })
}

fn outer(u: &[f64], v: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(u.len(), v.len());
    for (i, &ui) in u.iter().enumerate() {
        m.row_mut(i).iter_mut().zip(v).for_each(|(o, &vj)| *o = ui * vj);
    }
    m
}

/// Forward pass, head loss and backward pass for one labelled input.
pub fn gradients(net: &ReluNet, x: &Vector, label: usize) -> Result<(ForwardTrace, GradientTrace)> {
    let trace = forward(net, x)?;
    let (loss, delta) = head_loss_grad(&trace, net, label)?;
    let mut grads = backward(net, &trace, &delta)?;
    grads.loss = Some(loss);
    Ok((trace, grads))
}

/// Loss of `net` on `(x, label)`.
pub fn loss(net: &ReluNet, x: &Vector, label: usize) -> Result<f64> {
    let trace = forward(net, x)?;
    cross_entropy(trace.logits.as_slice(), label)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerRatios {
    /// `‖h^l‖ / ‖x‖`
    pub act: f64,
    /// `‖∂ℓ/∂W^l‖_F / (‖δ‖ · ‖x‖)`
    pub grad: f64,
}

/// Per-layer activation and weight-gradient norm ratios (index 0 is layer 1).
pub fn norm_ratios(trace: &ForwardTrace, grads: &GradientTrace) -> Result<Vec<LayerRatios>> {
    let x_norm = trace.input.norm();
    let delta_norm = grads.delta.norm();
    if x_norm == 0.0 {
        return Err(Error::DegenerateInput("input has zero norm".into()));
    }
    if delta_norm == 0.0 {
        return Err(Error::DegenerateInput("delta has zero norm".into()));
    }
    Ok(trace
        .acts
        .iter()
        .zip(&grads.dw)
        .map(|(h, dw)| LayerRatios {
            act: h.norm() / x_norm,
            grad: dw.frobenius_norm() / (delta_norm * x_norm),
        })
        .collect())
}

/// Forward pass over a batch whose rows are samples.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub inputs: Matrix,
    pub preacts: Vec<Matrix>,
    pub acts: Vec<Matrix>,
    pub logits: Matrix,
}

impl BatchTrace {
    pub fn act(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.inputs
        } else {
            &self.acts[l - 1]
        }
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }
}

fn check_batch_input(net: &ReluNet, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "batch input",
            expected: net.input_dim(),
            actual: inputs.cols(),
        });
    }
    Ok(())
}

/// Batched forward pass: `A^l = H^{l-1} (W^l)ᵀ`.
pub fn forward_batch(net: &ReluNet, inputs: &Matrix) -> Result<BatchTrace> {
    check_batch_input(net, inputs)?;
    let mut preacts = Vec::with_capacity(net.depth());
    let mut acts: Vec<Matrix> = Vec::with_capacity(net.depth());
    for w in &net.weights {
        let prev = acts.last().unwrap_or(inputs);
        let a = prev.matmul_t(w)?;
        let mut h = a.clone();
        h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        preacts.push(a);
        acts.push(h);
    }
    let logits = acts.last().unwrap().matmul_t(&net.head)?;
    Ok(BatchTrace {
        inputs: inputs.clone(),
        preacts,
        acts,
        logits,
    })
}

/// Squared activation norms `‖h^l‖²` for each sample (rows) and layer (columns),
/// without retaining the intermediate activations.
pub fn forward_sq_norms(net: &ReluNet, inputs: &Matrix) -> Result<Matrix> {
    check_batch_input(net, inputs)?;
    let mut out = Matrix::zeros(inputs.rows(), net.depth());
    let mut h = inputs.clone();
    for (l, w) in net.weights.iter().enumerate() {
        h = h.matmul_t(w)?;
        h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        for (s, row) in h.row_iter().enumerate() {
            out.set(s, l, row.iter().map(|v| v * v).sum());
        }
    }
    Ok(out)
}

/// Batched [`head_loss_grad`]: per-sample losses and `δ` rows.
pub fn head_loss_grad_batch(trace: &BatchTrace, net: &ReluNet, labels: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    if labels.len() != trace.batch_size() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: trace.batch_size(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.num_classes()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let mut residuals = Matrix::zeros(labels.len(), net.num_classes());
    let mut losses = Vec::with_capacity(labels.len());
    for (s, &label) in labels.iter().enumerate() {
        let (loss, r) = softmax_xent(trace.logits.row(s), label);
        residuals.row_mut(s).copy_from_slice(&r);
        losses.push(loss);
    }
    let mut deltas = residuals.matmul(&net.head)?;
    mask_inactive(&mut deltas, trace.preacts.last().unwrap());
    Ok((losses, deltas))
}

fn mask_inactive(g: &mut Matrix, preacts: &Matrix) {
    for (gi, &a) in g.as_mut_slice().iter_mut().zip(preacts.as_slice()) {
        if a <= 0.0 {
            *gi = 0.0;
        }
    }
}

/// Batched backward pass returning `∂ℓ/∂A^l` for `l = 1..L` (rows are samples).
pub fn backward_batch(net: &ReluNet, trace: &BatchTrace, deltas: &Matrix) -> Result<Vec<Matrix>> {
    let depth = net.depth();
    if deltas.shape() != trace.preacts[depth - 1].shape() {
        return Err(Error::DimensionMismatch {
            context: "batch deltas",
            expected: trace.preacts[depth - 1].cols(),
            actual: deltas.cols(),
        });
    }
    let mut da = vec![deltas.clone(); depth];
    for l in (0..depth - 1).rev() {
        let mut g = da[l + 1].matmul(&net.weights[l + 1])?;
        mask_inactive(&mut g, &trace.preacts[l]);
        da[l] = g;
    }
    Ok(da)
}

/// Per-sample, per-layer norm ratios from a batched pass.
///
/// The weight-gradient norm uses `‖∂ℓ/∂W^l‖_F = ‖∂ℓ/∂a^l‖ · ‖h^{l-1}‖`, which
/// holds exactly because the gradient is the outer product of those vectors.
/// Samples with a zero input or a zero `δ` yield `None`.
pub fn batch_norm_ratios(trace: &BatchTrace, da: &[Matrix]) -> Vec<Option<Vec<LayerRatios>>> {
    let depth = da.len();
    let top = &da[depth - 1];
    (0..trace.batch_size())
        .map(|s| {
            let x_norm = linalg::norm(trace.inputs.row(s));
            let delta_norm = linalg::norm(top.row(s));
            if x_norm == 0.0 || delta_norm == 0.0 {
                return None;
            }
            Some(
                (0..depth)
                    .map(|l| LayerRatios {
                        act: linalg::norm(trace.acts[l].row(s)) / x_norm,
                        grad: linalg::norm(da[l].row(s)) * linalg::norm(trace.act(l).row(s)) / (delta_norm * x_norm),
                    })
                    .collect(),
            )
        })
        .collect()
}
