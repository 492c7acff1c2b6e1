//! Small dense networks with tanh hidden layers, trained by plain SGD.
//!
//! Three output heads cover the networks the trainer needs: a masked softmax
//! over questions (policy), a sigmoid scalar (value) and a linear scalar
//! (reward estimator).

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;

use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    MaskedSoftmax,
    SigmoidScalar,
    LinearScalar,
}

impl Head {
    pub fn as_str(&self) -> &'static str {
        match self {
            Head::MaskedSoftmax => "masked-softmax",
            Head::SigmoidScalar => "sigmoid-scalar",
            Head::LinearScalar => "linear-scalar",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Head {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked-softmax" => Ok(Head::MaskedSoftmax),
            "sigmoid-scalar" => Ok(Head::SigmoidScalar),
            "linear-scalar" => Ok(Head::LinearScalar),
            other => Err(format!("unknown head type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub gradient_clip_norm: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            gradient_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NnError::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if self.gradient_clip_norm.is_nan() || self.gradient_clip_norm <= 0.0 {
            return Err(NnError::Config(format!(
                "gradient_clip_norm {}",
                self.gradient_clip_norm
            )));
        }
        Ok(())
    }
}

/// Whether an update climbs an objective or descends a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

/// Weights are `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.biases
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
            })
            .collect()
    }
}

/// Parameter-shaped gradient (or update) buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    pub fn scale(&mut self, k: f64) {
        self.values_mut().for_each(|g| *g *= k);
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    head: Head,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by each hidden layer's tanh output.
    activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over entries whose mask flag is false; masked entries get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, NnError> {
    let allowed = |i: usize| mask.is_none_or(|m| !m[i]);
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(NnError::Dimension {
                expected: logits.len(),
                actual: m.len(),
            });
        }
    }
    let max = (0..logits.len())
        .filter(|&i| allowed(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnError::EmptyMask);
    }
    let mut out: Vec<f64> = (0..logits.len())
        .map(|i| if allowed(i) { (logits[i] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

impl DenseNetwork {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], head: Head, rng: &mut R) -> Result<Self, NnError> {
        let mut net = Self::zeros(dims, head)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], head: Head) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::Config(format!("layer dims {dims:?}")));
        }
        let out = *dims.last().unwrap();
        if head != Head::MaskedSoftmax && out != 1 {
            return Err(NnError::Config(format!("{head} head needs one output, got {out}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            head,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn parameter(&self, index: usize) -> f64 {
        *self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .nth(index)
            .expect("parameter index in range")
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        *self
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
            .nth(index)
            .expect("parameter index in range") = value;
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|w| w.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::Dimension {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        self.check_input(input)?;
        let mut activations = vec![input.to_vec()];
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            let z = layer.apply(activations.last().unwrap());
            activations.push(z.into_iter().map(f64::tanh).collect());
        }
        let logits = self.layers[last].apply(activations.last().unwrap());
        Ok(ForwardCache { activations, logits })
    }

    /// Output of the network: a distribution for the softmax head, a
    /// one-element vector for scalar heads. `mask[i] == true` excludes output `i`.
    pub fn forward(&self, input: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, NnError> {
        let cache = self.forward_cached(input)?;
        self.activate(&cache.logits, mask)
    }

    fn activate(&self, logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, NnError> {
        match self.head {
            Head::MaskedSoftmax => masked_softmax(logits, mask),
            _ if mask.is_some() => Err(NnError::Head {
                expected: Head::MaskedSoftmax.as_str(),
                actual: self.head.as_str(),
            }),
            Head::SigmoidScalar => Ok(vec![sigmoid(logits[0])]),
            Head::LinearScalar => Ok(vec![logits[0]]),
        }
    }

    pub fn scalar(&self, input: &[f64]) -> Result<f64, NnError> {
        Ok(self.forward(input, None)?[0])
    }

    /// Backpropagates `d_logits` (derivative of some objective with respect
    /// to the output pre-activations) to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64]) -> Result<Gradients, NnError> {
        if d_logits.len() != self.output_dim() {
            return Err(NnError::Dimension {
                expected: self.output_dim(),
                actual: d_logits.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_logits.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &cache.activations[k];
            let g = &mut grads.layers[k];
            g.biases.copy_from_slice(&delta);
            for (row, d) in g.weights.chunks_exact_mut(layer.inputs).zip(&delta) {
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw = d * xi;
                }
            }
            if k > 0 {
                // x is tanh output of the previous layer
                delta = (0..layer.inputs)
                    .map(|i| {
                        let back: f64 = (0..layer.outputs)
                            .map(|o| layer.weights[o * layer.inputs + i] * delta[o])
                            .sum();
                        back * (1.0 - x[i] * x[i])
                    })
                    .collect();
            }
        }
        Ok(grads)
    }

    fn require(&self, head: Head) -> Result<(), NnError> {
        if self.head != head {
            return Err(NnError::Head {
                expected: head.as_str(),
                actual: self.head.as_str(),
            });
        }
        Ok(())
    }

    /// `advantage * grad log pi(action | input)` for the masked-softmax head.
    pub fn log_prob_gradient(
        &self,
        input: &[f64],
        mask: Option<&[bool]>,
        action: usize,
        advantage: f64,
    ) -> Result<(f64, Gradients), NnError> {
        self.require(Head::MaskedSoftmax)?;
        let cache = self.forward_cached(input)?;
        let probs = masked_softmax(&cache.logits, mask)?;
        if action >= probs.len() || mask.is_some_and(|m| m[action]) {
            return Err(NnError::Config(format!("action {action} is not selectable")));
        }
        let d: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let excluded = mask.is_some_and(|m| m[i]);
                if excluded {
                    0.0
                } else {
                    advantage * (if i == action { 1.0 } else { 0.0 } - p)
                }
            })
            .collect();
        Ok((probs[action].ln(), self.backward(&cache, &d)?))
    }

    /// Loss `0.5 * (sigmoid(z) - target)^2` and its gradient.
    pub fn sigmoid_mse_gradient(&self, input: &[f64], target: f64) -> Result<(f64, Gradients), NnError> {
        self.require(Head::SigmoidScalar)?;
        let cache = self.forward_cached(input)?;
        let y = sigmoid(cache.logits[0]);
        let err = y - target;
        let grads = self.backward(&cache, &[err * y * (1.0 - y)])?;
        Ok((0.5 * err * err, grads))
    }

    /// Loss `0.5 * (z - target)^2` and its gradient.
    pub fn linear_mse_gradient(&self, input: &[f64], target: f64) -> Result<(f64, Gradients), NnError> {
        self.require(Head::LinearScalar)?;
        let cache = self.forward_cached(input)?;
        let err = cache.logits[0] - target;
        let grads = self.backward(&cache, &[err])?;
        Ok((0.5 * err * err, grads))
    }

    /// Clips `grads` to the configured global norm and applies one step.
    pub fn sgd_step(&mut self, grads: &Gradients, cfg: &OptimizerConfig, direction: Direction) -> Result<(), NnError> {
        cfg.validate()?;
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len() || g.biases.len() != l.biases.len())
        {
            return Err(NnError::Dimension {
                expected: self.num_parameters(),
                actual: grads.values().count(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        let norm = grads.norm();
        let clip = if norm > cfg.gradient_clip_norm {
            cfg.gradient_clip_norm / norm
        } else {
            1.0
        };
        let sign = match direction {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        };
        let step = sign * cfg.learning_rate * clip;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w += step * gw;
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b += step * gb;
            }
        }
        if !self.is_finite() {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(())
    }

    /// Text checkpoint: a header line `eq20-net v1 <head> <dims...>` followed
    /// by one line per tensor (each layer's weights, then its biases).
    pub fn to_text(&self) -> String {
        let mut out = format!("eq20-net v1 {}", self.head);
        for d in &self.dims {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        for layer in &self.layers {
            for tensor in [&layer.weights, &layer.biases] {
                let line: Vec<String> = tensor.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let fail = |line: usize, message: String| NnError::Format { line, message };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fail(1, "empty document".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("eq20-net") || fields.next() != Some("v1") {
            return Err(fail(1, "expected `eq20-net v1` header".into()));
        }
        let head: Head = fields
            .next()
            .ok_or_else(|| fail(1, "missing head type".into()))?
            .parse()
            .map_err(|e| fail(1, e))?;
        let dims = fields
            .map(|f| f.parse::<usize>().map_err(|e| fail(1, format!("dimension `{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        // Guard against absurd allocations from hostile headers.
        let total: usize = dims
            .windows(2)
            .try_fold(0usize, |acc, w| {
                w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
            })
            .ok_or_else(|| fail(1, "parameter count overflows".into()))?;
        if total > 50_000_000 {
            return Err(fail(1, format!("{total} parameters exceeds limit")));
        }
        let mut net = Self::zeros(&dims, head).map_err(|e| fail(1, e.to_string()))?;
        let mut line_no = 1;
        for layer in &mut net.layers {
            for tensor in [&mut layer.weights, &mut layer.biases] {
                line_no += 1;
                let line = lines
                    .next()
                    .ok_or_else(|| fail(line_no, "missing parameter line".into()))?;
                let values = line
                    .split_whitespace()
                    .map(|v| match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(x),
                        Ok(_) => Err(fail(line_no, format!("non-finite value `{v}`"))),
                        Err(e) => Err(fail(line_no, format!("`{v}`: {e}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if values.len() != tensor.len() {
                    return Err(fail(
                        line_no,
                        format!("expected {} values, found {}", tensor.len(), values.len()),
                    ));
                }
                *tensor = values;
            }
        }
        if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
            return Err(fail(
                line_no + 1,
                format!("trailing content `{}`", extra.chars().take(20).collect::<String>()),
            ));
        }
        Ok(net)
    }
}
