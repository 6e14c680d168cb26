//! Fully connected classifier with softmax cross-entropy loss.
//!
//! Hidden layers use the configured activation; the last layer emits raw
//! logits. Weight matrices are stored row-major as `outputs x inputs`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// One buffer per layer, shaped like the model parameters. Used for
/// gradients and momentum velocity alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuffers {
    pub layers: Vec<LayerParams>,
}

pub type Gradients = ParamBuffers;
pub type Velocity = ParamBuffers;

impl ParamBuffers {
    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| LayerParams {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn num_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn same_shape(&self, other: &ParamBuffers) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.len() == b.weights.len() && a.biases.len() == b.biases.len()
            })
    }
}

/// Addresses one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamIndex {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    activation: Activation,
    params: ParamBuffers,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!(
            "need input and output widths, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!(
            "layer widths must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamBuffers::zeros(dims);
        for (layer, w) in params.layers.iter_mut().zip(dims.windows(2)) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for v in &mut layer.weights {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params,
        })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params: ParamBuffers::zeros(dims),
        })
    }

    pub fn from_params(
        dims: &[usize],
        activation: Activation,
        params: ParamBuffers,
    ) -> Result<Self> {
        check_dims(dims)?;
        if !params.same_shape(&ParamBuffers::zeros(dims)) {
            return Err(Error::Shape(format!(
                "parameters do not match layer widths {dims:?}"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &ParamBuffers {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamBuffers {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    /// Every scalar parameter position, layer by layer, weights before biases.
    pub fn param_indices(&self) -> Vec<ParamIndex> {
        let mut out = Vec::with_capacity(self.num_params());
        for (layer, p) in self.params.layers.iter().enumerate() {
            out.extend((0..p.weights.len()).map(|index| ParamIndex::Weight { layer, index }));
            out.extend((0..p.biases.len()).map(|index| ParamIndex::Bias { layer, index }));
        }
        out
    }

    pub fn get(&self, at: ParamIndex) -> f64 {
        read(&self.params, at)
    }

    pub fn set(&mut self, at: ParamIndex, v: f64) {
        match at {
            ParamIndex::Weight { layer, index } => self.params.layers[layer].weights[index] = v,
            ParamIndex::Bias { layer, index } => self.params.layers[layer].biases[index] = v,
        }
    }

    fn check_batch(&self, inputs: &[f64], labels: &[usize]) -> Result<usize> {
        let batch = labels.len();
        if batch == 0 {
            return Err(Error::domain("empty batch"));
        }
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "{} input values for {batch} samples of width {}",
                inputs.len(),
                self.input_dim()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= self.output_dim()) {
            return Err(Error::Shape(format!(
                "label {l} outside {} model outputs",
                self.output_dim()
            )));
        }
        Ok(batch)
    }

    /// Pre-activations and activations of every layer; `acts[0]` is the input.
    fn forward_trace(&self, inputs: &[f64], batch: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let last = self.params.layers.len() - 1;
        let mut pre = Vec::with_capacity(last + 1);
        let mut acts = vec![inputs.to_vec()];
        for (l, p) in self.params.layers.iter().enumerate() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = &acts[l];
            let mut z = vec![0.0; batch * n_out];
            for b in 0..batch {
                let row = &x[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let w = &p.weights[o * n_in..(o + 1) * n_in];
                    z[b * n_out + o] =
                        p.biases[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    /// Logits for a batch, row-major `batch x outputs`.
    pub fn logits(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if !inputs.len().is_multiple_of(self.input_dim()) {
            return Err(Error::Shape(format!(
                "{} input values is not a multiple of width {}",
                inputs.len(),
                self.input_dim()
            )));
        }
        let batch = inputs.len() / self.input_dim();
        let (_, mut acts) = self.forward_trace(inputs, batch);
        Ok(acts.pop().unwrap())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, inputs: &[f64], labels: &[usize]) -> Result<f64> {
        let batch = self.check_batch(inputs, labels)?;
        let (_, acts) = self.forward_trace(inputs, batch);
        let (loss, _) = softmax_cross_entropy(acts.last().unwrap(), labels, self.output_dim());
        finite_loss(loss)
    }

    /// Index of the largest logit per sample; ties go to the lowest class.
    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<usize>> {
        let logits = self.logits(inputs)?;
        Ok(logits.chunks(self.output_dim()).map(argmax).collect())
    }
}

fn read(p: &ParamBuffers, at: ParamIndex) -> f64 {
    match at {
        ParamIndex::Weight { layer, index } => p.layers[layer].weights[index],
        ParamIndex::Bias { layer, index } => p.layers[layer].biases[index],
    }
}

impl ParamBuffers {
    pub fn get(&self, at: ParamIndex) -> f64 {
        read(self, at)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numerical(format!("loss is {loss}")))
    }
}

/// Mean loss and `d loss / d logits` (already divided by the batch size).
fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        for c in 0..classes {
            let p = (row[c] - log_z).exp();
            grad[b * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (total / batch as f64, grad)
}

/// Mean cross-entropy of the batch and its exact gradient with respect to
/// every weight and bias.
pub fn forward_backward(
    model: &MlpModel,
    inputs: &[f64],
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    let batch = model.check_batch(inputs, labels)?;
    let (pre, acts) = model.forward_trace(inputs, batch);
    let (loss, mut delta) = softmax_cross_entropy(acts.last().unwrap(), labels, model.output_dim());
    let loss = finite_loss(loss)?;

    let mut grads = ParamBuffers::zeros(&model.dims);
    for l in (0..model.params.layers.len()).rev() {
        let (n_in, n_out) = (model.dims[l], model.dims[l + 1]);
        let x = &acts[l];
        let g = &mut grads.layers[l];
        for b in 0..batch {
            let row = &x[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                let d = delta[b * n_out + o];
                g.biases[o] += d;
                for (gw, xi) in g.weights[o * n_in..(o + 1) * n_in].iter_mut().zip(row) {
                    *gw += d * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        // push delta through this layer's weights and the previous activation
        let w = &model.params.layers[l].weights;
        let mut prev = vec![0.0; batch * n_in];
        for b in 0..batch {
            for o in 0..n_out {
                let d = delta[b * n_out + o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev[b * n_in..(b + 1) * n_in]
                    .iter_mut()
                    .zip(&w[o * n_in..(o + 1) * n_in])
                {
                    *p += d * wi;
                }
            }
        }
        for (i, p) in prev.iter_mut().enumerate() {
            *p *= model.activation.derivative(pre[l - 1][i], acts[l][i]);
        }
        delta = prev;
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        for classes in [2usize, 3, 10] {
            let model = MlpModel::zeros(&[4, classes], Activation::Tanh).unwrap();
            let x = vec![0.3; 4 * 5];
            let y: Vec<usize> = (0..5).map(|i| i % classes).collect();
            let (loss, _) = forward_backward(&model, &x, &y).unwrap();
            assert!((loss - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_bias_gradient_is_softmax_minus_onehot() {
        let classes = 3;
        let model = MlpModel::zeros(&[2, classes], Activation::Relu).unwrap();
        let x = vec![1.0, -2.0, 0.5, 0.5, 3.0, 1.0, -1.0, 0.0];
        let y = vec![0, 2, 2, 1];
        let (_, g) = forward_backward(&model, &x, &y).unwrap();
        for c in 0..classes {
            let onehot_mean = y.iter().filter(|&&l| l == c).count() as f64 / y.len() as f64;
            let expected = 1.0 / classes as f64 - onehot_mean;
            assert!((g.layers[0].biases[c] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let model = MlpModel::new(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        assert!(matches!(
            forward_backward(&model, &[1.0; 5], &[0, 1]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward_backward(&model, &[1.0; 3], &[2]),
            Err(Error::Shape(_))
        ));
        assert!(forward_backward(&model, &[], &[]).is_err());
        assert!(MlpModel::new(&[3], Activation::Tanh, 1).is_err());
        assert!(MlpModel::new(&[3, 0, 2], Activation::Tanh, 1).is_err());
    }

    #[test]
    fn non_finite_loss_is_surfaced() {
        let mut model = MlpModel::zeros(&[1, 2], Activation::Tanh).unwrap();
        model.set(ParamIndex::Bias { layer: 0, index: 0 }, f64::NAN);
        assert!(matches!(
            forward_backward(&model, &[1.0], &[0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpModel::new(&[2, 8, 3], Activation::Relu, 9).unwrap();
        let b = MlpModel::new(&[2, 8, 3], Activation::Relu, 9).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(a.params().layers[0]
            .weights
            .iter()
            .all(|w| w.abs() <= limit));
        assert!(a.params().layers[0].biases.iter().all(|&b| b == 0.0));
        assert_eq!(a.num_params(), 2 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(a.param_indices().len(), a.num_params());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
