//! Dense ReLU classifier with exact manual gradients.
//!
//! Parameters live in one flat `Vec<f64>`: for each layer, the weight matrix
//! in row-major order (`out × in`) followed by the bias vector (`out`). The
//! flat layout makes federated averaging and momentum buffers plain vector
//! arithmetic, and fixes an iteration order so results are bit-identical no
//! matter how the surrounding code is parallelized.

mod loss;
mod optim;

pub use loss::{CrossEntropy, Loss, DEFAULT_EPSILON_CLIP, MAX_EPSILON_CLIP};
pub(crate) use loss::validate_clip;
pub use optim::{weighted_average, OptimizerState};

use rand::Rng;

use crate::error::{Error, Result};

/// Architecture of a dense ReLU network: `input_dim → hidden_dims… → num_classes`,
/// ReLU on every hidden layer, raw logits at the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be ≥ 1"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "must be ≥ 2"));
        }
        if let Some(&h) = hidden_dims.iter().find(|&&h| h == 0) {
            return Err(Error::invalid("hidden_dims", format!("layer width {h} must be ≥ 1")));
        }
        Ok(ModelSpec {
            input_dim,
            hidden_dims,
            num_classes,
        })
    }

    /// `(out, in)` shape of each affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((self.num_classes, fan_in));
        shapes
    }

    /// Total parameter count: Σ over layers of (fan_in + 1)·fan_out.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(out, inp)| out * (inp + 1))
            .sum()
    }
}

/// Flat parameter vector tied to its [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    values: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters (uniform predictions regardless of input).
    pub fn zeros(spec: &ModelSpec) -> Self {
        ModelParams {
            spec: spec.clone(),
            values: vec![0.0; spec.param_count()],
        }
    }

    /// Weights uniform in ±1/√fan_in per layer, biases zero. Deterministic
    /// given the generator state; draws layer by layer in storage order.
    pub fn init(spec: &ModelSpec, rng: &mut impl Rng) -> Self {
        let mut values = Vec::with_capacity(spec.param_count());
        for (out, inp) in spec.layer_shapes() {
            let scale = 1.0 / (inp as f64).sqrt();
            for _ in 0..out * inp {
                let u: f64 = rng.random();
                values.push(scale * (2.0 * u - 1.0));
            }
            values.extend(std::iter::repeat_n(0.0, out));
        }
        ModelParams {
            spec: spec.clone(),
            values,
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::DimMismatch {
                context: "ModelParams::from_values",
                expected: spec.param_count(),
                actual: values.len(),
            });
        }
        Ok(ModelParams {
            spec: spec.clone(),
            values,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(weights, biases)` slices of layer `l`, weights row-major `(out × in)`.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w_off, b_off, out, inp) = self.layer_offsets(l);
        (
            &self.values[w_off..w_off + out * inp],
            &self.values[b_off..b_off + out],
        )
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for (idx, (out, inp)) in self.spec.layer_shapes().into_iter().enumerate() {
            if idx == l {
                return (off, off + out * inp, out, inp);
            }
            off += out * (inp + 1);
        }
        unreachable!("layer index {l} out of range");
    }

    fn num_layers(&self) -> usize {
        self.spec.hidden_dims.len() + 1
    }

    /// Raw output-layer activations (pre-softmax).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimMismatch {
                context: "logits input",
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        let layers = self.num_layers();
        let mut a = x.to_vec();
        for l in 0..layers {
            let mut z = self.affine(l, &a);
            if l + 1 < layers {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Softmax class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    fn affine(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let inp = input.len();
        let out = b.len();
        let mut z = Vec::with_capacity(out);
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            z.push(acc);
        }
        z
    }
}

/// Numerically stable softmax (max-subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximal entry. Precondition: nonempty slice.
pub fn argmax(xs: &[f64]) -> usize {
    debug_assert!(!xs.is_empty());
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean per-sample loss over the batch and the exact gradient of that mean
/// with respect to every parameter.
pub fn loss_and_grad<L: Loss + ?Sized>(
    params: &ModelParams,
    batch: &[(&[f64], usize)],
    loss: &L,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss_and_grad"));
    }
    let c = params.spec().num_classes;
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for &(x, label) in batch {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: c,
            });
        }
        total += backprop_one(params, x, label, loss, &mut grad)?;
    }
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((total * inv, grad))
}

/// One sample's loss; accumulates its (unscaled) parameter gradient into `grad`.
fn backprop_one<L: Loss + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    loss: &L,
    grad: &mut [f64],
) -> Result<f64> {
    if x.len() != params.spec().input_dim {
        return Err(Error::DimMismatch {
            context: "loss_and_grad input",
            expected: params.spec().input_dim,
            actual: x.len(),
        });
    }
    let layers = params.num_layers();

    // Forward pass, keeping hidden pre-activations (for the ReLU mask) and
    // post-activations (for the weight gradients).
    let mut hidden_pre: Vec<Vec<f64>> = Vec::with_capacity(layers - 1);
    let mut hidden_post: Vec<Vec<f64>> = Vec::with_capacity(layers - 1);
    let mut a = x.to_vec();
    for l in 0..layers - 1 {
        let z = params.affine(l, &a);
        let mut post = z.clone();
        for v in &mut post {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        hidden_pre.push(z);
        a = post.clone();
        hidden_post.push(post);
    }
    let logits = params.affine(layers - 1, &a);
    let probs = softmax(&logits);
    let (loss_value, mut dz) = loss.loss_and_logit_grad(&probs, label);

    // Backward pass.
    for l in (0..layers).rev() {
        let a_prev: &[f64] = if l == 0 { x } else { &hidden_post[l - 1] };
        let (w_off, b_off, out, inp) = params.layer_offsets(l);
        let (w, _) = params.layer(l);
        for o in 0..out {
            let d = dz[o];
            let g_row = &mut grad[w_off + o * inp..w_off + (o + 1) * inp];
            for (g, &ai) in g_row.iter_mut().zip(a_prev) {
                *g += d * ai;
            }
            grad[b_off + o] += d;
        }
        if l > 0 {
            let pre = &hidden_pre[l - 1];
            let mut dz_prev = vec![0.0; inp];
            for (i, dp) in dz_prev.iter_mut().enumerate() {
                if pre[i] > 0.0 {
                    let mut acc = 0.0;
                    for o in 0..out {
                        acc += w[o * inp + i] * dz[o];
                    }
                    *dp = acc;
                }
            }
            dz = dz_prev;
        }
    }
    Ok(loss_value)
}

/// Fraction of examples whose argmax prediction matches the given label.
pub fn accuracy<'a>(
    params: &ModelParams,
    examples: impl IntoIterator<Item = (&'a [f64], usize)>,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut n = 0usize;
    for (x, label) in examples {
        let probs = params.forward(x)?;
        if argmax(&probs) == label {
            correct += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("accuracy"));
    }
    Ok(correct as f64 / n as f64)
}
