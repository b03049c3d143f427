//! Dense Q-network substrate: forward evaluation, exact backpropagation,
//! an RMSProp-style optimizer, tempered softmax, and checkpointing.
//!
//! Networks are stacks of fully connected layers over `f64` with ReLU or
//! identity activations. There is no autodiff; the backward pass is written
//! out for this fixed architecture. All randomness comes in through the
//! caller's RNG, and a cloned network evaluates bit-identically to its
//! source, which is what target-network syncing relies on.

mod checkpoint;
mod linalg;
mod softmax;

pub use checkpoint::{load_checkpoint, save_checkpoint, Metadata};
pub(crate) use checkpoint::{load_distilled_checkpoint, save_distilled_checkpoint};
pub use softmax::{distill_loss_and_grad, softmax_tau};

use rand::Rng;

use crate::error::{Error, Result};
pub(crate) use linalg::{axpy, dot, Mat};

/// Elementwise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Explicit layer contents for building networks with hand-set weights.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    /// Row-major: one row per output unit, one column per input.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Input width at which a layer keeps a transposed weight copy and takes
/// the sparse path for mostly-zero rows. One-hot tile channels leave the
/// observation vector ~5/6 zeros, and the first layer owns nearly all the
/// multiply-accumulates, so this only needs to fire there.
const SPARSE_IN_DIM: usize = 256;

#[derive(Debug, Clone)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Mat, // out_dim x in_dim
    /// Transposed copy of `weights` (in_dim x out_dim) for wide layers,
    /// refreshed after every parameter change.
    weights_t: Option<Mat>,
    bias: Vec<f64>,
}

/// Collects `(index, value)` pairs for the nonzero entries of `xi` into
/// `nz` and reports whether the row is sparse enough to be worth it.
fn gather_nonzero(xi: &[f64], nz: &mut Vec<(usize, f64)>) -> bool {
    nz.clear();
    for (j, &v) in xi.iter().enumerate() {
        if v != 0.0 {
            nz.push((j, v));
        }
    }
    nz.len() * 2 < xi.len()
}

fn transpose_if_wide(weights: &Mat) -> Option<Mat> {
    (weights.cols >= SPARSE_IN_DIM).then(|| {
        let mut t = Mat::zeros(weights.cols, weights.rows);
        for o in 0..weights.rows {
            for (j, &w) in weights.row(o).iter().enumerate() {
                t.data[j * weights.rows + o] = w;
            }
        }
        t
    })
}

impl Layer {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
        let limit = 1.0 / (in_dim as f64).sqrt();
        let mut weights = Mat::zeros(out_dim, in_dim);
        for w in weights.data.iter_mut() {
            *w = rng.gen_range(-limit..limit);
        }
        let bias = (0..out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        Layer {
            in_dim,
            out_dim,
            activation,
            weights_t: transpose_if_wide(&weights),
            weights,
            bias,
        }
    }

    fn refresh_transpose(&mut self) {
        if let Some(t) = &mut self.weights_t {
            for o in 0..self.out_dim {
                for (j, &w) in self.weights.row(o).iter().enumerate() {
                    t.data[j * self.out_dim + o] = w;
                }
            }
        }
    }

    /// Returns (post-activation, pre-activation) for a batch.
    fn forward(&self, x: &Mat) -> (Mat, Mat) {
        debug_assert_eq!(x.cols, self.in_dim);
        let mut pre = Mat::zeros(x.rows, self.out_dim);
        let mut nz = Vec::new();
        for i in 0..x.rows {
            let xi = x.row(i);
            let zi = pre.row_mut(i);
            match &self.weights_t {
                Some(t) if gather_nonzero(xi, &mut nz) => {
                    zi.copy_from_slice(&self.bias);
                    for &(j, v) in &nz {
                        axpy(v, t.row(j), zi);
                    }
                }
                _ => {
                    for (o, z) in zi.iter_mut().enumerate() {
                        *z = dot(xi, self.weights.row(o)) + self.bias[o];
                    }
                }
            }
        }
        let mut post = pre.clone();
        if self.activation == Activation::Relu {
            for v in post.data.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        (post, pre)
    }

    /// Backpropagates `d_post` through activation and affine transform.
    /// `x` is this layer's input batch, `pre` its cached pre-activations.
    fn backward(
        &self,
        x: &Mat,
        pre: &Mat,
        d_post: &Mat,
        want_d_input: bool,
    ) -> (LayerGrad, Option<Mat>) {
        let rows = x.rows;
        let mut d_pre = d_post.clone();
        if self.activation == Activation::Relu {
            for (g, z) in d_pre.data.iter_mut().zip(&pre.data) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let mut d_w = Mat::zeros(self.out_dim, self.in_dim);
        let mut d_b = vec![0.0; self.out_dim];
        if self.weights_t.is_some() {
            // Wide layer: accumulate the weight gradient transposed so each
            // nonzero input entry turns into one contiguous pass over the
            // output units, then flip it back at the end.
            let mut d_wt = Mat::zeros(self.in_dim, self.out_dim);
            let mut nz = Vec::new();
            for i in 0..rows {
                let xi = x.row(i);
                let gi = d_pre.row(i);
                for (o, &g) in gi.iter().enumerate() {
                    if g != 0.0 {
                        d_b[o] += g;
                    }
                }
                if gather_nonzero(xi, &mut nz) {
                    for &(j, v) in &nz {
                        axpy(v, gi, d_wt.row_mut(j));
                    }
                } else {
                    for (j, &v) in xi.iter().enumerate() {
                        if v != 0.0 {
                            axpy(v, gi, d_wt.row_mut(j));
                        }
                    }
                }
            }
            for j in 0..self.in_dim {
                let src = d_wt.row(j);
                for (o, &v) in src.iter().enumerate() {
                    d_w.data[o * self.in_dim + j] = v;
                }
            }
        } else {
            for i in 0..rows {
                let xi = x.row(i);
                let gi = d_pre.row(i);
                for (o, &g) in gi.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, xi, d_w.row_mut(o));
                        d_b[o] += g;
                    }
                }
            }
        }
        let d_input = want_d_input.then(|| {
            let mut d_x = Mat::zeros(rows, self.in_dim);
            for i in 0..rows {
                let gi = d_pre.row(i);
                let dxi = d_x.row_mut(i);
                for (o, &g) in gi.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, self.weights.row(o), dxi);
                    }
                }
            }
            d_x
        });
        (LayerGrad { d_w, d_b }, d_input)
    }

    fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerGrad {
    d_w: Mat,
    d_b: Vec<f64>,
}

/// Per-layer gradients for one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Flattened in [`QNetwork::flat_params`] order.
    pub(crate) fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.d_w.data);
            out.extend_from_slice(&g.d_b);
        }
        out
    }
}

/// Cached activations from a batched forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// `acts[0]` is the input batch; `acts[l+1]` the output of layer `l`.
    acts: Vec<Mat>,
    pres: Vec<Mat>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &Mat {
        self.acts.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone)]
struct LayerOpt {
    acc_w: Mat,
    acc_b: Vec<f64>,
}

/// RMSProp accumulator decay.
const RMSPROP_DECAY: f64 = 0.95;
/// RMSProp denominator epsilon.
const RMSPROP_EPS: f64 = 1e-6;

/// A training batch for the masked TD regression: per sample, one scalar
/// target `y` and the output index it applies to. Gradients flow only
/// through that index.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub target_values: Vec<f64>,
    pub target_indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, in_dim: usize, out_dim: usize) {
        assert!(!self.inputs.is_empty(), "empty training batch");
        assert_eq!(self.inputs.len(), self.target_values.len(), "batch field lengths differ");
        assert_eq!(self.inputs.len(), self.target_indices.len(), "batch field lengths differ");
        for row in &self.inputs {
            assert_eq!(row.len(), in_dim, "batch input length {} != input_dim {}", row.len(), in_dim);
        }
        for &idx in &self.target_indices {
            assert!(idx < out_dim, "target index {idx} out of range for {out_dim} outputs");
        }
    }
}

/// A dense value network with its optimizer state.
#[derive(Debug, Clone)]
pub struct QNetwork {
    layers: Vec<Layer>,
    opt: Vec<LayerOpt>,
}

impl QNetwork {
    /// Standard Q-network shape: ReLU hidden layers, identity output.
    pub fn dense<R: Rng>(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let act = if layers.len() + 1 == dims.len() - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::init(w[0], w[1], act, rng));
        }
        Self::from_layers(layers)
    }

    /// All-ReLU stack with no identity head, used as a shared trunk.
    pub fn relu_stack<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "trunk needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| Layer::init(w[0], w[1], Activation::Relu, rng))
            .collect();
        Self::from_layers(layers)
    }

    /// Builds a network from explicit weights, validating the dimension chain.
    pub fn from_layer_specs(specs: Vec<LayerSpec>) -> Self {
        assert!(!specs.is_empty(), "network needs at least one layer");
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let out_dim = spec.weights.len();
            assert!(out_dim > 0, "layer has no output units");
            let in_dim = spec.weights[0].len();
            assert_eq!(spec.bias.len(), out_dim, "bias length != output units");
            let weights = Mat::from_rows(spec.weights);
            layers.push(Layer {
                in_dim,
                out_dim,
                activation: spec.activation,
                weights_t: transpose_if_wide(&weights),
                weights,
                bias: spec.bias,
            });
        }
        Self::from_layers(layers)
    }

    fn from_layers(layers: Vec<Layer>) -> Self {
        for w in layers.windows(2) {
            assert_eq!(
                w[0].out_dim, w[1].in_dim,
                "inconsistent layer dimensions: {} -> {}",
                w[0].out_dim, w[1].in_dim
            );
        }
        let opt = layers
            .iter()
            .map(|l| LayerOpt {
                acc_w: Mat::zeros(l.out_dim, l.in_dim),
                acc_b: vec![0.0; l.out_dim],
            })
            .collect();
        QNetwork { layers, opt }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    /// `(in_dim, out_dim, activation)` per layer, in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.in_dim, l.out_dim, l.activation))
            .collect()
    }

    /// Copies the layers out as explicit specs, e.g. to split a trained
    /// network into a trunk and an output head.
    pub fn to_layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                weights: (0..l.out_dim).map(|o| l.weights.row(o).to_vec()).collect(),
                bias: l.bias.clone(),
                activation: l.activation,
            })
            .collect()
    }

    /// Evaluates `Q(s, .)` for a single observation vector. Pure.
    pub fn forward(&self, obs: &[f64]) -> Vec<f64> {
        assert_eq!(
            obs.len(),
            self.input_dim(),
            "observation length {} != input_dim {}",
            obs.len(),
            self.input_dim()
        );
        let mut x = Mat {
            rows: 1,
            cols: obs.len(),
            data: obs.to_vec(),
        };
        for layer in &self.layers {
            x = layer.forward(&x).0;
        }
        x.data
    }

    pub(crate) fn forward_cached(&self, input: Mat) -> ForwardCache {
        assert_eq!(input.cols, self.input_dim(), "batch width != input_dim");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        acts.push(input);
        for layer in &self.layers {
            let (post, pre) = layer.forward(acts.last().expect("input present"));
            pres.push(pre);
            acts.push(post);
        }
        ForwardCache { acts, pres }
    }

    /// Backpropagates per-sample output gradients through the whole stack.
    /// Returns parameter gradients and, if requested, gradients with
    /// respect to the input batch (needed when this network is a head on
    /// top of a trunk).
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_out: Mat,
        want_input_grad: bool,
    ) -> (Gradients, Option<Mat>) {
        let mut layer_grads = vec![None; self.layers.len()];
        let mut d = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let want = l > 0 || want_input_grad;
            let (grad, d_in) = layer.backward(&cache.acts[l], &cache.pres[l], &d, want);
            layer_grads[l] = Some(grad);
            match d_in {
                Some(next) => d = next,
                None => {
                    return (
                        Gradients {
                            layers: layer_grads.into_iter().map(|g| g.expect("filled")).collect(),
                        },
                        None,
                    )
                }
            }
        }
        (
            Gradients {
                layers: layer_grads.into_iter().map(|g| g.expect("filled")).collect(),
            },
            Some(d),
        )
    }

    /// One RMSProp update. Errors if any gradient is non-finite.
    pub(crate) fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(grads.layers.len(), self.layers.len());
        let mut finite = true;
        for ((layer, opt), grad) in self.layers.iter_mut().zip(&mut self.opt).zip(&grads.layers) {
            for ((w, acc), &g) in layer
                .weights
                .data
                .iter_mut()
                .zip(&mut opt.acc_w.data)
                .zip(&grad.d_w.data)
            {
                // Untouched input columns produce exact-zero gradients in
                // droves; decay the accumulator and skip the sqrt/divide.
                if g == 0.0 {
                    *acc *= RMSPROP_DECAY;
                    continue;
                }
                finite &= g.is_finite();
                *acc = RMSPROP_DECAY * *acc + (1.0 - RMSPROP_DECAY) * g * g;
                // Epsilon inside the root: parameters with long-dormant
                // accumulators (common with one-hot inputs) get steps
                // proportional to their gradient instead of a full-size
                // sign step.
                *w -= lr * g / (*acc + RMSPROP_EPS).sqrt();
            }
            for ((b, acc), &g) in layer.bias.iter_mut().zip(&mut opt.acc_b).zip(&grad.d_b) {
                finite &= g.is_finite();
                *acc = RMSPROP_DECAY * *acc + (1.0 - RMSPROP_DECAY) * g * g;
                *b -= lr * g / (*acc + RMSPROP_EPS).sqrt();
            }
            layer.refresh_transpose();
        }
        if finite {
            Ok(())
        } else {
            Err(Error::TrainingDiverged {
                step: 0,
                loss: f64::NAN,
            })
        }
    }

    /// Mean squared TD loss of a batch under the current parameters, with
    /// gradients flowing only through each sample's target index. No update.
    pub fn batch_loss(&self, batch: &Batch) -> f64 {
        batch.validate(self.input_dim(), self.output_dim());
        let cache = self.forward_cached(batch_input_mat(batch));
        td_loss_and_grad(cache.output(), batch).0
    }

    /// Loss and flattened parameter gradient for a batch, without updating.
    /// Layout matches [`QNetwork::flat_params`]. Intended for gradient
    /// verification against finite differences.
    pub fn loss_and_flat_grad(&self, batch: &Batch) -> (f64, Vec<f64>) {
        batch.validate(self.input_dim(), self.output_dim());
        let cache = self.forward_cached(batch_input_mat(batch));
        let (loss, d_out) = td_loss_and_grad(cache.output(), batch);
        let (grads, _) = self.backward(&cache, d_out, false);
        (loss, grads.flat())
    }

    /// One optimizer step minimizing the mean masked TD loss over the
    /// batch. Returns the pre-update loss.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<f64> {
        assert!(lr > 0.0, "learning rate must be positive");
        batch.validate(self.input_dim(), self.output_dim());
        let cache = self.forward_cached(batch_input_mat(batch));
        let (loss, d_out) = td_loss_and_grad(cache.output(), batch);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step: 0, loss });
        }
        let (grads, _) = self.backward(&cache, d_out, false);
        self.apply_gradients(&grads, lr)?;
        Ok(loss)
    }

    /// Deep copy used as the frozen target network. Later updates to the
    /// source do not affect the copy.
    pub fn sync_target(&self) -> QNetwork {
        self.clone()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters in one flat vector: per layer, weights row-major
    /// then bias. This is also the checkpoint ordering.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights.data);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    /// Overwrites all parameters from a flat vector laid out as in
    /// [`QNetwork::flat_params`]. Optimizer accumulators are untouched.
    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.data.len();
            layer.weights.data.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
            layer.refresh_transpose();
        }
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

fn batch_input_mat(batch: &Batch) -> Mat {
    let cols = batch.inputs[0].len();
    let mut m = Mat::zeros(batch.inputs.len(), cols);
    for (i, row) in batch.inputs.iter().enumerate() {
        m.row_mut(i).copy_from_slice(row);
    }
    m
}

/// Mean over samples of `(out[i][a_i] - y_i)^2` and its gradient w.r.t.
/// the full output batch (zero outside the selected indices).
fn td_loss_and_grad(out: &Mat, batch: &Batch) -> (f64, Mat) {
    let n = batch.len() as f64;
    let mut d_out = Mat::zeros(out.rows, out.cols);
    let mut loss = 0.0;
    for i in 0..out.rows {
        let a = batch.target_indices[i];
        let diff = out.row(i)[a] - batch.target_values[i];
        loss += diff * diff;
        d_out.row_mut(i)[a] = 2.0 * diff / n;
    }
    (loss / n, d_out)
}

/// Greedy index with lowest-index tie-breaking.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
