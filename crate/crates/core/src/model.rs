//! Small feed-forward classifier with hand-written backpropagation, the
//! client-side optimizers and FedOpt server aggregation.
//!
//! Parameter layout (also the checkpoint payload): for each layer in order,
//! the weight matrix `out x in` in row-major order, followed by the `out`
//! biases.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::numkit::ParameterVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative expressed through the activated output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Multi-layer perceptron with softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn check_layer_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer dims must list >= 2 positive sizes, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        check_layer_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            params: vec![0.0; param_count(layer_dims)],
        })
    }

    /// He-scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init<R: Rng>(layer_dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(layer_dims, activation)?;
        let mut off = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut m.params[off..off + out * fan_in] {
                *v = rng.random_range(-bound..bound);
            }
            off += out * fan_in + out;
        }
        Ok(m)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn flatten(&self) -> ParameterVector {
        ParameterVector::new(self.params.clone()).expect("model parameters are finite")
    }

    /// Same architecture, new parameters.
    pub fn unflatten(&self, p: &ParameterVector) -> Result<Self> {
        if p.dim() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: p.dim(),
            });
        }
        Ok(Self {
            layer_dims: self.layer_dims.clone(),
            activation: self.activation,
            params: p.as_slice().to_vec(),
        })
    }

    fn layers(&self) -> impl Iterator<Item = (ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut off = 0;
        self.layer_dims.windows(2).map(move |w| {
            let (i, o) = (w[0], w[1]);
            let wv = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).unwrap();
            let bv = ArrayView1::from(&self.params[off + o * i..off + o * i + o]);
            off += o * i + o;
            (wv, bv)
        })
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds raw logits.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let n_layers = self.layer_dims.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.layers().enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += &b;
            if l + 1 < n_layers {
                self.activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Class probabilities, one softmax row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut z = self.logits(x)?;
        softmax_rows(&mut z);
        Ok(z)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok(z.rows().into_iter().map(|r| argmax(&r.to_vec())).collect())
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. the
    /// flattened parameters.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, ParameterVector)> {
        self.check_batch(&x)?;
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let k = self.classes();
        if let Some(&label) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidLabel { label, classes: k });
        }
        let m = labels.len() as f64;
        let mut acts = self.activations(x);
        let mut delta = acts.pop().unwrap();
        let mut loss = 0.0;
        for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            row.mapv_inplace(|v| (v - lse).exp());
            row[y] -= 1.0;
        }
        delta /= m;
        loss /= m;

        let mut grad = vec![0.0; self.params.len()];
        let weights: Vec<_> = self.layers().map(|(w, _)| w).collect();
        let mut offsets = Vec::with_capacity(weights.len());
        let mut off = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(off);
            off += w[1] * w[0] + w[1];
        }
        for l in (0..weights.len()).rev() {
            let (o, i) = weights[l].dim();
            let a_prev = &acts[l];
            let gw = delta.t().dot(a_prev);
            let gb = delta.sum_axis(Axis(0));
            let base = offsets[l];
            // iter() walks logical row-major order whatever the memory layout
            for (dst, v) in grad[base..base + o * i + o].iter_mut().zip(gw.iter().chain(gb.iter())) {
                *dst = *v;
            }
            if l > 0 {
                let mut d_prev = delta.dot(&weights[l]);
                let act = self.activation;
                d_prev.zip_mut_with(a_prev, |d, &a| *d *= act.derivative_from_output(a));
                delta = d_prev;
            }
        }
        Ok((loss, ParameterVector::new(grad)?))
    }

    /// Gradient of the raw logit of `class` with respect to a single input.
    pub fn input_gradient(&self, x: ArrayView1<f64>, class: usize) -> Result<Array1<f64>> {
        let k = self.classes();
        if class >= k {
            return Err(Error::InvalidLabel { label: class, classes: k });
        }
        let xb = x.insert_axis(Axis(0));
        self.check_batch(&xb)?;
        let acts = self.activations(xb);
        let weights: Vec<_> = self.layers().map(|(w, _)| w).collect();
        let mut delta = Array2::<f64>::zeros((1, k));
        delta[[0, class]] = 1.0;
        for l in (0..weights.len()).rev() {
            let mut d_prev = delta.dot(&weights[l]);
            if l > 0 {
                let act = self.activation;
                d_prev.zip_mut_with(&acts[l], |d, &a| *d *= act.derivative_from_output(a));
            }
            delta = d_prev;
        }
        Ok(delta.row(0).to_owned())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let m: Mlp = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        check_layer_dims(&m.layer_dims)?;
        if m.params.len() != param_count(&m.layer_dims) {
            return Err(Error::DimensionMismatch {
                expected: param_count(&m.layer_dims),
                found: m.params.len(),
            });
        }
        Ok(m)
    }
}

pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Client optimizer (`ClientOpt`) settings. `learning_rate` is also what the
/// client update step receives as its step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Adam only.
    pub betas: (f64, f64),
    /// Adam only.
    pub eps: f64,
    pub batch_size: usize,
    /// Local epochs `K` per round.
    pub local_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.01,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 32,
            local_epochs: 3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return bad("batch_size and local_epochs must be >= 1");
        }
        if self.kind == OptimizerKind::Adam {
            let (b1, b2) = self.betas;
            if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || self.eps <= 0.0 {
                return bad("adam needs betas in [0,1) and eps > 0");
            }
        }
        Ok(())
    }
}

/// Server-side step size `eta_s`; 1.0 reduces FedOpt to FedAvg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerOptConfig {
    pub learning_rate: f64,
}

impl Default for ServerOptConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDelta {
    pub client_id: usize,
    /// `theta_after - theta_before`.
    pub delta: ParameterVector,
    pub sample_count: usize,
    /// Mean mini-batch loss over the final local epoch.
    pub train_loss: f64,
}

/// Runs `K` local epochs of shuffled mini-batch steps from `model` and
/// returns the parameter delta. Optimizer state starts fresh on every call.
pub fn client_local_train(
    client_id: usize,
    model: &Mlp,
    train: &Dataset,
    opt: &OptimizerConfig,
    rng: &mut impl Rng,
) -> Result<ModelDelta> {
    opt.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = model.flatten();
    let mut local = model.clone();
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut m1 = vec![0.0; local.params.len()];
    let mut m2 = vec![0.0; local.params.len()];
    let mut step = 0i32;
    let mut last_epoch_loss = 0.0;
    for _ in 0..opt.local_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opt.batch_size) {
            let batch = train.select(chunk);
            let (loss, grad) = local.loss_and_gradient(batch.features.view(), &batch.labels)?;
            epoch_loss += loss;
            batches += 1;
            step += 1;
            let lr = opt.learning_rate;
            let wd = opt.weight_decay;
            match opt.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in local.params.iter_mut().zip(grad.as_slice()) {
                        *p -= lr * (g + wd * *p);
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = opt.betas;
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for (((p, g), m), v) in local
                        .params
                        .iter_mut()
                        .zip(grad.as_slice())
                        .zip(m1.iter_mut())
                        .zip(m2.iter_mut())
                    {
                        let g = g + wd * *p;
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + opt.eps);
                    }
                }
            }
        }
        last_epoch_loss = epoch_loss / batches as f64;
    }
    let delta = local.flatten().sub(&start)?;
    Ok(ModelDelta {
        client_id,
        delta,
        sample_count: n,
        train_loss: last_epoch_loss,
    })
}

/// FedOpt with server SGD: `current + eta_s * mean(deltas)`. The mean is
/// unweighted and summed in client-id order so results do not depend on the
/// order in which client updates arrived.
pub fn fedopt_aggregate(
    current: &ParameterVector,
    deltas: &[ModelDelta],
    server: &ServerOptConfig,
) -> Result<ParameterVector> {
    if deltas.is_empty() {
        return Err(Error::InvalidConfig("aggregation needs at least one delta".into()));
    }
    let mut ordered: Vec<&ModelDelta> = deltas.iter().collect();
    ordered.sort_by_key(|d| d.client_id);
    let mut sum = ParameterVector::zeros(current.dim());
    for d in ordered {
        sum.add_scaled(1.0, &d.delta)?;
    }
    let mut out = current.clone();
    out.add_scaled(server.learning_rate / deltas.len() as f64, &sum)?;
    Ok(out)
}
