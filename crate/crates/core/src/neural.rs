//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! Batches are row-major `B × in`; layer `l` computes `z = a·W + b` with `W`
//! stored `in × out`. Everything is `f64`.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Identity => x,
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - a * a,
            Self::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Self::Relu),
            "tanh" => Some(Self::Tanh),
            "identity" => Some(Self::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Linear,
    /// Row-wise softmax.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub hidden: Activation,
    pub head: Head,
}

/// `a·W + b`. Single rows skip the matrix kernel, whose packing overhead
/// dominates at that size, and accumulate rows of `W` instead.
fn affine(a: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (Some(x), Some(ws)) = (a.as_slice(), w.as_slice()) else {
        return a.dot(w) + b;
    };
    if a.nrows() != 1 {
        return a.dot(w) + b;
    }
    let out = w.ncols();
    let mut z = b.to_vec();
    for (&xi, row) in x.iter().zip(ws.chunks_exact(out)) {
        if xi != 0.0 {
            for (zk, &wk) in z.iter_mut().zip(row) {
                *zk += xi * wk;
            }
        }
    }
    Array2::from_shape_vec((1, out), z).expect("row shape")
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the batch.
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Gradients shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self.weights.iter().map(|w| w.fold(0.0, |a, x| a + x * x)).sum::<f64>()
            + self.biases.iter().map(|b| b.fold(0.0, |a, x| a + x * x)).sum::<f64>();
        sq.sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite())) && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

impl DenseNet {
    /// Fan-in scaled Gaussian weights (variance 2/fan_in for ReLU, 1/fan_in
    /// otherwise), zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, head: Head, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let gain = if hidden == Activation::Relu { 2.0 } else { 1.0 };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (gain / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Self { dims: dims.to_vec(), weights, biases, hidden, head }
    }

    /// Multiplies the last layer's weights by `k`; small values give near-uniform
    /// initial policies.
    pub fn scale_output_layer(&mut self, k: f64) {
        if let Some(w) = self.weights.last_mut() {
            *w *= k;
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims nonempty")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite())) && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace), NeuralError> {
        if batch.ncols() != self.input_dim() {
            return Err(NeuralError::Shape(format!("batch width {} != input dim {}", batch.ncols(), self.input_dim())));
        }
        if batch.iter().any(|x| !x.is_finite()) {
            return Err(NeuralError::NonFinite("network input"));
        }
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut a = batch.to_owned();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let z = affine(&a, &self.weights[l], &self.biases[l]);
            inputs.push(a);
            a = if l < last {
                z.mapv(|x| self.hidden.apply(x))
            } else {
                match self.head {
                    Head::Linear => z.clone(),
                    Head::Softmax => softmax_rows(&z),
                }
            };
            pre.push(z);
        }
        Ok((a.clone(), ForwardTrace { inputs, pre, output: a }))
    }

    /// Forward pass without keeping a trace.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>, NeuralError> {
        if batch.ncols() != self.input_dim() {
            return Err(NeuralError::Shape(format!("batch width {} != input dim {}", batch.ncols(), self.input_dim())));
        }
        let mut a = batch.to_owned();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let z = affine(&a, &self.weights[l], &self.biases[l]);
            a = if l < last {
                z.mapv_into(|x| self.hidden.apply(x))
            } else {
                match self.head {
                    Head::Linear => z,
                    Head::Softmax => softmax_rows(&z),
                }
            };
        }
        Ok(a)
    }

    /// Output layer weights as `out × in`, for [`DenseNet::predict_columns`].
    pub fn transposed_head(&self) -> Array2<f64> {
        self.weights[self.num_layers() - 1].t().as_standard_layout().into_owned()
    }

    /// Outputs `cols[r]` of row `r` only. Linear heads only. `head_t` is
    /// [`DenseNet::transposed_head`], which callers evaluating many columns
    /// against a fixed network should cache.
    pub fn predict_columns(
        &self,
        batch: ArrayView2<f64>,
        cols: &[Vec<usize>],
        head_t: Option<&Array2<f64>>,
    ) -> Result<Vec<Vec<f64>>, NeuralError> {
        if self.head != Head::Linear {
            return Err(NeuralError::Shape("selected outputs need a linear head".into()));
        }
        if batch.ncols() != self.input_dim() || batch.nrows() != cols.len() {
            return Err(NeuralError::Shape(format!("batch {:?} vs {} selections", batch.dim(), cols.len())));
        }
        if let Some(&c) = cols.iter().flatten().find(|&&c| c >= self.output_dim()) {
            return Err(NeuralError::Shape(format!("column {c} out of range")));
        }
        let last = self.num_layers() - 1;
        if let Some(t) = head_t {
            if t.dim() != (self.output_dim(), self.weights[last].nrows()) {
                return Err(NeuralError::Shape("cached head does not match network".into()));
            }
        }
        let mut a = batch.to_owned();
        for l in 0..last {
            a = affine(&a, &self.weights[l], &self.biases[l]).mapv_into(|x| self.hidden.apply(x));
        }
        let b = &self.biases[last];
        Ok(cols
            .iter()
            .enumerate()
            .map(|(r, cs)| {
                let h = a.row(r);
                cs.iter()
                    .map(|&c| match head_t {
                        Some(t) => h.dot(&t.row(c)) + b[c],
                        None => h.dot(&self.weights[last].column(c)) + b[c],
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| NeuralError::Shape(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that evaluates only output column `cols[r]` for row `r`.
    /// Linear heads only. The trace's `output` is a `B×1` column.
    pub fn forward_selected(&self, batch: ArrayView2<f64>, cols: &[usize]) -> Result<(Vec<f64>, ForwardTrace), NeuralError> {
        if self.head != Head::Linear {
            return Err(NeuralError::Shape("selected outputs need a linear head".into()));
        }
        if batch.ncols() != self.input_dim() || batch.nrows() != cols.len() {
            return Err(NeuralError::Shape(format!("batch {:?} vs {} columns", batch.dim(), cols.len())));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= self.output_dim()) {
            return Err(NeuralError::Shape(format!("column {c} out of range")));
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(last);
        let mut a = batch.to_owned();
        for l in 0..last {
            let z = affine(&a, &self.weights[l], &self.biases[l]);
            inputs.push(a);
            a = z.mapv(|x| self.hidden.apply(x));
            pre.push(z);
        }
        let w = &self.weights[last];
        let out: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| a.row(r).dot(&w.column(c)) + self.biases[last][c])
            .collect();
        inputs.push(a);
        let output = Array2::from_shape_vec((out.len(), 1), out.clone()).expect("column shape");
        pre.push(output.clone());
        Ok((out, ForwardTrace { inputs, pre, output }))
    }

    /// Reverse pass matching [`DenseNet::forward_selected`]; `upstream[r]` is
    /// the loss gradient for row `r`'s selected output.
    pub fn backward_selected(&self, trace: &ForwardTrace, cols: &[usize], upstream: &[f64]) -> Result<Grads, NeuralError> {
        if upstream.len() != cols.len() || trace.output.nrows() != cols.len() {
            return Err(NeuralError::Shape("upstream length does not match selection".into()));
        }
        let n = self.num_layers();
        let last = n - 1;
        let mut grads = Grads::zeros_like(self);
        let h = &trace.inputs[last];
        let w = &self.weights[last];
        let mut da = Array2::zeros(h.raw_dim());
        for (r, (&c, &g)) in cols.iter().zip(upstream).enumerate() {
            grads.weights[last].column_mut(c).scaled_add(g, &h.row(r));
            grads.biases[last][c] += g;
            da.row_mut(r).scaled_add(g, &w.column(c));
        }
        for l in (0..last).rev() {
            let mut dz = da;
            Zip::from(&mut dz).and(&trace.pre[l]).and(&trace.inputs[l + 1]).for_each(|d, &z, &a| {
                *d *= self.hidden.derivative(z, a);
            });
            grads.weights[l] = trace.inputs[l].t().dot(&dz);
            grads.biases[l] = dz.sum_axis(Axis(0));
            da = dz.dot(&self.weights[l].t());
        }
        Ok(grads)
    }

    /// Reverse pass. `upstream` is the gradient of the loss with respect to
    /// the network output. Returns parameter gradients and the gradient with
    /// respect to the input batch.
    pub fn backward(&self, trace: &ForwardTrace, upstream: ArrayView2<f64>) -> Result<(Grads, Array2<f64>), NeuralError> {
        if upstream.dim() != trace.output.dim() {
            return Err(NeuralError::Shape(format!("upstream {:?} != output {:?}", upstream.dim(), trace.output.dim())));
        }
        let n = self.num_layers();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut dz = match self.head {
            Head::Linear => upstream.to_owned(),
            Head::Softmax => {
                let p = &trace.output;
                let dot = (&upstream * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                p * &(&upstream - &dot)
            }
        };
        for l in (0..n).rev() {
            gw.push(trace.inputs[l].t().dot(&dz));
            gb.push(dz.sum_axis(Axis(0)));
            let da = dz.dot(&self.weights[l].t());
            if l == 0 {
                dz = da;
            } else {
                let mut d = da;
                Zip::from(&mut d).and(&trace.pre[l - 1]).and(&trace.inputs[l]).for_each(|d, &z, &a| {
                    *d *= self.hidden.derivative(z, a);
                });
                dz = d;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok((Grads { weights: gw, biases: gb }, dz))
    }

    /// Serializes to the text checkpoint format: a version line, the layer
    /// dims, activation and head, then one line per layer holding `W`
    /// row-major followed by `b`.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("densenet v1\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(s, "dims {}", dims.join(" ")).unwrap();
        writeln!(s, "hidden {}", self.hidden.name()).unwrap();
        writeln!(s, "head {}", if self.head == Head::Linear { "linear" } else { "softmax" }).unwrap();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let vals: Vec<String> = w.iter().chain(b.iter()).map(|x| format!("{x:?}")).collect();
            writeln!(s, "{}", vals.join(",")).unwrap();
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NeuralError> {
        let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("densenet v1") {
            return Err(bad("missing 'densenet v1' header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("missing dims"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dim")))
            .collect::<Result<_, _>>()?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(bad("need at least two nonzero dims"));
        }
        let hidden = lines
            .next()
            .and_then(|l| l.strip_prefix("hidden "))
            .and_then(Activation::parse)
            .ok_or_else(|| bad("bad hidden activation"))?;
        let head = match lines.next().and_then(|l| l.strip_prefix("head ")) {
            Some("linear") => Head::Linear,
            Some("softmax") => Head::Softmax,
            _ => return Err(bad("bad head")),
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let line = lines.next().ok_or_else(|| bad("missing layer line"))?;
            let vals: Vec<f64> = line.split(',').map(|t| t.trim().parse().map_err(|_| bad("bad float"))).collect::<Result<_, _>>()?;
            let (i, o) = (pair[0], pair[1]);
            if vals.len() != i * o + o {
                return Err(bad("layer parameter count mismatch"));
            }
            weights.push(Array2::from_shape_vec((i, o), vals[..i * o].to_vec()).map_err(|e| bad(&e.to_string()))?);
            biases.push(Array1::from_vec(vals[i * o..].to_vec()));
        }
        Ok(Self { dims, weights, biases, hidden, head })
    }
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    /// `θ ← θ − η·g`.
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Option<Grads>,
    v: Option<Grads>,
}

impl OptimState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimKind, learning_rate: f64) -> Self {
        Self { kind, learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: None, v: None }
    }
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().into_owned();
    }
    a.as_slice_mut().expect("standard layout")
}

pub fn apply_update(net: &mut DenseNet, grads: &Grads, optim: &mut OptimState) -> Result<(), NeuralError> {
    if grads.weights.len() != net.weights.len()
        || grads.weights.iter().zip(&net.weights).any(|(g, w)| g.dim() != w.dim())
        || grads.biases.iter().zip(&net.biases).any(|(g, b)| g.dim() != b.dim())
    {
        return Err(NeuralError::Shape("gradient shapes do not match network".into()));
    }
    optim.step += 1;
    let lr = optim.learning_rate;
    match optim.kind {
        OptimKind::Sgd => {
            for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
                w.scaled_add(-lr, g);
            }
            for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
                b.scaled_add(-lr, g);
            }
        }
        OptimKind::Adam => {
            let (b1, b2, eps) = (optim.beta1, optim.beta2, optim.eps);
            let m = optim.m.get_or_insert_with(|| Grads::zeros_like(net));
            let v = optim.v.get_or_insert_with(|| Grads::zeros_like(net));
            let c1 = 1.0 - b1.powi(optim.step as i32);
            let c2 = 1.0 - b2.powi(optim.step as i32);
            let (inv_c1, inv_c2) = (1.0 / c1, 1.0 / c2);
            let step = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m * inv_c1) / ((*v * inv_c2).sqrt() + eps);
                }
            };
            for l in 0..net.weights.len() {
                step(
                    slice_mut(&mut net.weights[l]),
                    grads.weights[l].as_standard_layout().as_slice().expect("standard layout"),
                    slice_mut(&mut m.weights[l]),
                    slice_mut(&mut v.weights[l]),
                );
                step(
                    slice_mut(&mut net.biases[l]),
                    grads.biases[l].as_standard_layout().as_slice().expect("standard layout"),
                    slice_mut(&mut m.biases[l]),
                    slice_mut(&mut v.biases[l]),
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_shapes_and_determinism() {
        let net = DenseNet::new(&[4, 128, 128, 3], Activation::Relu, Head::Linear, &mut rng(1));
        assert_eq!(net.num_layers(), 3);
        assert_eq!(net.weights[0].dim(), (4, 128));
        assert_eq!(net.weights[1].dim(), (128, 128));
        assert!(net.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        let again = DenseNet::new(&[4, 128, 128, 3], Activation::Relu, Head::Linear, &mut rng(1));
        assert_eq!(net, again);
    }

    #[test]
    fn forward_cases() {
        let mut net = DenseNet::new(&[3, 5, 2], Activation::Relu, Head::Linear, &mut rng(2));
        net.weights.iter_mut().for_each(|w| w.fill(0.0));
        let x = array![[1.0, -2.0, 3.0]];
        assert_eq!(net.predict(x.view()).unwrap(), array![[0.0, 0.0]]);

        let soft = DenseNet::new(&[3, 8, 6], Activation::Relu, Head::Softmax, &mut rng(3));
        let xs = Array2::from_shape_fn((10, 3), |(i, j)| (i as f64 - 4.0) * (j as f64 + 0.5));
        let p = soft.predict(xs.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }

        let id = DenseNet {
            dims: vec![2, 2],
            weights: vec![Array2::eye(2)],
            biases: vec![Array1::zeros(2)],
            hidden: Activation::Relu,
            head: Head::Linear,
        };
        let x = array![[0.3, -7.0]];
        assert_eq!(id.predict(x.view()).unwrap(), x);
        assert!(matches!(id.predict(array![[1.0]].view()), Err(NeuralError::Shape(_))));
        assert!(matches!(id.forward(array![[f64::NAN, 0.0]].view()), Err(NeuralError::NonFinite(_))));
    }

    /// Loss = Σ c ⊙ output for a fixed random `c`.
    fn weighted_loss(net: &DenseNet, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        (net.predict(x.view()).unwrap() * c).sum()
    }

    fn check_finite_differences(hidden: Activation, head: Head) {
        let mut r = rng(7);
        let net = DenseNet::new(&[4, 6, 5, 3], hidden, head, &mut r);
        let x = Array2::from_shape_fn((5, 4), |_| r.sample::<f64, _>(StandardNormal));
        let c = Array2::from_shape_fn((5, 3), |_| r.sample::<f64, _>(StandardNormal));
        let (_, trace) = net.forward(x.view()).unwrap();
        let (grads, dx) = net.backward(&trace, c.view()).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs().max(n.abs()).max(1e-6));
        for l in 0..net.num_layers() {
            for idx in 0..net.weights[l].len() {
                let (i, j) = (idx / net.weights[l].ncols(), idx % net.weights[l].ncols());
                let mut p = net.clone();
                p.weights[l][[i, j]] += h;
                let mut m = net.clone();
                m.weights[l][[i, j]] -= h;
                let num = (weighted_loss(&p, &x, &c) - weighted_loss(&m, &x, &c)) / (2.0 * h);
                assert!(rel(grads.weights[l][[i, j]], num) < 1e-4, "W{l}[{i},{j}] {} vs {num}", grads.weights[l][[i, j]]);
            }
            for j in 0..net.biases[l].len() {
                let mut p = net.clone();
                p.biases[l][j] += h;
                let mut m = net.clone();
                m.biases[l][j] -= h;
                let num = (weighted_loss(&p, &x, &c) - weighted_loss(&m, &x, &c)) / (2.0 * h);
                assert!(rel(grads.biases[l][j], num) < 1e-4, "b{l}[{j}]");
            }
        }
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let num = (weighted_loss(&net, &xp, &c) - weighted_loss(&net, &xm, &c)) / (2.0 * h);
                assert!(rel(dx[[i, j]], num) < 1e-4, "x[{i},{j}]");
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        check_finite_differences(Activation::Relu, Head::Linear);
        check_finite_differences(Activation::Tanh, Head::Linear);
        check_finite_differences(Activation::Relu, Head::Softmax);
        check_finite_differences(Activation::Tanh, Head::Softmax);
    }

    #[test]
    fn backward_trivial_cases() {
        let mut r = rng(4);
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, Head::Linear, &mut r);
        let x = Array2::from_shape_fn((4, 3), |_| r.sample::<f64, _>(StandardNormal));
        let (_, trace) = net.forward(x.view()).unwrap();
        let (g0, _) = net.backward(&trace, Array2::zeros((4, 2)).view()).unwrap();
        assert_eq!(g0.global_norm(), 0.0);
        let up = Array2::from_shape_fn((4, 2), |_| r.sample::<f64, _>(StandardNormal));
        let (g1, _) = net.backward(&trace, up.view()).unwrap();
        let (g2, _) = net.backward(&trace, (&up * 2.0).view()).unwrap();
        let mut doubled = g1.clone();
        doubled.scale(2.0);
        for (a, b) in doubled.weights.iter().zip(&g2.weights) {
            assert!((a - b).iter().all(|d| d.abs() < 1e-12));
        }
        assert!(net.backward(&trace, Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn update_cases() {
        let mut net = DenseNet {
            dims: vec![1, 1],
            weights: vec![array![[1.0]]],
            biases: vec![array![0.0]],
            hidden: Activation::Relu,
            head: Head::Linear,
        };
        let grads = Grads { weights: vec![array![[0.5]]], biases: vec![array![0.0]] };
        apply_update(&mut net, &grads, &mut OptimState::sgd(0.1)).unwrap();
        assert!((net.weights[0][[0, 0]] - 0.95).abs() < 1e-15);

        let before = net.clone();
        apply_update(&mut net, &Grads::zeros_like(&before), &mut OptimState::adam(0.01)).unwrap();
        assert_eq!(net, before);
        apply_update(&mut net, &grads, &mut OptimState::sgd(0.0)).unwrap();
        assert_eq!(net, before);
        let mut adam = OptimState::adam(0.0);
        apply_update(&mut net, &grads, &mut adam).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Grads { weights: vec![array![[3.0, 4.0]]], biases: vec![array![0.0, 0.0]] };
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn learns_linear_map() {
        let mut r = rng(5);
        let mut net = DenseNet::new(&[1, 16, 1], Activation::Relu, Head::Linear, &mut r);
        let mut opt = OptimState::adam(0.01);
        let x = Array2::from_shape_fn((64, 1), |(i, _)| i as f64 / 32.0 - 1.0);
        let y = &x * 2.0;
        let mut mse = f64::INFINITY;
        for _ in 0..2000 {
            let (out, trace) = net.forward(x.view()).unwrap();
            let err = &out - &y;
            mse = err.mapv(|e| e * e).mean().unwrap();
            let up = err * (2.0 / 64.0);
            let (g, _) = net.backward(&trace, up.view()).unwrap();
            apply_update(&mut net, &g, &mut opt).unwrap();
        }
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DenseNet::new(&[3, 7, 2], Activation::Tanh, Head::Softmax, &mut rng(6));
        let text = net.to_checkpoint();
        assert!(text.starts_with("densenet v1\ndims 3 7 2\n"));
        assert_eq!(DenseNet::from_checkpoint(&text).unwrap(), net);
        assert!(DenseNet::from_checkpoint("densenet v2\n").is_err());
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(DenseNet::from_checkpoint(&truncated).is_err());
    }
    #[test]
    fn selected_pass_matches_dense_pass() {
        let net = DenseNet::new(&[4, 9, 7, 6], Activation::Relu, Head::Linear, &mut rng(7));
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - 1.0) * 0.7 + j as f64 * 0.3);
        let cols = [5, 0, 5];
        let (full, trace) = net.forward(x.view()).unwrap();
        let (sel, strace) = net.forward_selected(x.view(), &cols).unwrap();
        for (r, &c) in cols.iter().enumerate() {
            assert!((full[[r, c]] - sel[r]).abs() < 1e-12);
        }
        let g = [0.4, -1.1, 0.25];
        let mut up = Array2::zeros((3, 6));
        for (r, &c) in cols.iter().enumerate() {
            up[[r, c]] = g[r];
        }
        let (dense, _) = net.backward(&trace, up.view()).unwrap();
        let sparse = net.backward_selected(&strace, &cols, &g).unwrap();
        for (a, b) in dense.weights.iter().zip(&sparse.weights) {
            assert!((a - b).iter().all(|d| d.abs() < 1e-12));
        }
        for (a, b) in dense.biases.iter().zip(&sparse.biases) {
            assert!((a - b).iter().all(|d| d.abs() < 1e-12));
        }
        assert!(net.forward_selected(x.view(), &[6, 0, 0]).is_err());
    }
}
