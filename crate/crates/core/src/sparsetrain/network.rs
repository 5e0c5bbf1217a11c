//! Sequential CNN with an L1 penalty on selected post-ReLU activation maps.
//!
//! Per sample `n` the training cost is the cross-entropy plus
//! `sum_l alpha_l * ||x_l||_1` over the regularized maps; the batch objective
//! is the mean of that over the batch plus `weight_decay * ||w||^2`.
//!
//! Activations are stored (N, H, W, C) row-major. Convolution kernels are
//! stored as a `(kh * kw * in_c) x out_c` matrix so a batch convolution is a
//! single matrix product against the unfolded input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Flatten,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// L1 weight on this layer's output. Only ReLU layers may be regularized.
    pub alpha: f64,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            alpha: 0.0,
        }
    }

    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride: 1,
            },
        )
    }

    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        Self::new(name, LayerKind::Dense { inputs, outputs })
    }

    pub fn pool(name: &str, size: usize) -> Self {
        Self::new(name, LayerKind::MaxPool { size, stride: size })
    }

    /// A ReLU whose output map is reported and regularized under `name`.
    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Trainable weights of a convolution or dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn zeros_like(&self) -> Self {
        Self {
            w: vec![T::zero(); self.w.len()],
            b: vec![T::zero(); self.b.len()],
        }
    }
}

/// Per-layer parameter gradients, aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Option<Params<T>>>);

impl<T: Scalar> Gradients<T> {
    /// All entries flattened in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<T> {
        self.0
            .iter()
            .flatten()
            .flat_map(|p| p.w.iter().chain(p.b.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<LayerSpec>,
    /// `shapes[0]` is the input; `shapes[i + 1]` is the output of layer `i`.
    shapes: Vec<Shape>,
    params: Vec<Option<Params<T>>>,
    /// `lambda_w` in the objective, applied to the squared L2 norm of every
    /// trainable parameter.
    pub weight_decay: f64,
    version: u64,
}

/// Everything a forward pass leaves behind for the backward pass and for
/// activation statistics.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub n: usize,
    pub input: Vec<T>,
    /// Output of each layer; the last holds class probabilities.
    pub outputs: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
    /// Mean cross-entropy over the batch.
    pub data_loss: f64,
    /// Mean over the batch of `sum_l alpha_l * ||x_l||_1`.
    pub penalty: f64,
    version: u64,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn probabilities(&self) -> &[T] {
        self.outputs.last().expect("network has layers")
    }

    pub fn predictions(&self) -> Vec<u8> {
        let probs = self.probabilities();
        let classes = probs.len() / self.n.max(1);
        probs
            .chunks(classes)
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Subgradient of `alpha * |x|` with the zero branch at `x = 0`.
pub fn l1_subgradient(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        alpha
    } else if x < 0.0 {
        -alpha
    } else {
        0.0
    }
}

fn im2col<T: Scalar>(
    input: &[T],
    n: usize,
    ins: Shape,
    outs: Shape,
    kernel: usize,
    stride: usize,
) -> Vec<T> {
    let k = kernel * kernel * ins.c;
    let mut cols = vec![T::zero(); n * outs.h * outs.w * k];
    let mut row = 0;
    for b in 0..n {
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..kernel {
                    let src = ((b * ins.h + oy * stride + ky) * ins.w + ox * stride) * ins.c;
                    let len = kernel * ins.c;
                    dst[ky * len..(ky + 1) * len].copy_from_slice(&input[src..src + len]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(
    cols: &[T],
    dinput: &mut [T],
    n: usize,
    ins: Shape,
    outs: Shape,
    kernel: usize,
    stride: usize,
) {
    let k = kernel * kernel * ins.c;
    let mut row = 0;
    for b in 0..n {
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..kernel {
                    let dst = ((b * ins.h + oy * stride + ky) * ins.w + ox * stride) * ins.c;
                    let len = kernel * ins.c;
                    for (d, &s) in dinput[dst..dst + len].iter_mut().zip(&src[ky * len..(ky + 1) * len]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

fn uniform<T: Scalar, R: Rng>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
}

impl<T: Scalar> Network<T> {
    /// Builds the network and draws initial weights uniformly in
    /// `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng>(
        input: Shape,
        layers: Vec<LayerSpec>,
        weight_decay: f64,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let cfg = |m: String| Err(TrainError::Config(m));
        if !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::SoftmaxCrossEntropy)) {
            return cfg("the last layer must be SoftmaxCrossEntropy".into());
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return cfg(format!("weight decay {weight_decay} must be finite and >= 0"));
        }
        let mut shapes = vec![input];
        let mut params = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            let s = *shapes.last().expect("seeded with input");
            if !(l.alpha >= 0.0 && l.alpha.is_finite()) {
                return cfg(format!("layer `{}`: alpha {} must be finite and >= 0", l.name, l.alpha));
            }
            if l.alpha > 0.0 && l.kind != LayerKind::Relu {
                return cfg(format!("layer `{}`: only ReLU outputs can be regularized", l.name));
            }
            let (out, p) = match l.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if in_channels != s.c || kernel == 0 || stride == 0 || kernel > s.h || kernel > s.w {
                        return cfg(format!("layer `{}`: conv does not fit input {s:?}", l.name));
                    }
                    let fan_in = kernel * kernel * in_channels;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let p = Params {
                        w: uniform(rng, fan_in * out_channels, bound),
                        b: uniform(rng, out_channels, bound),
                    };
                    let out = Shape::new((s.h - kernel) / stride + 1, (s.w - kernel) / stride + 1, out_channels);
                    (out, Some(p))
                }
                LayerKind::MaxPool { size, stride } => {
                    if size == 0 || stride == 0 || size > s.h || size > s.w {
                        return cfg(format!("layer `{}`: pool does not fit input {s:?}", l.name));
                    }
                    (Shape::new((s.h - size) / stride + 1, (s.w - size) / stride + 1, s.c), None)
                }
                LayerKind::Dense { inputs, outputs } => {
                    if inputs != s.len() {
                        return cfg(format!(
                            "layer `{}`: dense expects {inputs} inputs, previous layer yields {}",
                            l.name,
                            s.len()
                        ));
                    }
                    let bound = 1.0 / (inputs as f64).sqrt();
                    let p = Params {
                        w: uniform(rng, inputs * outputs, bound),
                        b: uniform(rng, outputs, bound),
                    };
                    (Shape::new(1, 1, outputs), Some(p))
                }
                LayerKind::Relu => (s, None),
                LayerKind::Flatten => (Shape::new(1, 1, s.len()), None),
                LayerKind::SoftmaxCrossEntropy => {
                    if i + 1 != layers.len() {
                        return cfg("SoftmaxCrossEntropy must be last".into());
                    }
                    (s, None)
                }
            };
            shapes.push(out);
            params.push(p);
        }
        Ok(Self {
            layers,
            shapes,
            params,
            weight_decay,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn output_shape(&self, layer: usize) -> Shape {
        self.shapes[layer + 1]
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().expect("non-empty").len()
    }

    pub fn params(&self) -> &[Option<Params<T>>] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [Option<Params<T>>] {
        self.version += 1;
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.w.len() + p.b.len()).sum()
    }

    /// Indices of ReLU layers, whose outputs are the activation maps that
    /// get measured, regularized and compressed.
    pub fn activation_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Relu)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Sets the L1 weight of the named ReLU layer.
    pub fn set_alpha(&mut self, name: &str, alpha: f64) -> Result<(), TrainError> {
        let i = self
            .layer_index(name)
            .ok_or_else(|| TrainError::Config(format!("no layer named `{name}`")))?;
        if self.layers[i].kind != LayerKind::Relu {
            return Err(TrainError::Config(format!("layer `{name}` is not a ReLU")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(TrainError::Config(format!("alpha {alpha} must be finite and >= 0")));
        }
        self.layers[i].alpha = alpha;
        Ok(())
    }

    pub fn clear_alphas(&mut self) {
        for l in &mut self.layers {
            l.alpha = 0.0;
        }
    }

    pub fn alphas(&self) -> Vec<(String, f64)> {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Relu)
            .map(|l| (l.name.clone(), l.alpha))
            .collect()
    }

    /// Sum of squared parameters, the `r(w)` of the objective.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.w.iter().chain(p.b.iter()))
            .map(|&v| v.f64() * v.f64())
            .sum()
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::of(x.f64())).collect();
        Network {
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.as_ref().map(|p| Params { w: conv(&p.w), b: conv(&p.b) }))
                .collect(),
            weight_decay: self.weight_decay,
            version: 0,
        }
    }

    pub fn forward(&self, input: &[T], labels: &[u8]) -> Result<ForwardTrace<T>, TrainError> {
        self.forward_with(input, labels, &mut |_, _, _| {})
    }

    /// Forward pass that lets `hook` inspect or rewrite every ReLU output in
    /// place before it feeds the next layer. The hook receives the layer
    /// index, its name and the batch buffer.
    pub fn forward_with<F>(&self, input: &[T], labels: &[u8], hook: &mut F) -> Result<ForwardTrace<T>, TrainError>
    where
        F: FnMut(usize, &str, &mut [T]),
    {
        let per = self.shapes[0].len();
        if per == 0 || input.len() % per != 0 {
            return Err(TrainError::Config(format!(
                "input of {} values is not a whole number of {per}-value samples",
                input.len()
            )));
        }
        let n = input.len() / per;
        if labels.len() != n {
            return Err(TrainError::Config(format!("{} labels for {n} samples", labels.len())));
        }
        let classes = self.classes();
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(TrainError::Config(format!("label {l} outside {classes} classes")));
        }

        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut argmax = vec![Vec::new(); self.layers.len()];
        let mut data_loss = 0.0;
        let mut penalty = 0.0;
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[T] = if i == 0 { input } else { &outputs[i - 1] };
            let ins = self.shapes[i];
            let outs = self.shapes[i + 1];
            let mut y = match layer.kind {
                LayerKind::Conv2d { kernel, stride, .. } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let cols = im2col(x, n, ins, outs, kernel, stride);
                    let rows = n * outs.h * outs.w;
                    let k = kernel * kernel * ins.c;
                    let mut y = Vec::with_capacity(rows * outs.c);
                    for _ in 0..rows {
                        y.extend_from_slice(&p.b);
                    }
                    T::gemm(rows, k, outs.c, T::one(), &cols, false, &p.w, false, T::one(), &mut y);
                    y
                }
                LayerKind::Dense { inputs, outputs: out } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    let mut y = Vec::with_capacity(n * out);
                    for _ in 0..n {
                        y.extend_from_slice(&p.b);
                    }
                    T::gemm(n, inputs, out, T::one(), x, false, &p.w, false, T::one(), &mut y);
                    y
                }
                LayerKind::MaxPool { size, stride } => {
                    let mut y = Vec::with_capacity(n * outs.len());
                    let idx = &mut argmax[i];
                    idx.reserve(n * outs.len());
                    for b in 0..n {
                        for oy in 0..outs.h {
                            for ox in 0..outs.w {
                                for c in 0..ins.c {
                                    let mut best = usize::MAX;
                                    let mut best_v = T::neg_infinity();
                                    for py in 0..size {
                                        for px in 0..size {
                                            let j = ((b * ins.h + oy * stride + py) * ins.w + ox * stride + px) * ins.c + c;
                                            if x[j] > best_v || best == usize::MAX {
                                                best_v = x[j];
                                                best = j;
                                            }
                                        }
                                    }
                                    y.push(best_v);
                                    idx.push(best as u32);
                                }
                            }
                        }
                    }
                    y
                }
                LayerKind::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
                LayerKind::Flatten => x.to_vec(),
                LayerKind::SoftmaxCrossEntropy => {
                    let mut p = Vec::with_capacity(x.len());
                    for (row, &label) in x.chunks(classes).zip(labels) {
                        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                        let exps: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
                        let sum: T = exps.iter().copied().sum();
                        let log_sum = sum.f64().ln() + m.f64();
                        data_loss += log_sum - row[label as usize].f64();
                        p.extend(exps.iter().map(|&e| e / sum));
                    }
                    p
                }
            };
            if layer.kind == LayerKind::Relu {
                hook(i, &layer.name, &mut y);
                if layer.alpha > 0.0 {
                    // post-ReLU entries are non-negative so the L1 norm is the sum
                    let l1: f64 = y.iter().map(|v| v.f64().abs()).sum();
                    penalty += layer.alpha * l1;
                }
            }
            outputs.push(y);
        }
        Ok(ForwardTrace {
            n,
            input: input.to_vec(),
            outputs,
            argmax,
            labels: labels.to_vec(),
            data_loss: data_loss / n as f64,
            penalty: penalty / n as f64,
            version: self.version,
        })
    }

    /// Full objective of a trace: mean regularized cost plus weight decay.
    pub fn objective(&self, trace: &ForwardTrace<T>) -> f64 {
        trace.data_loss + trace.penalty + self.weight_decay * self.l2_norm_sq()
    }

    /// Objective without the activation penalty.
    pub fn unregularized_objective(&self, trace: &ForwardTrace<T>) -> f64 {
        trace.data_loss + self.weight_decay * self.l2_norm_sq()
    }

    /// Gradient of the mean regularized cost (cross-entropy plus activation
    /// penalty) with respect to every parameter. The weight-decay term is
    /// added by the optimizer, or by [`Network::objective_gradient`].
    ///
    /// At each regularized ReLU output the gradient arriving from the layer
    /// above is summed with the L1 subgradient before passing through the
    /// ReLU gate.
    pub fn backward(&self, trace: &ForwardTrace<T>) -> Result<Gradients<T>, TrainError> {
        if trace.version != self.version {
            return Err(TrainError::StaleTrace);
        }
        let n = trace.n;
        let inv_n = T::of(1.0 / n as f64);
        let classes = self.classes();
        let mut grads: Vec<Option<Params<T>>> = self.params.iter().map(|p| p.as_ref().map(Params::zeros_like)).collect();

        // gradient w.r.t. the output of the current layer
        let mut g: Vec<T> = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x: &[T] = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let ins = self.shapes[i];
            let outs = self.shapes[i + 1];
            let need_input_grad = i > 0;
            g = match layer.kind {
                LayerKind::SoftmaxCrossEntropy => {
                    let mut d = trace.outputs[i].clone();
                    for (row, &label) in d.chunks_mut(classes).zip(&trace.labels) {
                        row[label as usize] -= T::one();
                        for v in row.iter_mut() {
                            *v *= inv_n;
                        }
                    }
                    d
                }
                LayerKind::Relu => {
                    let out = &trace.outputs[i];
                    let alpha = T::of(layer.alpha / n as f64);
                    g.iter()
                        .zip(out)
                        .map(|(&gv, &xv)| {
                            if xv > T::zero() {
                                gv + alpha
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                }
                LayerKind::Flatten => g,
                LayerKind::MaxPool { .. } => {
                    let mut d = vec![T::zero(); x.len()];
                    for (&j, &gv) in trace.argmax[i].iter().zip(&g) {
                        d[j as usize] += gv;
                    }
                    d
                }
                LayerKind::Dense { inputs, outputs: out } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    let gp = grads[i].as_mut().expect("dense has grads");
                    T::gemm(inputs, n, out, T::one(), x, true, &g, false, T::zero(), &mut gp.w);
                    for row in g.chunks(out) {
                        for (b, &v) in gp.b.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    if need_input_grad {
                        let mut d = vec![T::zero(); n * inputs];
                        T::gemm(n, out, inputs, T::one(), &g, false, &p.w, true, T::zero(), &mut d);
                        d
                    } else {
                        Vec::new()
                    }
                }
                LayerKind::Conv2d { kernel, stride, .. } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let gp = grads[i].as_mut().expect("conv has grads");
                    let rows = n * outs.h * outs.w;
                    let k = kernel * kernel * ins.c;
                    let cols = im2col(x, n, ins, outs, kernel, stride);
                    T::gemm(k, rows, outs.c, T::one(), &cols, true, &g, false, T::zero(), &mut gp.w);
                    for row in g.chunks(outs.c) {
                        for (b, &v) in gp.b.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    if need_input_grad {
                        let mut dcols = vec![T::zero(); rows * k];
                        T::gemm(rows, outs.c, k, T::one(), &g, false, &p.w, true, T::zero(), &mut dcols);
                        let mut d = vec![T::zero(); x.len()];
                        col2im_add(&dcols, &mut d, n, ins, outs, kernel, stride);
                        d
                    } else {
                        Vec::new()
                    }
                }
            };
        }
        Ok(Gradients(grads))
    }

    /// Gradient of [`Network::objective`], weight decay included.
    pub fn objective_gradient(&self, trace: &ForwardTrace<T>) -> Result<Gradients<T>, TrainError> {
        let mut g = self.backward(trace)?;
        self.add_weight_decay(&mut g);
        Ok(g)
    }

    pub(crate) fn add_weight_decay(&self, g: &mut Gradients<T>) {
        let two_l = T::of(2.0 * self.weight_decay);
        if self.weight_decay == 0.0 {
            return;
        }
        for (gp, p) in g.0.iter_mut().zip(&self.params) {
            if let (Some(gp), Some(p)) = (gp.as_mut(), p.as_ref()) {
                for (gv, &w) in gp.w.iter_mut().zip(&p.w).chain(gp.b.iter_mut().zip(&p.b)) {
                    *gv += two_l * w;
                }
            }
        }
    }

    /// All parameters flattened in the same order as [`Gradients::flatten`].
    pub fn flat_params(&self) -> Vec<T> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.w.iter().chain(p.b.iter()).copied())
            .collect()
    }

    /// Overwrites the `index`-th flattened parameter.
    pub fn set_flat_param(&mut self, index: usize, value: T) {
        self.version += 1;
        let mut i = index;
        for p in self.params.iter_mut().flatten() {
            if i < p.w.len() {
                p.w[i] = value;
                return;
            }
            i -= p.w.len();
            if i < p.b.len() {
                p.b[i] = value;
                return;
            }
            i -= p.b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// True when both traces took the same ReLU and max-pool branches, so
    /// the objective is smooth along the segment between their weights.
    pub fn same_branches(&self, a: &ForwardTrace<T>, b: &ForwardTrace<T>) -> bool {
        if a.argmax != b.argmax {
            return false;
        }
        self.layers.iter().enumerate().all(|(i, l)| {
            l.kind != LayerKind::Relu
                || a.outputs[i]
                    .iter()
                    .zip(&b.outputs[i])
                    .all(|(x, y)| (*x > T::zero()) == (*y > T::zero()))
        })
    }
}

/// The LeNet-5 variant used for MNIST-class data: two 5x5 convolutions with
/// 2x2 max pooling, a 50-unit hidden layer and a 10-way classifier. The
/// regularizable maps are named `conv1`, `conv2` and `fc1`.
pub fn lenet5() -> (Shape, Vec<LayerSpec>) {
    (
        Shape::new(28, 28, 1),
        vec![
            LayerSpec::conv("conv1.conv", 1, 10, 5),
            LayerSpec::pool("conv1.pool", 2),
            LayerSpec::relu("conv1"),
            LayerSpec::conv("conv2.conv", 10, 20, 5),
            LayerSpec::pool("conv2.pool", 2),
            LayerSpec::relu("conv2"),
            LayerSpec::new("flatten", LayerKind::Flatten),
            LayerSpec::dense("fc1.dense", 320, 50),
            LayerSpec::relu("fc1"),
            LayerSpec::dense("fc2", 50, 10),
            LayerSpec::new("loss", LayerKind::SoftmaxCrossEntropy),
        ],
    )
}
