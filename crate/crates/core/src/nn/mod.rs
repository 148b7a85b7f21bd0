//! A small f64 layer library with explicit backward passes.
//!
//! Forward evaluation never mutates a network: training-mode passes return a
//! [`Tape`] holding everything the backward pass needs, plus the batch
//! statistics that [`Sequential::commit_running_stats`] folds into the
//! BatchNorm running averages.

mod conv;
pub mod loss;
pub mod optim;

use ndarray::{Array1, Array2, ArrayD, Axis, Ix2, IxDyn};
use rand::Rng as _;

pub use conv::{Conv2d, Padding};

use crate::patch::linear_taps;
use crate::rng::Rng;

pub type Tensor = ArrayD<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// BatchNorm normalizes with batch statistics.
    Train,
    /// BatchNorm normalizes with its running averages.
    Eval,
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: ArrayD::ones(vec![channels]),
            beta: ArrayD::zeros(vec![channels]),
            running_mean: ArrayD::zeros(vec![channels]),
            running_var: ArrayD::ones(vec![channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// Shape `(out, in)`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let weight =
            Array2::from_shape_simple_fn((outputs, inputs), || rng.gen_range(-bound..bound))
                .into_dyn();
        Self { weight, bias: ArrayD::zeros(vec![outputs]) }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu,
    /// 2x2 max pooling with stride 2.
    MaxPool2,
    /// Bilinear x2 upsampling (half-pixel centers).
    Upsample2,
    /// `(N, ...) -> (N, prod(...))`
    Flatten,
    /// `(N, prod(shape)) -> (N, shape...)`
    Reshape(Vec<usize>),
    Linear(Linear),
}

#[derive(Debug, Clone)]
enum Cache {
    Conv(conv::ConvCache),
    BatchNorm { x_hat: Tensor, inv_std: Array1<f64> },
    Relu { output: Tensor },
    MaxPool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Upsample { input_shape: Vec<usize> },
    Reshape { input_shape: Vec<usize> },
    Linear { input: Array2<f64> },
}

/// Per-layer caches of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
    mode: Mode,
    /// (layer index, batch mean, unbiased batch variance) for BatchNorm layers.
    batch_stats: Vec<(usize, Array1<f64>, Array1<f64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Tape) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache, stats) = forward_layer(layer, &cur, mode);
            if let Some((mean, var)) = stats {
                batch_stats.push((i, mean, var));
            }
            caches.push(cache);
            cur = out;
        }
        (cur, Tape { caches, mode, batch_stats })
    }

    /// Inference-mode forward pass.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = forward_layer(layer, &cur, Mode::Eval).0;
        }
        cur
    }

    /// Output shape of every layer for a given input shape (batch included).
    pub fn trace_shapes(&self, x: &Tensor) -> Vec<Vec<usize>> {
        let mut cur = x.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = forward_layer(layer, &cur, Mode::Eval).0;
            shapes.push(cur.shape().to_vec());
        }
        shapes
    }

    /// Back-propagate `grad` (gradient w.r.t. the output) through the taped
    /// pass. Returns the input gradient and parameter gradients in
    /// [`Sequential::params`] order.
    pub fn backward(&self, tape: &Tape, grad: Tensor) -> (Tensor, Vec<Tensor>) {
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = grad;
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let (dx, pg) = backward_layer(layer, cache, &g, tape.mode);
            per_layer.push(pg);
            g = dx;
        }
        per_layer.reverse();
        (g, per_layer.into_iter().flatten().collect())
    }

    /// Fold a training pass's batch statistics into the running averages.
    pub fn commit_running_stats(&mut self, tape: &Tape) {
        for (i, mean, var) in &tape.batch_stats {
            if let Layer::BatchNorm2d(bn) = &mut self.layers[*i] {
                let m = 1.0 - BATCHNORM_MOMENTUM;
                bn.running_mean.zip_mut_with(&mean.view().into_dyn(), |r, &b| {
                    *r = m * *r + BATCHNORM_MOMENTUM * b
                });
                bn.running_var.zip_mut_with(&var.view().into_dyn(), |r, &b| {
                    *r = m * *r + BATCHNORM_MOMENTUM * b
                });
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&c.weight, &c.bias]),
                Layer::BatchNorm2d(b) => out.extend([&b.gamma, &b.beta]),
                Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::BatchNorm2d(b) => out.extend([&mut b.gamma, &mut b.beta]),
                Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
                _ => {}
            }
        }
        out
    }

    /// Parameters followed by buffers (BatchNorm running statistics): the
    /// complete serializable state.
    pub fn state(&self) -> Vec<&Tensor> {
        let mut out = self.params();
        for layer in &self.layers {
            if let Layer::BatchNorm2d(b) = layer {
                out.extend([&b.running_mean, &b.running_var]);
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => params.extend([&mut c.weight, &mut c.bias]),
                Layer::BatchNorm2d(b) => {
                    params.extend([&mut b.gamma, &mut b.beta]);
                    buffers.extend([&mut b.running_mean, &mut b.running_var]);
                }
                Layer::Linear(l) => params.extend([&mut l.weight, &mut l.bias]),
                _ => {}
            }
        }
        params.extend(buffers);
        params
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

type LayerOutput = (Tensor, Cache, Option<(Array1<f64>, Array1<f64>)>);

fn forward_layer(layer: &Layer, x: &Tensor, mode: Mode) -> LayerOutput {
    match layer {
        Layer::Conv2d(conv) => {
            let (y, cache) = conv.forward(x);
            (y, Cache::Conv(cache), None)
        }
        Layer::BatchNorm2d(bn) => batchnorm_forward(bn, x, mode),
        Layer::Relu => {
            // Written so NaN propagates; `f64::max` would swallow it.
            let y = x.mapv(|v| if v < 0.0 { 0.0 } else { v });
            (y.clone(), Cache::Relu { output: y }, None)
        }
        Layer::MaxPool2 => {
            let (y, argmax) = maxpool_forward(x);
            (y, Cache::MaxPool { argmax, input_shape: x.shape().to_vec() }, None)
        }
        Layer::Upsample2 => (
            upsample_forward(x),
            Cache::Upsample { input_shape: x.shape().to_vec() },
            None,
        ),
        Layer::Flatten => {
            let n = x.shape()[0];
            let rest = x.len() / n.max(1);
            let y = x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&[n, rest]))
                .expect("flatten");
            (y, Cache::Reshape { input_shape: x.shape().to_vec() }, None)
        }
        Layer::Reshape(shape) => {
            let mut full = vec![x.shape()[0]];
            full.extend(shape);
            let y = x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&full))
                .expect("reshape size mismatch");
            (y, Cache::Reshape { input_shape: x.shape().to_vec() }, None)
        }
        Layer::Linear(lin) => {
            let x2 = x.view().into_dimensionality::<Ix2>().expect("linear input must be 2-D");
            let w = lin.weight.view().into_dimensionality::<Ix2>().expect("2-D weight");
            let mut y = x2.dot(&w.t());
            let b = lin.bias.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
            y += &b;
            (y.into_dyn(), Cache::Linear { input: x2.to_owned() }, None)
        }
    }
}

fn backward_layer(layer: &Layer, cache: &Cache, g: &Tensor, mode: Mode) -> (Tensor, Vec<Tensor>) {
    match (layer, cache) {
        (Layer::Conv2d(conv), Cache::Conv(c)) => {
            let (dx, gw, gb) = conv.backward(c, g);
            (dx, vec![gw, gb])
        }
        (Layer::BatchNorm2d(bn), Cache::BatchNorm { x_hat, inv_std }) => {
            batchnorm_backward(bn, x_hat, inv_std, g, mode)
        }
        (Layer::Relu, Cache::Relu { output }) => {
            let mut dx = g.clone();
            dx.zip_mut_with(output, |d, &o| {
                if o <= 0.0 {
                    *d = 0.0
                }
            });
            (dx, vec![])
        }
        (Layer::MaxPool2, Cache::MaxPool { argmax, input_shape }) => {
            let mut dx = ArrayD::<f64>::zeros(IxDyn(input_shape));
            let dxs = dx.as_slice_mut().expect("fresh array");
            let g = g.as_standard_layout();
            for (&src, &gv) in argmax.iter().zip(g.iter()) {
                dxs[src] += gv;
            }
            (dx, vec![])
        }
        (Layer::Upsample2, Cache::Upsample { input_shape }) => (upsample_backward(g, input_shape), vec![]),
        (Layer::Flatten | Layer::Reshape(_), Cache::Reshape { input_shape }) => {
            let dx = g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(input_shape))
                .expect("reshape back");
            (dx, vec![])
        }
        (Layer::Linear(lin), Cache::Linear { input }) => {
            let g2 = g.view().into_dimensionality::<Ix2>().expect("2-D grad");
            let w = lin.weight.view().into_dimensionality::<Ix2>().expect("2-D weight");
            let gw = g2.t().dot(input);
            let gb = g2.sum_axis(Axis(0));
            let dx = g2.dot(&w);
            (dx.into_dyn(), vec![gw.into_dyn(), gb.into_dyn()])
        }
        _ => unreachable!("tape does not match network"),
    }
}

fn nchw(x: &Tensor) -> (usize, usize, usize, usize) {
    match *x.shape() {
        [n, c, h, w] => (n, c, h, w),
        ref s => panic!("expected an NCHW tensor, got shape {s:?}"),
    }
}

fn contiguous(x: &Tensor) -> std::borrow::Cow<'_, [f64]> {
    match x.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(x.iter().copied().collect()),
    }
}

fn vector(t: &Tensor) -> &[f64] {
    t.as_slice().expect("contiguous parameter vector")
}

fn batchnorm_forward(bn: &BatchNorm2d, x: &Tensor, mode: Mode) -> LayerOutput {
    let (n, c, h, w) = nchw(x);
    let plane = h * w;
    let xs = contiguous(x);
    let m = (n * plane) as f64;
    let (mean, var_biased, stats) = match mode {
        Mode::Train => {
            let mut mean = Array1::<f64>::zeros(c);
            let mut var = Array1::<f64>::zeros(c);
            for (i, chunk) in xs.chunks_exact(plane).enumerate() {
                mean[i % c] += chunk.iter().sum::<f64>();
            }
            mean /= m;
            for (i, chunk) in xs.chunks_exact(plane).enumerate() {
                let mu = mean[i % c];
                var[i % c] += chunk.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            var /= m;
            let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
            (mean.clone(), var, Some((mean, unbiased)))
        }
        Mode::Eval => (
            Array1::from(vector(&bn.running_mean).to_vec()),
            Array1::from(vector(&bn.running_var).to_vec()),
            None,
        ),
    };
    let inv_std = var_biased.mapv(|v| 1.0 / (v + BATCHNORM_EPS).sqrt());
    let (gamma, beta) = (vector(&bn.gamma), vector(&bn.beta));
    let mut x_hat = vec![0.0; xs.len()];
    let mut y = vec![0.0; xs.len()];
    for (i, ((src, xh), out)) in xs
        .chunks_exact(plane)
        .zip(x_hat.chunks_exact_mut(plane))
        .zip(y.chunks_exact_mut(plane))
        .enumerate()
    {
        let ci = i % c;
        let (mu, is, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
        for ((v, xh), o) in src.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *xh = (v - mu) * is;
            *o = g * *xh + b;
        }
    }
    let shape = IxDyn(&[n, c, h, w]);
    (
        ArrayD::from_shape_vec(shape.clone(), y).expect("shape"),
        Cache::BatchNorm { x_hat: ArrayD::from_shape_vec(shape, x_hat).expect("shape"), inv_std },
        stats,
    )
}

fn batchnorm_backward(
    bn: &BatchNorm2d,
    x_hat: &Tensor,
    inv_std: &Array1<f64>,
    g: &Tensor,
    mode: Mode,
) -> (Tensor, Vec<Tensor>) {
    let (n, c, h, w) = nchw(g);
    let plane = h * w;
    let gs = contiguous(g);
    let xh = contiguous(x_hat);
    let m = (n * plane) as f64;
    let mut sum_g = Array1::<f64>::zeros(c);
    let mut sum_gx = Array1::<f64>::zeros(c);
    for (i, (gc, xc)) in gs.chunks_exact(plane).zip(xh.chunks_exact(plane)).enumerate() {
        sum_g[i % c] += gc.iter().sum::<f64>();
        sum_gx[i % c] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
    }
    let gamma = vector(&bn.gamma);
    let mut dx = vec![0.0; gs.len()];
    for (i, ((gc, xc), dc)) in gs
        .chunks_exact(plane)
        .zip(xh.chunks_exact(plane))
        .zip(dx.chunks_exact_mut(plane))
        .enumerate()
    {
        let ci = i % c;
        let scale = gamma[ci] * inv_std[ci];
        match mode {
            Mode::Train => {
                let (sg, sgx) = (sum_g[ci], sum_gx[ci]);
                for ((d, gv), xv) in dc.iter_mut().zip(gc).zip(xc) {
                    *d = scale / m * (m * gv - sg - xv * sgx);
                }
            }
            Mode::Eval => {
                for (d, gv) in dc.iter_mut().zip(gc) {
                    *d = scale * gv;
                }
            }
        }
    }
    (
        ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).expect("shape"),
        vec![sum_gx.into_dyn(), sum_g.into_dyn()],
    )
}

fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (n, c, h, w) = nchw(x);
    let xs = contiguous(x);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0);
                for idx in [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ] {
                    if xs[idx] > best.0 || xs[idx].is_nan() {
                        best = (xs[idx], idx);
                    }
                }
                y.push(best.0);
                argmax.push(best.1);
            }
        }
    }
    (ArrayD::from_shape_vec(IxDyn(&[n, c, oh, ow]), y).expect("shape"), argmax)
}

fn upsample_forward(x: &Tensor) -> Tensor {
    let (n, c, h, w) = nchw(x);
    let xs = contiguous(x);
    let rows = linear_taps(h, 2 * h);
    let cols = linear_taps(w, 2 * w);
    let mut y = vec![0.0; n * c * 4 * h * w];
    for (src, dst) in xs.chunks_exact(h * w).zip(y.chunks_exact_mut(4 * h * w)) {
        for (i, &(r0, r1, wr)) in rows.iter().enumerate() {
            let (top, bot) = (&src[r0 * w..][..w], &src[r1 * w..][..w]);
            let out = &mut dst[i * 2 * w..][..2 * w];
            for (o, &(c0, c1, wc)) in out.iter_mut().zip(&cols) {
                let t = top[c0] * (1.0 - wc) + top[c1] * wc;
                let b = bot[c0] * (1.0 - wc) + bot[c1] * wc;
                *o = t * (1.0 - wr) + b * wr;
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, c, 2 * h, 2 * w]), y).expect("shape")
}

fn upsample_backward(g: &Tensor, input_shape: &[usize]) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let gs = contiguous(g);
    let rows = linear_taps(h, 2 * h);
    let cols = linear_taps(w, 2 * w);
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (src, dst) in gs.chunks_exact(4 * h * w).zip(dx.chunks_exact_mut(h * w)) {
        for (i, &(r0, r1, wr)) in rows.iter().enumerate() {
            let grow = &src[i * 2 * w..][..2 * w];
            for (&gv, &(c0, c1, wc)) in grow.iter().zip(&cols) {
                dst[r0 * w + c0] += gv * (1.0 - wr) * (1.0 - wc);
                dst[r0 * w + c1] += gv * (1.0 - wr) * wc;
                dst[r1 * w + c0] += gv * wr * (1.0 - wc);
                dst[r1 * w + c1] += gv * wr * wc;
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(input_shape), dx).expect("shape")
}

/// Stack single-channel images into an `(N, 1, H, W)` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = ndarray::ArrayView2<'a, f64>>) -> Tensor {
    let views: Vec<_> = images.into_iter().map(|v| v.insert_axis(Axis(0))).collect();
    ndarray::stack(Axis(0), &views)
        .expect("images share one shape")
        .into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Dimension;
    use crate::rng::substream;

    fn finite_difference_check(net: &mut Sequential, x: &Tensor, mode: Mode) {
        // Scalar loss: weighted sum of outputs with fixed pseudo-random weights.
        let (y, tape) = net.forward(x, mode);
        let weights = ArrayD::from_shape_fn(y.raw_dim(), |idx| {
            let s: usize = idx.as_array_view().iter().enumerate().map(|(i, v)| (i + 3) * (v + 1)).sum();
            ((s % 7) as f64 - 3.0) / 3.0
        });
        let loss = |net: &Sequential| (net.forward(x, mode).0 * &weights).sum();
        let (dx, grads) = net.backward(&tape, weights.clone());
        let eps = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for k in (0..g.len()).step_by((g.len() / 5).max(1)) {
                let orig = net.params_mut()[pi].as_slice_mut().unwrap()[k];
                net.params_mut()[pi].as_slice_mut().unwrap()[k] = orig + eps;
                let up = loss(net);
                net.params_mut()[pi].as_slice_mut().unwrap()[k] = orig - eps;
                let down = loss(net);
                net.params_mut()[pi].as_slice_mut().unwrap()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = g.as_slice().unwrap()[k];
                let denom = numeric.abs().max(analytic.abs()).max(1e-3);
                assert!((numeric - analytic).abs() / denom < 1e-4, "param {pi}[{k}]: {analytic} vs {numeric}");
            }
        }
        let mut xp = x.clone();
        for k in (0..x.len()).step_by(7) {
            let orig = xp.as_slice().unwrap()[k];
            xp.as_slice_mut().unwrap()[k] = orig + eps;
            let up = (net.forward(&xp, mode).0 * &weights).sum();
            xp.as_slice_mut().unwrap()[k] = orig - eps;
            let down = (net.forward(&xp, mode).0 * &weights).sum();
            xp.as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = dx.as_slice().unwrap()[k];
            let denom = numeric.abs().max(analytic.abs()).max(1e-3);
            assert!((numeric - analytic).abs() / denom < 1e-4, "input[{k}]: {analytic} vs {numeric}");
        }
    }

    fn sample_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = substream(seed, "input");
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn every_layer_kind_back_propagates_correctly() {
        let mut rng = substream(1, "init");
        let mut net = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new(2, 3, 3, 1, Padding { top: 1, left: 1, bottom: 0, right: 0 }, &mut rng)),
            Layer::BatchNorm2d(BatchNorm2d::new(3)),
            Layer::Upsample2,
            Layer::Conv2d(Conv2d::new(3, 4, 4, 2, Padding::same(1), &mut rng)),
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::Linear(Linear::new(64, 5, &mut rng)),
            Layer::Reshape(vec![5, 1, 1]),
            Layer::Flatten,
        ]);
        if let Layer::BatchNorm2d(bn) = &mut net.layers[1] {
            bn.gamma = ArrayD::from_shape_vec(vec![3], vec![1.3, 0.7, -0.4]).unwrap();
            bn.running_mean = ArrayD::from_shape_vec(vec![3], vec![0.1, -0.2, 0.05]).unwrap();
        }
        let x = sample_input(&[3, 2, 9, 9], 2);
        finite_difference_check(&mut net, &x, Mode::Train);
        finite_difference_check(&mut net, &x, Mode::Eval);
    }

    #[test]
    fn relu_chain_gradients() {
        let mut rng = substream(4, "init");
        let mut net = Sequential::new(vec![
            Layer::Flatten,
            Layer::Linear(Linear::new(12, 6, &mut rng)),
            Layer::Relu,
            Layer::Linear(Linear::new(6, 2, &mut rng)),
        ]);
        let x = sample_input(&[4, 3, 2, 2], 5);
        finite_difference_check(&mut net, &x, Mode::Train);
    }

    #[test]
    fn conv_shapes_and_padding() {
        let mut rng = substream(1, "init");
        let conv = Conv2d::new(1, 8, 3, 1, Padding { top: 1, left: 1, bottom: 0, right: 0 }, &mut rng);
        assert_eq!(conv.output_hw(17, 17), Some((16, 16)));
        let conv = Conv2d::new(2, 8, 4, 2, Padding::same(1), &mut rng);
        assert_eq!(conv.output_hw(64, 64), Some((32, 32)));
        let conv = Conv2d::new(64, 128, 4, 1, Padding::same(0), &mut rng);
        assert_eq!(conv.output_hw(4, 4), Some((1, 1)));
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut net = Sequential::new(vec![Layer::BatchNorm2d(BatchNorm2d::new(1))]);
        let x = ArrayD::from_shape_vec(vec![2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let (_, tape) = net.forward(&x, Mode::Train);
        net.commit_running_stats(&tape);
        let Layer::BatchNorm2d(bn) = &net.layers[0] else { unreachable!() };
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        // Unbiased variance of {1,3,5,7} is 20/3.
        assert!((bn.running_var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn inference_does_not_depend_on_batch_composition() {
        let mut rng = substream(9, "init");
        let net = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new(1, 2, 3, 1, Padding::same(1), &mut rng)),
            Layer::BatchNorm2d(BatchNorm2d::new(2)),
            Layer::Relu,
        ]);
        let x = sample_input(&[4, 1, 5, 5], 3);
        let all = net.infer(&x);
        let one = net.infer(&x.slice(ndarray::s![2..3, .., .., ..]).to_owned().into_dyn());
        assert_eq!(all.slice(ndarray::s![2..3, .., .., ..]).to_owned().into_dyn(), one);
    }
}
