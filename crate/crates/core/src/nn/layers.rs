//! Layer implementations with explicit backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Op};
use super::param::Param;
use super::tensor::Tensor;
use crate::error::{AsdError, Result};

/// Samples per im2col chunk; bounds the column buffer size.
const CONV_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `[B, C_in, H, W] -> [B, C_out, H', W']`, square kernel.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// conv -> ReLU -> conv, add the input, ReLU. Shape preserving.
    Residual { channels: usize, kernel: usize },
    /// `[B, C, L, F] -> [B * L, C * F]`: one row per time frame.
    FrameFlatten,
    /// `[N, in] -> [N, out]`.
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Per-feature normalization of `[N, features]`.
    BatchNorm {
        features: usize,
        momentum: f64,
        eps: f64,
    },
}

impl LayerSpec {
    /// Output shape (batch dimension included) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| {
            Err(AsdError::Contract(format!(
                "{what}: incompatible input shape {input:?} for {self:?}"
            )))
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 4 || input[1] != in_channels || stride == 0 {
                    return bad("conv2d");
                }
                let (h, w) = (input[2] + 2 * padding, input[3] + 2 * padding);
                if h < kernel || w < kernel {
                    return bad("conv2d");
                }
                Ok(vec![
                    input[0],
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Residual { channels, kernel } => {
                if input.len() != 4 || input[1] != channels || kernel % 2 == 0 {
                    return bad("residual");
                }
                Ok(input.to_vec())
            }
            LayerSpec::FrameFlatten => {
                if input.len() != 4 {
                    return bad("frame_flatten");
                }
                Ok(vec![input[0] * input[2], input[1] * input[3]])
            }
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => {
                if input.len() != 2 || input[1] != in_features {
                    return bad("linear");
                }
                Ok(vec![input[0], out_features])
            }
            LayerSpec::BatchNorm { features, .. } => {
                if input.len() != 2 || input[1] != features {
                    return bad("batch_norm");
                }
                Ok(input.to_vec())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    Residual(Residual),
    FrameFlatten,
    Linear(Linear),
    BatchNorm(BatchNorm),
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Conv2d(Tensor),
    Relu(Vec<bool>),
    Residual(ResidualCache),
    FrameFlatten(Vec<usize>),
    Linear(Tensor),
    BatchNorm(BatchNormCache),
}

impl Layer {
    pub fn from_spec<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, stride, padding, rng)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Residual { channels, kernel } => Layer::Residual(Residual::new(channels, kernel, rng)),
            LayerSpec::FrameFlatten => Layer::FrameFlatten,
            LayerSpec::Linear {
                in_features,
                out_features,
                bias,
            } => Layer::Linear(Linear::new(in_features, out_features, bias, rng)),
            LayerSpec::BatchNorm {
                features,
                momentum,
                eps,
            } => Layer::BatchNorm(BatchNorm::new(features, momentum, eps)),
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor, mode: Mode, keep: bool) -> Result<(Tensor, Option<LayerCache>)> {
        Ok(match self {
            Layer::Conv2d(c) => {
                let y = c.forward(x)?;
                (y, keep.then(|| LayerCache::Conv2d(x.clone())))
            }
            Layer::Relu => {
                let (y, mask) = relu(x);
                (y, keep.then_some(LayerCache::Relu(mask)))
            }
            Layer::Residual(r) => {
                let (y, cache) = r.forward(x)?;
                (y, keep.then_some(LayerCache::Residual(cache)))
            }
            Layer::FrameFlatten => {
                let y = frame_flatten(x)?;
                (y, keep.then(|| LayerCache::FrameFlatten(x.shape().to_vec())))
            }
            Layer::Linear(l) => {
                let y = l.forward(x)?;
                (y, keep.then(|| LayerCache::Linear(x.clone())))
            }
            Layer::BatchNorm(b) => {
                let (y, cache) = b.forward(x, mode)?;
                (y, keep.then_some(LayerCache::BatchNorm(cache)))
            }
        })
    }

    /// Read-only evaluation-mode forward.
    pub(crate) fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::Relu => Ok(relu(x).0),
            Layer::Residual(r) => Ok(r.forward(x)?.0),
            Layer::FrameFlatten => frame_flatten(x),
            Layer::Linear(l) => l.forward(x),
            Layer::BatchNorm(b) => b.normalize_eval(x),
        }
    }

    pub(crate) fn backward(&mut self, cache: &LayerCache, grad: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv2d(c), LayerCache::Conv2d(x)) => c.backward(x, grad),
            (Layer::Relu, LayerCache::Relu(mask)) => Ok(relu_backward(mask, grad)),
            (Layer::Residual(r), LayerCache::Residual(cache)) => r.backward(cache, grad),
            (Layer::FrameFlatten, LayerCache::FrameFlatten(shape)) => frame_unflatten(grad, shape),
            (Layer::Linear(l), LayerCache::Linear(x)) => l.backward(x, grad),
            (Layer::BatchNorm(b), LayerCache::BatchNorm(cache)) => b.backward(cache, grad),
            _ => Err(AsdError::Contract("layer cache does not match layer".into())),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::Residual(r) => vec![
                ("conv1.weight", &r.conv1.weight),
                ("conv1.bias", &r.conv1.bias),
                ("conv2.weight", &r.conv2.weight),
                ("conv2.bias", &r.conv2.bias),
            ],
            Layer::Linear(l) => {
                let mut out = vec![("weight", &l.weight)];
                if let Some(b) = &l.bias {
                    out.push(("bias", b));
                }
                out
            }
            Layer::BatchNorm(b) => vec![("gamma", &b.gamma), ("beta", &b.beta)],
            Layer::Relu | Layer::FrameFlatten => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Residual(r) => vec![
                &mut r.conv1.weight,
                &mut r.conv1.bias,
                &mut r.conv2.weight,
                &mut r.conv2.bias,
            ],
            Layer::Linear(l) => {
                let mut out = vec![&mut l.weight];
                if let Some(b) = &mut l.bias {
                    out.push(b);
                }
                out
            }
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu | Layer::FrameFlatten => Vec::new(),
        }
    }

    /// Non-trainable state persisted alongside the parameters.
    pub fn buffers(&self) -> Vec<(&'static str, &Vec<f64>)> {
        match self {
            Layer::BatchNorm(b) => vec![("running_mean", &b.running_mean), ("running_var", &b.running_var)],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        match self {
            Layer::BatchNorm(b) => vec![
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

fn relu(x: &Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    (Tensor::new(x.shape().to_vec(), data).expect("same shape"), mask)
}

fn relu_backward(mask: &[bool], grad: &Tensor) -> Tensor {
    let data = grad
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| if m { g } else { 0.0 })
        .collect();
    Tensor::new(grad.shape().to_vec(), data).expect("same shape")
}

fn frame_flatten(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(AsdError::Contract(format!("frame_flatten expects 4-D input, got {s:?}")));
    }
    let (b, c, l, f) = (s[0], s[1], s[2], s[3]);
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for li in 0..l {
            let row = (bi * l + li) * c * f;
            for ci in 0..c {
                let from = ((bi * c + ci) * l + li) * f;
                out[row + ci * f..row + (ci + 1) * f].copy_from_slice(&src[from..from + f]);
            }
        }
    }
    Tensor::new(vec![b * l, c * f], out)
}

fn frame_unflatten(grad: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (b, c, l, f) = (shape[0], shape[1], shape[2], shape[3]);
    grad.expect_shape(&[b * l, c * f], "frame_flatten backward")?;
    let src = grad.data();
    let mut out = vec![0.0; grad.len()];
    for bi in 0..b {
        for li in 0..l {
            let row = (bi * l + li) * c * f;
            for ci in 0..c {
                let to = ((bi * c + ci) * l + li) * f;
                out[to..to + f].copy_from_slice(&src[row + ci * f..row + (ci + 1) * f]);
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[C_out, C_in, k, k]`
    pub weight: Param,
    pub bias: Param,
}

struct ConvGeometry {
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::kaiming_uniform(vec![out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Param::zeros(vec![out_channels]),
        }
    }

    fn geometry(&self, x: &Tensor) -> Result<ConvGeometry> {
        let spec = LayerSpec::Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        };
        let out = spec.output_shape(x.shape())?;
        Ok(ConvGeometry {
            batch: x.shape()[0],
            h: x.shape()[2],
            w: x.shape()[3],
            oh: out[2],
            ow: out[3],
        })
    }

    /// Column matrix `[C_in*k*k, n * oh*ow]` for samples `b0..b0+n`.
    fn im2col(&self, x: &[f64], g: &ConvGeometry, b0: usize, n: usize) -> Vec<f64> {
        let k = self.kernel;
        let plane = g.oh * g.ow;
        let cols_n = n * plane;
        let mut cols = vec![0.0; self.in_channels * k * k * cols_n];
        for ci in 0..self.in_channels {
            for kh in 0..k {
                for kw in 0..k {
                    let r = (ci * k + kh) * k + kw;
                    let row = &mut cols[r * cols_n..(r + 1) * cols_n];
                    for s in 0..n {
                        let base = ((b0 + s) * self.in_channels + ci) * g.h * g.w;
                        for oh in 0..g.oh {
                            let ih = (oh * self.stride + kh) as isize - self.padding as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            let src = &x[base + ih as usize * g.w..base + (ih as usize + 1) * g.w];
                            let dst = &mut row[s * plane + oh * g.ow..s * plane + (oh + 1) * g.ow];
                            for (ow, d) in dst.iter_mut().enumerate() {
                                let iw = (ow * self.stride + kw) as isize - self.padding as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    *d = src[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], g: &ConvGeometry, b0: usize, n: usize, dx: &mut [f64]) {
        let k = self.kernel;
        let plane = g.oh * g.ow;
        let cols_n = n * plane;
        for ci in 0..self.in_channels {
            for kh in 0..k {
                for kw in 0..k {
                    let r = (ci * k + kh) * k + kw;
                    let row = &cols[r * cols_n..(r + 1) * cols_n];
                    for s in 0..n {
                        let base = ((b0 + s) * self.in_channels + ci) * g.h * g.w;
                        for oh in 0..g.oh {
                            let ih = (oh * self.stride + kh) as isize - self.padding as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            let dst = &mut dx[base + ih as usize * g.w..base + (ih as usize + 1) * g.w];
                            let src = &row[s * plane + oh * g.ow..s * plane + (oh + 1) * g.ow];
                            for (ow, v) in src.iter().enumerate() {
                                let iw = (ow * self.stride + kw) as isize - self.padding as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    dst[iw as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let plane = g.oh * g.ow;
        let mut out = vec![0.0; g.batch * self.out_channels * plane];
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        for b0 in (0..g.batch).step_by(CONV_CHUNK) {
            let n = CONV_CHUNK.min(g.batch - b0);
            let cols = self.im2col(x.data(), &g, b0, n);
            let mut tmp = vec![0.0; self.out_channels * n * plane];
            gemm(self.out_channels, kdim, n * plane, w, Op::N, &cols, Op::N, 0.0, &mut tmp);
            for co in 0..self.out_channels {
                for s in 0..n {
                    let src = &tmp[co * n * plane + s * plane..co * n * plane + (s + 1) * plane];
                    let dst = &mut out[((b0 + s) * self.out_channels + co) * plane..][..plane];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = v + bias[co];
                    }
                }
            }
        }
        Tensor::new(vec![g.batch, self.out_channels, g.oh, g.ow], out)
    }

    pub fn backward(&mut self, x: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        grad.expect_shape(&[g.batch, self.out_channels, g.oh, g.ow], "conv2d backward")?;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let plane = g.oh * g.ow;
        let mut dx = vec![0.0; x.len()];
        let gd = grad.data();
        for b0 in (0..g.batch).step_by(CONV_CHUNK) {
            let n = CONV_CHUNK.min(g.batch - b0);
            let cols = self.im2col(x.data(), &g, b0, n);
            let mut dy = vec![0.0; self.out_channels * n * plane];
            for co in 0..self.out_channels {
                for s in 0..n {
                    let src = &gd[((b0 + s) * self.out_channels + co) * plane..][..plane];
                    dy[co * n * plane + s * plane..co * n * plane + (s + 1) * plane].copy_from_slice(src);
                    self.bias.grad[co] += src.iter().sum::<f64>();
                }
            }
            gemm(self.out_channels, n * plane, kdim, &dy, Op::N, &cols, Op::T, 1.0, &mut self.weight.grad);
            let mut dcols = vec![0.0; kdim * n * plane];
            gemm(
                kdim,
                self.out_channels,
                n * plane,
                self.weight.value.data(),
                Op::T,
                &dy,
                Op::N,
                0.0,
                &mut dcols,
            );
            self.col2im(&dcols, &g, b0, n, &mut dx);
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

#[derive(Debug, Clone)]
pub struct Residual {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone)]
pub(crate) struct ResidualCache {
    input: Tensor,
    hidden: Tensor,
    pub(crate) hidden_mask: Vec<bool>,
    pub(crate) out_mask: Vec<bool>,
}

impl Residual {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, rng: &mut R) -> Self {
        let pad = kernel / 2;
        Self {
            conv1: Conv2d::new(channels, channels, kernel, 1, pad, rng),
            conv2: Conv2d::new(channels, channels, kernel, 1, pad, rng),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, ResidualCache)> {
        let h1 = self.conv1.forward(x)?;
        let (a1, hidden_mask) = relu(&h1);
        let mut s = self.conv2.forward(&a1)?;
        for (v, skip) in s.data_mut().iter_mut().zip(x.data()) {
            *v += skip;
        }
        let (y, out_mask) = relu(&s);
        Ok((
            y,
            ResidualCache {
                input: x.clone(),
                hidden: a1,
                hidden_mask,
                out_mask,
            },
        ))
    }

    fn backward(&mut self, cache: &ResidualCache, grad: &Tensor) -> Result<Tensor> {
        let ds = relu_backward(&cache.out_mask, grad);
        let da1 = self.conv2.backward(&cache.hidden, &ds)?;
        let dh1 = relu_backward(&cache.hidden_mask, &da1);
        let mut dx = self.conv1.backward(&cache.input, &dh1)?;
        for (d, s) in dx.data_mut().iter_mut().zip(ds.data()) {
            *d += s;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: Param::kaiming_uniform(vec![out_features, in_features], in_features, rng),
            bias: bias.then(|| Param::zeros(vec![out_features])),
        }
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[1], s[0])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (fin, fout) = self.dims();
        if x.shape().len() != 2 || x.shape()[1] != fin {
            return Err(AsdError::Contract(format!(
                "linear {fin}->{fout}: bad input shape {:?}",
                x.shape()
            )));
        }
        let n = x.shape()[0];
        let mut out = vec![0.0; n * fout];
        if let Some(b) = &self.bias {
            for row in out.chunks_exact_mut(fout) {
                row.copy_from_slice(b.value.data());
            }
        }
        gemm(n, fin, fout, x.data(), Op::N, self.weight.value.data(), Op::T, 1.0, &mut out);
        Tensor::new(vec![n, fout], out)
    }

    pub fn backward(&mut self, x: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let (fin, fout) = self.dims();
        let n = x.shape()[0];
        grad.expect_shape(&[n, fout], "linear backward")?;
        gemm(fout, n, fin, grad.data(), Op::T, x.data(), Op::N, 1.0, &mut self.weight.grad);
        if let Some(b) = &mut self.bias {
            for row in grad.data().chunks_exact(fout) {
                for (g, v) in b.grad.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut dx = vec![0.0; n * fin];
        gemm(n, fout, fin, grad.data(), Op::N, self.weight.value.data(), Op::N, 0.0, &mut dx);
        Tensor::new(vec![n, fin], dx)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(vec![features], 1.0)),
            beta: Param::zeros(vec![features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            eps,
        }
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let f = self.gamma.len();
        if x.shape().len() != 2 || x.shape()[1] != f {
            return Err(AsdError::Contract(format!(
                "batch_norm({f}): bad input shape {:?}",
                x.shape()
            )));
        }
        Ok((x.shape()[0], f))
    }

    fn affine(&self, xhat: &[f64], n: usize, f: usize) -> Tensor {
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        let mut out = Vec::with_capacity(n * f);
        for row in xhat.chunks_exact(f) {
            out.extend(row.iter().zip(g).zip(b).map(|((x, g), b)| g * x + b));
        }
        Tensor::new(vec![n, f], out).expect("shape matches")
    }

    fn normalize_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, f) = self.check(x)?;
        let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * f);
        for row in x.data().chunks_exact(f) {
            xhat.extend(row.iter().enumerate().map(|(j, v)| (v - self.running_mean[j]) * inv[j]));
        }
        Ok(self.affine(&xhat, n, f))
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (n, f) = self.check(x)?;
        if mode == Mode::Eval {
            let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let mut xhat = Vec::with_capacity(n * f);
            for row in x.data().chunks_exact(f) {
                xhat.extend(row.iter().enumerate().map(|(j, v)| (v - self.running_mean[j]) * inv_std[j]));
            }
            let y = self.affine(&xhat, n, f);
            return Ok((y, BatchNormCache { xhat, inv_std, mode }));
        }
        let mut mean = vec![0.0; f];
        for row in x.data().chunks_exact(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for row in x.data().chunks_exact(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * f);
        for row in x.data().chunks_exact(f) {
            xhat.extend(row.iter().enumerate().map(|(j, v)| (v - mean[j]) * inv_std[j]));
        }
        let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        for j in 0..f {
            self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] = (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
        }
        let y = self.affine(&xhat, n, f);
        Ok((y, BatchNormCache { xhat, inv_std, mode }))
    }

    fn backward(&mut self, cache: &BatchNormCache, grad: &Tensor) -> Result<Tensor> {
        let f = self.gamma.len();
        let n = cache.xhat.len() / f;
        grad.expect_shape(&[n, f], "batch_norm backward")?;
        let gamma = self.gamma.value.data();
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for (row, xrow) in grad.data().chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
            for j in 0..f {
                sum_dy[j] += row[j];
                sum_dy_xhat[j] += row[j] * xrow[j];
            }
        }
        for j in 0..f {
            self.beta.grad[j] += sum_dy[j];
            self.gamma.grad[j] += sum_dy_xhat[j];
        }
        let mut dx = Vec::with_capacity(n * f);
        match cache.mode {
            Mode::Eval => {
                for row in grad.data().chunks_exact(f) {
                    dx.extend((0..f).map(|j| row[j] * gamma[j] * cache.inv_std[j]));
                }
            }
            Mode::Train => {
                let nf = n as f64;
                for (row, xrow) in grad.data().chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
                    dx.extend((0..f).map(|j| {
                        gamma[j] * cache.inv_std[j] / nf
                            * (nf * row[j] - sum_dy[j] - xrow[j] * sum_dy_xhat[j])
                    }));
                }
            }
        }
        Tensor::new(vec![n, f], dx)
    }
}
