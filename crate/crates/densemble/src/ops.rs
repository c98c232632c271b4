//! Layer primitives: explicit forward/backward pairs over f64 tensors.
//!
//! There is no tape. Each op exposes `forward` and a matching `backward` that
//! takes whatever the caller cached (usually the op input) plus the gradient
//! of the loss with respect to the op output, accumulates parameter gradients
//! in place, and returns the gradient with respect to the input. Model types
//! compose these by hand in reverse order.
//!
//! Conventions: activations are NCHW row-major, conv weights [Cout,Cin,Kh,Kw]
//! with no bias (normalization follows every conv), linear weights [Out,In]
//! with bias. All reductions run in a fixed serial order so repeated runs are
//! bit-identical.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Whether batch statistics are computed (and running stats updated) or the
/// frozen running stats are used.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Phase {
    Train,
    Eval,
}

/// One persisted tensor of a model: either a trainable parameter's value or
/// a non-trainable buffer (batchnorm running statistics). Checkpoint streams
/// are defined as a fixed-order walk over these.
pub enum StateSlot<'a> {
    Value(&'a mut Tensor),
    Stats(&'a mut Vec<f64>),
}

/// Elementwise `dst += src`; shapes must match.
pub fn add_assign(dst: &mut Tensor, src: &Tensor) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(Error::config(format!(
            "cannot add {:?} into {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
    Ok(())
}

/// Trainable tensor with its gradient accumulator and SGD momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Parameter {
            value,
            grad,
            velocity,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

fn conv_out_extent(in_e: usize, k: usize, pad: usize, stride: usize) -> Result<usize> {
    if in_e + 2 * pad < k {
        return Err(Error::config(format!(
            "kernel {k} does not fit input extent {in_e} with padding {pad}"
        )));
    }
    Ok((in_e + 2 * pad - k) / stride + 1)
}

/// Half-open output range for which `o*stride + k_off - pad` lands inside
/// `[0, in_e)`. Lets inner loops skip bounds checks entirely.
fn valid_out_range(k_off: usize, pad: usize, stride: usize, in_e: usize, out_e: usize) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off + stride - 1) / stride
    };
    if in_e + pad <= k_off {
        return (0, 0);
    }
    let hi = ((in_e - 1 + pad - k_off) / stride + 1).min(out_e);
    (lo.min(hi), hi)
}

/// 2D convolution, square kernel, zero padding, no bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Parameter,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Fan-in scaled Gaussian init: std = sqrt(2 / (Cin * K * K)).
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let numel = out_channels * in_channels * kernel * kernel;
        let data: Vec<f64> = (0..numel).map(|_| rng.normal(0.0, std)).collect();
        let weight = Tensor::new(vec![out_channels, in_channels, kernel, kernel], data)
            .expect("conv weight shape is consistent by construction");
        Conv2d {
            weight: Parameter::new(weight),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn from_weight(weight: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (co, ci, kh, kw) = weight.dims4()?;
        if kh != kw {
            return Err(Error::config(format!("conv kernel must be square, got {kh}x{kw}")));
        }
        Ok(Conv2d {
            in_channels: ci,
            out_channels: co,
            kernel: kh,
            stride,
            pad,
            weight: Parameter::new(weight),
        })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, c, h, w] if c == self.in_channels => Ok(vec![
                n,
                self.out_channels,
                conv_out_extent(h, self.kernel, self.pad, self.stride)?,
                conv_out_extent(w, self.kernel, self.pad, self.stride)?,
            ]),
            [_, c, _, _] => Err(Error::config(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            ))),
            _ => Err(Error::config(format!(
                "conv expects rank-4 input, got shape {input:?}"
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let (nn, _, h_in, w_in) = x.dims4()?;
        let (c_out, h_out, w_out) = (out_shape[1], out_shape[2], out_shape[3]);
        let (c_in, k, s, p) = (self.in_channels, self.kernel, self.stride, self.pad);

        let mut out = Tensor::zeros(&out_shape);
        let xd = x.data();
        let wd = self.weight.value.data();
        let od = out.data_mut();

        let ry: Vec<(usize, usize)> = (0..k).map(|ky| valid_out_range(ky, p, s, h_in, h_out)).collect();
        let rx: Vec<(usize, usize)> = (0..k).map(|kx| valid_out_range(kx, p, s, w_in, w_out)).collect();

        for n in 0..nn {
            for co in 0..c_out {
                let o_base = (n * c_out + co) * h_out * w_out;
                for ci in 0..c_in {
                    let x_base = (n * c_in + ci) * h_in * w_in;
                    let w_base = (co * c_in + ci) * k * k;
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = ry[ky];
                        for kx in 0..k {
                            let w = wd[w_base + ky * k + kx];
                            let (ox_lo, ox_hi) = rx[kx];
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let o_row = o_base + oy * w_out;
                                let x_row = x_base + iy * w_in;
                                if s == 1 {
                                    // kx >= p or ox_lo keeps the index nonnegative
                                    let x_off = x_row + ox_lo + kx - p;
                                    let dst = &mut od[o_row + ox_lo..o_row + ox_hi];
                                    let src = &xd[x_off..x_off + (ox_hi - ox_lo)];
                                    for (d, v) in dst.iter_mut().zip(src) {
                                        *d += w * v;
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        od[o_row + ox] += w * xd[x_row + ox * s + kx - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        if grad_out.shape() != out_shape.as_slice() {
            return Err(Error::config(format!(
                "conv backward: expected output grad shape {:?}, got {:?}",
                out_shape,
                grad_out.shape()
            )));
        }
        let (nn, _, h_in, w_in) = x.dims4()?;
        let (c_out, h_out, w_out) = (out_shape[1], out_shape[2], out_shape[3]);
        let (c_in, k, s, p) = (self.in_channels, self.kernel, self.stride, self.pad);

        let mut gx = Tensor::zeros(x.shape());
        let xd = x.data();
        let wd = self.weight.value.data();
        let gyd = grad_out.data();
        let gxd = gx.data_mut();
        let gwd = self.weight.grad.data_mut();

        let ry: Vec<(usize, usize)> = (0..k).map(|ky| valid_out_range(ky, p, s, h_in, h_out)).collect();
        let rx: Vec<(usize, usize)> = (0..k).map(|kx| valid_out_range(kx, p, s, w_in, w_out)).collect();

        for n in 0..nn {
            for co in 0..c_out {
                let g_base = (n * c_out + co) * h_out * w_out;
                for ci in 0..c_in {
                    let x_base = (n * c_in + ci) * h_in * w_in;
                    let w_base = (co * c_in + ci) * k * k;
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = ry[ky];
                        for kx in 0..k {
                            let (ox_lo, ox_hi) = rx[kx];
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let w = wd[w_base + ky * k + kx];
                            let mut acc = 0.0;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let g_row = g_base + oy * w_out;
                                let x_row = x_base + iy * w_in;
                                for ox in ox_lo..ox_hi {
                                    let g = gyd[g_row + ox];
                                    let xi = x_row + ox * s + kx - p;
                                    acc += g * xd[xi];
                                    gxd[xi] += w * g;
                                }
                            }
                            gwd[w_base + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Per-channel batch statistics cached by the training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization over the channel axis of NCHW input.
///
/// Uses the biased (population) variance both for normalization and for the
/// running-average update. Running stats update as
/// `r = (1 - momentum) * r + momentum * batch_stat`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Parameter::new(Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims4()?;
        if dims.1 != self.channels() {
            return Err(Error::config(format!(
                "batchnorm over {} channels got input with {} channels",
                self.channels(),
                dims.1
            )));
        }
        Ok(dims)
    }

    /// Computes batch statistics, updates running stats, returns the output
    /// and the stats needed by `backward`.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BnStats)> {
        let (nn, c, h, w) = self.check_input(x)?;
        let m = (nn * h * w) as f64;
        if m == 0.0 {
            return Err(Error::config("batchnorm on an empty batch"));
        }
        let plane = h * w;
        let xd = x.data();

        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for n in 0..nn {
                let base = (n * c + ci) * plane;
                for v in &xd[base..base + plane] {
                    sum += v;
                }
            }
            mean[ci] = sum / m;
        }
        for ci in 0..c {
            let mu = mean[ci];
            let mut sum = 0.0;
            for n in 0..nn {
                let base = (n * c + ci) * plane;
                for v in &xd[base..base + plane] {
                    let d = v - mu;
                    sum += d * d;
                }
            }
            var[ci] = sum / m;
        }

        for ci in 0..c {
            self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
            self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var[ci];
        }

        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        let gd = self.gamma.value.data();
        let bd = self.beta.value.data();
        for n in 0..nn {
            for ci in 0..c {
                let base = (n * c + ci) * plane;
                let inv = 1.0 / (var[ci] + self.eps).sqrt();
                let (g, b, mu) = (gd[ci], bd[ci], mean[ci]);
                for i in base..base + plane {
                    od[i] = g * (xd[i] - mu) * inv + b;
                }
            }
        }
        Ok((out, BnStats { mean, var }))
    }

    /// Normalizes with the frozen running statistics; no state is touched.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (nn, c, h, w) = self.check_input(x)?;
        let plane = h * w;
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        let gd = self.gamma.value.data();
        let bd = self.beta.value.data();
        for n in 0..nn {
            for ci in 0..c {
                let base = (n * c + ci) * plane;
                let inv = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                let (g, b, mu) = (gd[ci], bd[ci], self.running_mean[ci]);
                for i in base..base + plane {
                    od[i] = g * (xd[i] - mu) * inv + b;
                }
            }
        }
        Ok(out)
    }

    /// Persisted tensors in checkpoint order: gamma, beta, running mean,
    /// running var.
    pub fn for_each_slot(&mut self, f: &mut dyn FnMut(StateSlot)) {
        f(StateSlot::Value(&mut self.gamma.value));
        f(StateSlot::Value(&mut self.beta.value));
        f(StateSlot::Stats(&mut self.running_mean));
        f(StateSlot::Stats(&mut self.running_var));
    }

    /// Backward through the training-mode normalization (batch statistics are
    /// functions of the input, so their gradient paths are included).
    pub fn backward(&mut self, x: &Tensor, stats: &BnStats, grad_out: &Tensor) -> Result<Tensor> {
        let (nn, c, h, w) = self.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::config(format!(
                "batchnorm backward: grad shape {:?} does not match input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let plane = h * w;
        let m = (nn * plane) as f64;
        let xd = x.data();
        let gyd = grad_out.data();
        let mut gx = Tensor::zeros(x.shape());
        let gxd = gx.data_mut();
        let gd = self.gamma.value.data();
        let dgd = self.gamma.grad.data_mut();
        let dbd = self.beta.grad.data_mut();

        for ci in 0..c {
            let mu = stats.mean[ci];
            let inv = 1.0 / (stats.var[ci] + self.eps).sqrt();
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for n in 0..nn {
                let base = (n * c + ci) * plane;
                for i in base..base + plane {
                    let xhat = (xd[i] - mu) * inv;
                    sum_gy += gyd[i];
                    sum_gy_xhat += gyd[i] * xhat;
                }
            }
            dbd[ci] += sum_gy;
            dgd[ci] += sum_gy_xhat;
            let g_inv = gd[ci] * inv;
            let mean_gy = sum_gy / m;
            let mean_gy_xhat = sum_gy_xhat / m;
            for n in 0..nn {
                let base = (n * c + ci) * plane;
                for i in base..base + plane {
                    let xhat = (xd[i] - mu) * inv;
                    gxd[i] = g_inv * (gyd[i] - mean_gy - xhat * mean_gy_xhat);
                }
            }
        }
        Ok(gx)
    }
}

/// Fully connected layer with bias. Weight layout [out, in].
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Gaussian weight init N(0, std^2), zero bias.
    pub fn new(in_dim: usize, out_dim: usize, std: f64, rng: &mut RngStream) -> Self {
        let data: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.normal(0.0, std)).collect();
        let weight = Tensor::new(vec![out_dim, in_dim], data)
            .expect("linear weight shape is consistent by construction");
        Linear {
            weight: Parameter::new(weight),
            bias: Parameter::new(Tensor::zeros(&[out_dim])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if d != self.in_dim() {
            return Err(Error::config(format!(
                "linear expects input dim {}, got {d}",
                self.in_dim()
            )));
        }
        let out_dim = self.out_dim();
        let xd = x.data();
        let wd = self.weight.value.data();
        let bd = self.bias.value.data();
        let mut out = Tensor::zeros(&[n, out_dim]);
        let od = out.data_mut();
        for i in 0..n {
            let x_row = &xd[i * d..(i + 1) * d];
            for o in 0..out_dim {
                let w_row = &wd[o * d..(o + 1) * d];
                let mut acc = bd[o];
                for (xv, wv) in x_row.iter().zip(w_row) {
                    acc += xv * wv;
                }
                od[i * out_dim + o] = acc;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        let out_dim = self.out_dim();
        if grad_out.shape() != [n, out_dim] {
            return Err(Error::config(format!(
                "linear backward: expected grad shape [{n}, {out_dim}], got {:?}",
                grad_out.shape()
            )));
        }
        let xd = x.data();
        let wd = self.weight.value.data();
        let gyd = grad_out.data();
        let mut gx = Tensor::zeros(&[n, d]);
        let gxd = gx.data_mut();
        let gwd = self.weight.grad.data_mut();
        let gbd = self.bias.grad.data_mut();
        for i in 0..n {
            let x_row = &xd[i * d..(i + 1) * d];
            let gx_row = &mut gxd[i * d..(i + 1) * d];
            for o in 0..out_dim {
                let g = gyd[i * out_dim + o];
                gbd[o] += g;
                let w_row = &wd[o * d..(o + 1) * d];
                let gw_row = &mut gwd[o * d..(o + 1) * d];
                for j in 0..d {
                    gw_row[j] += g * x_row[j];
                    gx_row[j] += g * w_row[j];
                }
            }
        }
        Ok(gx)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let mut gx = grad_out.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.tanh();
    }
    out
}

/// Takes the forward *output* `y`: d tanh = 1 - y^2.
pub fn tanh_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(y.shape(), grad_out.shape());
    let mut gx = grad_out.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= 1.0 - v * v;
    }
    gx
}

/// Square-window average pooling. The window must tile the input exactly
/// (`(extent - window) % stride == 0`); anything else is a configuration
/// error rather than a silent truncation.
pub fn avgpool2d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if window == 0 || stride == 0 {
        return Err(Error::config("pooling window and stride must be positive"));
    }
    if h < window || w < window || (h - window) % stride != 0 || (w - window) % stride != 0 {
        return Err(Error::config(format!(
            "avgpool {window}x{window}/s{stride} does not evenly cover {h}x{w} input"
        )));
    }
    let h_out = (h - window) / stride + 1;
    let w_out = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, h_out, w_out]);
    let xd = x.data();
    let od = out.data_mut();
    let norm = 1.0 / (window * window) as f64;
    for nc in 0..n * c {
        let x_base = nc * h * w;
        let o_base = nc * h_out * w_out;
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = 0.0;
                for ky in 0..window {
                    let row = x_base + (oy * stride + ky) * w + ox * stride;
                    for v in &xd[row..row + window] {
                        acc += v;
                    }
                }
                od[o_base + oy * w_out + ox] = acc * norm;
            }
        }
    }
    Ok(out)
}

pub fn avgpool2d_backward(
    input_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::config(format!(
            "avgpool backward expects rank-4 input shape, got {input_shape:?}"
        )));
    };
    let h_out = (h - window) / stride + 1;
    let w_out = (w - window) / stride + 1;
    if grad_out.shape() != [n, c, h_out, w_out] {
        return Err(Error::config(format!(
            "avgpool backward: expected grad shape [{n}, {c}, {h_out}, {w_out}], got {:?}",
            grad_out.shape()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    let gyd = grad_out.data();
    let norm = 1.0 / (window * window) as f64;
    for nc in 0..n * c {
        let x_base = nc * h * w;
        let o_base = nc * h_out * w_out;
        for oy in 0..h_out {
            for ox in 0..w_out {
                let g = gyd[o_base + oy * w_out + ox] * norm;
                for ky in 0..window {
                    let row = x_base + (oy * stride + ky) * w + ox * stride;
                    for v in &mut gxd[row..row + window] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Concatenates along the channel axis. All inputs must agree on N, H, W.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = inputs.first() else {
        return Err(Error::config("concat of zero tensors"));
    };
    let (n, _, h, w) = first.dims4()?;
    let mut c_total = 0usize;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::config(format!(
                "concat inputs disagree: {:?} vs {:?}",
                first.shape(),
                t.shape()
            )));
        }
        c_total += tc;
    }
    let mut out = Tensor::zeros(&[n, c_total, h, w]);
    let od = out.data_mut();
    let plane = h * w;
    for ni in 0..n {
        let mut offset = ni * c_total * plane;
        for t in inputs {
            let tc = t.shape()[1];
            let block = tc * plane;
            let src = &t.data()[ni * block..(ni + 1) * block];
            od[offset..offset + block].copy_from_slice(src);
            offset += block;
        }
    }
    Ok(out)
}

/// Splits the channel axis into `groups` pieces of floor(C/groups) channels;
/// the remainder goes to the last piece.
pub fn split_channels(x: &Tensor, groups: usize) -> Result<Vec<Tensor>> {
    let (_, c, _, _) = x.dims4()?;
    if groups == 0 || groups > c {
        return Err(Error::config(format!(
            "cannot split {c} channels into {groups} groups"
        )));
    }
    let base = c / groups;
    let mut widths = vec![base; groups];
    *widths.last_mut().unwrap() += c % groups;
    split_by_widths(x, &widths)
}

/// Channel widths produced by `split_channels`.
pub fn split_widths(channels: usize, groups: usize) -> Vec<usize> {
    let base = channels / groups;
    let mut widths = vec![base; groups];
    if let Some(last) = widths.last_mut() {
        *last += channels % groups;
    }
    widths
}

pub fn split_by_widths(x: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let (_, c, _, _) = x.dims4()?;
    if widths.iter().sum::<usize>() != c {
        return Err(Error::config(format!(
            "split widths {widths:?} do not sum to {c} channels"
        )));
    }
    let mut parts = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &wd in widths {
        parts.push(channel_slice(x, start, wd)?);
        start += wd;
    }
    Ok(parts)
}

/// Copies channels [start, start+len) into a new tensor.
pub fn channel_slice(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if start + len > c {
        return Err(Error::config(format!(
            "channel slice [{start}, {}) out of {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, len, h, w]);
    let od = out.data_mut();
    let xd = x.data();
    for ni in 0..n {
        let src = (ni * c + start) * plane;
        let dst = ni * len * plane;
        od[dst..dst + len * plane].copy_from_slice(&xd[src..src + len * plane]);
    }
    Ok(out)
}

/// Adds `src` (shape [N, len, H, W]) into channels [start, start+len) of `dst`.
/// This is the adjoint of `channel_slice`, used to route head gradients back
/// into shared feature maps.
pub fn add_into_channels(dst: &mut Tensor, src: &Tensor, start: usize) -> Result<()> {
    let (n, c, h, w) = dst.dims4()?;
    let (sn, sc, sh, sw) = src.dims4()?;
    if sn != n || sh != h || sw != w || start + sc > c {
        return Err(Error::config(format!(
            "cannot add {:?} into channels [{start}, {}) of {:?}",
            src.shape(),
            start + sc,
            dst.shape()
        )));
    }
    let plane = h * w;
    let dd = dst.data_mut();
    let sd = src.data();
    for ni in 0..n {
        let d0 = (ni * c + start) * plane;
        let s0 = ni * sc * plane;
        for (d, s) in dd[d0..d0 + sc * plane].iter_mut().zip(&sd[s0..s0 + sc * plane]) {
            *d += s;
        }
    }
    Ok(())
}

/// Loss, per-sample losses, and the gradient of the *mean* loss w.r.t. logits.
#[derive(Clone, Debug)]
pub struct SoftmaxLoss {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    /// d(mean cross-entropy)/d(logits), shape [N, C].
    pub grad: Tensor,
}

/// Numerically stable softmax cross-entropy over integer class labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxLoss> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::config(format!(
            "{} logits rows but {} labels",
            n,
            labels.len()
        )));
    }
    let xd = logits.data();
    let mut grad = Tensor::zeros(&[n, c]);
    let gd = grad.data_mut();
    let mut per_sample = Vec::with_capacity(n);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let label = labels[i];
        if label >= c {
            return Err(Error::data(format!(
                "sample {i}: label {label} out of range for {c} classes"
            )));
        }
        let row = &xd[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        per_sample.push(lse - row[label]);
        let g_row = &mut gd[i * c..(i + 1) * c];
        for (j, &v) in row.iter().enumerate() {
            g_row[j] = (v - lse).exp() * inv_n;
        }
        g_row[label] -= inv_n;
    }
    let mean = per_sample.iter().sum::<f64>() * inv_n;
    Ok(SoftmaxLoss {
        per_sample,
        mean,
        grad,
    })
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (n, c) = logits.dims2()?;
    let xd = logits.data();
    Ok((0..n)
        .map(|i| {
            let row = &xd[i * c..(i + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
