// Copyright 2026 The ODKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Layer kinds and their forward/backward kernels.
//!
//! Every activation is a rank-3 `(C, H, W)` tensor. Dense layers flatten
//! their input and emit a `(out, 1, 1)` tensor so layers can be chained
//! without reshapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Pointwise convolution used as a channel adapter.
    Conv1x1 {
        in_channels: usize,
        out_channels: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Sigmoid,
    /// Nearest-neighbour 2x spatial upsampling.
    Upsample2x,
}

impl LayerSpec {
    /// Square "same"-padded convolution.
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv1x1 { .. } => "conv1x1",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Upsample2x => "upsample2x",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if kernel % 2 == 0 {
                    return bad(format!("conv kernel size must be odd, got {kernel}"));
                }
                if stride == 0 {
                    return bad("conv stride must be at least 1".into());
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("conv channel counts must be at least 1".into());
                }
            }
            LayerSpec::Conv1x1 {
                in_channels,
                out_channels,
            } if in_channels == 0 || out_channels == 0 => {
                return bad("conv1x1 channel counts must be at least 1".into());
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } if in_features == 0 || out_features == 0 => {
                return bad("dense feature counts must be at least 1".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Output `(C, H, W)` for a given input `(C, H, W)`.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        let mismatch = |expected: usize| {
            Err(Error::InvalidModel(format!(
                "{} expects {expected} input channels, got {c}",
                self.name()
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
                if c != in_channels {
                    return mismatch(in_channels);
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::InvalidModel(format!(
                        "conv kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                Ok([
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Conv1x1 {
                in_channels,
                out_channels,
            } => {
                if c != in_channels {
                    return mismatch(in_channels);
                }
                Ok([out_channels, h, w])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if c * h * w != in_features {
                    return Err(Error::InvalidModel(format!(
                        "dense expects {in_features} input features, got {}",
                        c * h * w
                    )));
                }
                Ok([out_features, 1, 1])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input),
            LayerSpec::Upsample2x => Ok([c, 2 * h, 2 * w]),
        }
    }

    /// Shapes of the (weight, bias) pair, or `None` for parameter-free layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Conv1x1 {
                in_channels,
                out_channels,
            } => Some((vec![out_channels, in_channels, 1, 1], vec![out_channels])),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    fn conv_geometry(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                stride, padding, ..
            } => Some((stride, padding)),
            LayerSpec::Conv1x1 { .. } => Some((1, 0)),
            _ => None,
        }
    }

    pub fn forward(&self, input: &Tensor, params: Option<(&Tensor, &Tensor)>) -> Result<Tensor> {
        let out = match (self, params) {
            (LayerSpec::Dense { .. }, Some((w, b))) => dense_forward(input, w, b),
            (LayerSpec::Relu, None) => input.map(|v| v.max(0.0)),
            (LayerSpec::Sigmoid, None) => input.map(sigmoid),
            (LayerSpec::Upsample2x, None) => upsample2x_forward(input)?,
            (_, Some((w, b))) => {
                let (stride, padding) = self.conv_geometry().expect("conv layer");
                conv2d_forward(input, w, b, stride, padding)?
            }
            _ => {
                return Err(Error::ParamMismatch(format!(
                    "{} layer given wrong parameter set",
                    self.name()
                )))
            }
        };
        Ok(out)
    }

    /// Returns the input gradient and, for parametric layers, (grad_w, grad_b).
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        params: Option<(&Tensor, &Tensor)>,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        match (self, params) {
            (LayerSpec::Dense { .. }, Some((w, _))) => {
                let (gi, gw, gb) = dense_backward(input, w, grad_out);
                Ok((gi, Some((gw, gb))))
            }
            (LayerSpec::Relu, None) => Ok((
                input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })?,
                None,
            )),
            (LayerSpec::Sigmoid, None) => {
                Ok((output.zip_map(grad_out, |y, g| g * y * (1.0 - y))?, None))
            }
            (LayerSpec::Upsample2x, None) => Ok((upsample2x_backward(grad_out)?, None)),
            (_, Some((w, _))) => {
                let (stride, padding) = self.conv_geometry().expect("conv layer");
                let (gi, gw, gb) = conv2d_backward(input, w, grad_out, stride, padding)?;
                Ok((gi, Some((gw, gb))))
            }
            _ => Err(Error::ParamMismatch(format!(
                "{} layer given wrong parameter set",
                self.name()
            ))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Range of output positions `o` such that `o * stride + k - pad` lies in `0..len`.
#[inline]
fn valid_range(
    out_len: usize,
    in_len: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every non-padding run of taps as `(column index, input index,
    /// length)`; consecutive taps in a run step the input by `stride`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.padding);
        let n = self.cols();
        for c in 0..self.cin {
            for ky in 0..k {
                let (y0, y1) = valid_range(self.ho, self.h, ky, s, p);
                for kx in 0..k {
                    let (x0, x1) = valid_range(self.wo, self.w, kx, s, p);
                    if x1 == x0 {
                        continue;
                    }
                    let row = ((c * k + ky) * k + kx) * n;
                    for y in y0..y1 {
                        let src = (c * self.h + y * s + ky - p) * self.w + x0 * s + kx - p;
                        f(row + y * self.wo + x0, src, x1 - x0);
                    }
                }
            }
        }
    }

    fn im2col(&self, src: &[f64]) -> Vec<f64> {
        let mut col = vec![0.0; self.rows() * self.cols()];
        let s = self.stride;
        self.for_each_run(|ci, si, len| {
            let dst = &mut col[ci..ci + len];
            if s == 1 {
                dst.copy_from_slice(&src[si..si + len]);
            } else {
                for (d, v) in dst.iter_mut().zip(src[si..].iter().step_by(s)) {
                    *d = *v;
                }
            }
        });
        col
    }

    /// Scatter-adds a column matrix back onto the input grid.
    fn col2im(&self, col: &[f64], dst: &mut [f64]) {
        let s = self.stride;
        self.for_each_run(|ci, si, len| {
            let src = &col[ci..ci + len];
            if s == 1 {
                for (d, v) in dst[si..si + len].iter_mut().zip(src) {
                    *d += v;
                }
            } else {
                for (d, v) in dst[si..].iter_mut().step_by(s).zip(src) {
                    *d += v;
                }
            }
        });
    }
}

fn conv_geometry(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (cin, h, w) = input.dims3()?;
    let ws = weight.shape();
    let k = ws[2];
    if ws[1] != cin {
        return Err(Error::shape("conv2d input", &[ws[1], h, w], input.shape()));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape("conv2d input", &[cin, k, k], input.shape()));
    }
    Ok(ConvGeometry {
        cin,
        h,
        w,
        k,
        stride,
        padding,
        ho: (h + 2 * padding - k) / stride + 1,
        wo: (w + 2 * padding - k) / stride + 1,
    })
}

/// Row-major `c[m x n] = a[m x k] * b[k x n]` with explicit element strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the asserted extents keep every access inside the slices, and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input, weight, stride, padding)?;
    let cout = weight.shape()[0];
    let (rows, n) = (g.rows(), g.cols());
    let col = g.im2col(input.data());
    let mut out = Tensor::zeros(&[cout, g.ho, g.wo]);
    gemm(
        cout,
        rows,
        n,
        weight.data(),
        (rows, 1),
        &col,
        (n, 1),
        out.data_mut(),
    );
    for (plane, &b) in out.data_mut().chunks_mut(n).zip(bias.data()) {
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv_geometry(input, weight, stride, padding)?;
    let cout = weight.shape()[0];
    let (rows, n) = (g.rows(), g.cols());
    grad_out.expect_shape(&[cout, g.ho, g.wo], "conv2d upstream gradient")?;
    let gd = grad_out.data();
    let col = g.im2col(input.data());

    let mut grad_w = Tensor::zeros(weight.shape());
    gemm(cout, n, rows, gd, (n, 1), &col, (1, n), grad_w.data_mut());

    let mut grad_col = vec![0.0; rows * n];
    gemm(
        rows,
        cout,
        n,
        weight.data(),
        (1, rows),
        gd,
        (n, 1),
        &mut grad_col,
    );
    let mut grad_in = Tensor::zeros(input.shape());
    g.col2im(&grad_col, grad_in.data_mut());

    let grad_b = Tensor::new(vec![cout], gd.chunks(n).map(|p| p.iter().sum()).collect())?;
    Ok((grad_in, grad_w, grad_b))
}

fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    let x = input.data();
    let wd = weight.data();
    let mut out = Tensor::zeros(&[out_f, 1, 1]);
    for (o, y) in out.data_mut().iter_mut().enumerate() {
        let row = &wd[o * in_f..(o + 1) * in_f];
        *y = bias.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    let x = input.data();
    let g = grad_out.data();
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    for o in 0..out_f {
        let row = &weight.data()[o * in_f..(o + 1) * in_f];
        let grow = &mut grad_w.data_mut()[o * in_f..(o + 1) * in_f];
        for i in 0..in_f {
            grow[i] = g[o] * x[i];
        }
        for (gi, &wv) in grad_in.data_mut().iter_mut().zip(row) {
            *gi += wv * g[o];
        }
    }
    let grad_b = Tensor::new(vec![out_f], g.to_vec()).expect("bias gradient shape");
    (grad_in, grad_w, grad_b)
}

fn upsample2x_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out.set3(ch, y, x, input.get3(ch, y / 2, x / 2));
            }
        }
    }
    Ok(out)
}

fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, h2, w2) = grad_out.dims3()?;
    let mut grad_in = Tensor::zeros(&[c, h2 / 2, w2 / 2]);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let v = grad_in.get3(ch, y / 2, x / 2) + grad_out.get3(ch, y, x);
                grad_in.set3(ch, y / 2, x / 2, v);
            }
        }
    }
    Ok(grad_in)
}
