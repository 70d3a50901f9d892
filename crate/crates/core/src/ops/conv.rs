//! Valid-padding, stride-1 2D convolution with dilation, NHWC layout.
//!
//! Weights are `[k, k, in_channels, out_channels]`. Two forward paths exist:
//! a direct loop that transcribes the defining sum, and an im2col + GEMM path
//! used for training. Both accumulate in `f64`.

use crate::error::{shape_err, Result};
use crate::ops::LayerGrads;
use crate::scalar::Scalar;
use crate::tensor::{gemm_acc, gemm_nt_f64, gemm_tn_f64, narrow, widen, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
}

/// Which forward/backward implementation to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvImpl {
    /// Direct nested loops over the defining sum.
    Naive,
    #[default]
    Im2col,
}

impl ConvSpec {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        Self { kernel, in_channels, out_channels, dilation }
    }

    /// Spatial span covered by the dilated kernel, `(k-1)·d + 1`.
    pub fn effective_kernel(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.kernel, self.kernel, self.in_channels, self.out_channels]
    }

    pub fn param_count(&self) -> usize {
        conv_param_count(self)
    }

    pub fn output_extent(&self, input_extent: usize) -> Result<usize> {
        conv_output_extent(input_extent, self.kernel, self.dilation)
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }
}

/// Output extent of a valid, stride-1 convolution: `i − d·(k−1)`.
pub fn conv_output_extent(input_extent: usize, kernel: usize, dilation: usize) -> Result<usize> {
    if kernel == 0 || dilation == 0 {
        return shape_err(format!("kernel {kernel} and dilation {dilation} must be positive"));
    }
    let span = (kernel - 1) * dilation + 1;
    if span > input_extent {
        return shape_err(format!(
            "dilated kernel span {span} (k={kernel}, d={dilation}) exceeds input extent {input_extent}"
        ));
    }
    Ok(input_extent - (kernel - 1) * dilation)
}

/// Weights plus one bias per output channel.
pub fn conv_param_count(spec: &ConvSpec) -> usize {
    spec.out_channels * (spec.kernel * spec.kernel * spec.in_channels + 1)
}

struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn check_shapes<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    let &[batch, h, w, c] = input.dims() else {
        return shape_err(format!("conv input must be [B,H,W,C], got {:?}", input.shape()));
    };
    if c != spec.in_channels {
        return shape_err(format!("conv input has {c} channels, spec expects {}", spec.in_channels));
    }
    if weights.dims() != spec.weight_dims() {
        return shape_err(format!(
            "conv weights {:?} do not match spec {:?}",
            weights.shape(),
            spec.weight_dims()
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [spec.out_channels] {
            return shape_err(format!("conv bias {:?} must be [{}]", b.shape(), spec.out_channels));
        }
    }
    let oh = spec.output_extent(h)?;
    let ow = spec.output_extent(w)?;
    Ok(Geometry { batch, h, w, oh, ow })
}

/// Unrolls one sample `[H,W,C]` into `[OH·OW, k·k·C]` rows ordered `(u, v, c)`.
fn im2col<T: Scalar>(sample: &[T], g: &Geometry, spec: &ConvSpec, cols: &mut Vec<T>) {
    let (k, d, c) = (spec.kernel, spec.dilation, spec.in_channels);
    cols.clear();
    cols.reserve(g.oh * g.ow * spec.patch_len());
    for y in 0..g.oh {
        for x in 0..g.ow {
            for u in 0..k {
                let row = (y + u * d) * g.w;
                for v in 0..k {
                    let start = (row + x + v * d) * c;
                    cols.extend_from_slice(&sample[start..start + c]);
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto the input grid.
fn col2im_acc(d_cols: &[f64], g: &Geometry, spec: &ConvSpec, d_sample: &mut [f64]) {
    let (k, d, c) = (spec.kernel, spec.dilation, spec.in_channels);
    let mut rows = d_cols.chunks_exact(spec.patch_len());
    for y in 0..g.oh {
        for x in 0..g.ow {
            let patch = rows.next().expect("patch row count matches output grid");
            let mut taps = patch.chunks_exact(c);
            for u in 0..k {
                let row = (y + u * d) * g.w;
                for v in 0..k {
                    let start = (row + x + v * d) * c;
                    let tap = taps.next().expect("tap count matches kernel");
                    for (dst, &src) in d_sample[start..start + c].iter_mut().zip(tap) {
                        *dst += src;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    imp: ConvImpl,
) -> Result<Tensor<T>> {
    let g = check_shapes(input, weights, Some(bias), spec)?;
    let out = match imp {
        ConvImpl::Naive => forward_naive(input.data(), weights.data(), bias.data(), &g, spec),
        ConvImpl::Im2col => forward_im2col(input.data(), weights.data(), bias.data(), &g, spec),
    };
    Ok(Tensor::from_parts_unchecked(
        Shape::new(vec![g.batch, g.oh, g.ow, spec.out_channels])?,
        out,
    ))
}

fn forward_naive<T: Scalar>(x: &[T], w: &[T], bias: &[T], g: &Geometry, spec: &ConvSpec) -> Vec<T> {
    let (k, d, ci_n, co_n) = (spec.kernel, spec.dilation, spec.in_channels, spec.out_channels);
    let mut out = Vec::with_capacity(g.batch * g.oh * g.ow * co_n);
    for b in 0..g.batch {
        for y in 0..g.oh {
            for xo in 0..g.ow {
                for co in 0..co_n {
                    let mut s = bias[co].as_f64();
                    for u in 0..k {
                        for v in 0..k {
                            for ci in 0..ci_n {
                                let xi = ((b * g.h + y + u * d) * g.w + xo + v * d) * ci_n + ci;
                                let wi = ((u * k + v) * ci_n + ci) * co_n + co;
                                s += x[xi].as_f64() * w[wi].as_f64();
                            }
                        }
                    }
                    out.push(T::from_f64(s));
                }
            }
        }
    }
    out
}

fn forward_im2col<T: Scalar>(x: &[T], w: &[T], bias: &[T], g: &Geometry, spec: &ConvSpec) -> Vec<T> {
    let co = spec.out_channels;
    let rows = g.oh * g.ow;
    let sample_len = g.h * g.w * spec.in_channels;
    let w64 = widen(w);
    let bias64 = widen(bias);
    let mut cols = Vec::new();
    let mut acc = vec![0.0; rows * co];
    let mut out = Vec::with_capacity(g.batch * rows * co);
    for sample in x.chunks_exact(sample_len) {
        im2col(sample, g, spec, &mut cols);
        for row in acc.chunks_exact_mut(co) {
            row.copy_from_slice(&bias64);
        }
        gemm_acc(&cols, rows, spec.patch_len(), &w64, co, &mut acc);
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    out
}

/// Adjoint of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let (d_input, d_weights, d_bias) = conv2d_backward_parts(input, weights, spec, upstream, true)?;
    Ok(LayerGrads {
        d_input: d_input.expect("input gradient requested"),
        d_weights: Some(d_weights),
        d_bias: Some(d_bias),
    })
}

/// Like [`conv2d_backward`], but skips the input gradient when the caller has
/// no use for it (the first layer of a branch).
pub(crate) fn conv2d_backward_parts<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = check_shapes(input, weights, None, spec)?;
    let co = spec.out_channels;
    if upstream.dims() != [g.batch, g.oh, g.ow, co] {
        return shape_err(format!(
            "conv upstream {:?} does not match forward output {:?}",
            upstream.shape(),
            [g.batch, g.oh, g.ow, co]
        ));
    }
    let rows = g.oh * g.ow;
    let patch = spec.patch_len();
    let sample_len = g.h * g.w * spec.in_channels;

    let mut d_w = vec![0.0; patch * co];
    let mut d_b = vec![0.0; co];
    let mut d_x = if want_input { vec![0.0; input.len()] } else { Vec::new() };
    let mut cols = Vec::new();

    for (b, (sample, up)) in input
        .data()
        .chunks_exact(sample_len)
        .zip(upstream.data().chunks_exact(rows * co))
        .enumerate()
    {
        for row in up.chunks_exact(co) {
            for (acc, &v) in d_b.iter_mut().zip(row) {
                *acc += v.as_f64();
            }
        }
        im2col(sample, &g, spec, &mut cols);
        let partial = gemm_tn_f64(&cols, rows, patch, up, co);
        for (acc, v) in d_w.iter_mut().zip(partial) {
            *acc += v;
        }
        if want_input {
            let d_cols = gemm_nt_f64(up, rows, co, weights.data(), patch);
            col2im_acc(&d_cols, &g, spec, &mut d_x[b * sample_len..(b + 1) * sample_len]);
        }
    }

    let d_input = if want_input {
        Some(Tensor::from_parts_unchecked(input.shape().clone(), narrow(&d_x)))
    } else {
        None
    };
    Ok((
        d_input,
        Tensor::from_parts_unchecked(weights.shape().clone(), narrow(&d_w)),
        Tensor::from_parts_unchecked(Shape::new(vec![co])?, narrow(&d_b)),
    ))
}
