//! Tensor operations on NCHW `f32` tensors that candle lacks or only
//! supports partially: asymmetric "same" padding, Keras-style average
//! pooling, pooling with a backward pass for any window/stride, batch
//! normalization and a stable logistic loss.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output size and zero padding before/after along one axis. "Same" places
/// the extra cell of an odd total padding after the input.
pub fn pad_amounts(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize, usize) {
    match padding {
        Padding::Valid => ((input.saturating_sub(kernel)) / stride + 1, 0, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2, total - total / 2)
        }
    }
}

fn pad_zeros(x: &Tensor, kh: usize, kw: usize, stride: usize, padding: Padding) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (_, top, bottom) = pad_amounts(h, kh, stride, padding);
    let (_, left, right) = pad_amounts(w, kw, stride, padding);
    let mut x = x.clone();
    if top + bottom > 0 {
        x = x.pad_with_zeros(2, top, bottom)?;
    }
    if left + right > 0 {
        x = x.pad_with_zeros(3, left, right)?;
    }
    Ok(x)
}

/// 2-D convolution with an OIHW kernel and optional bias.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: Padding) -> Result<Tensor> {
    let (_, _, kh, kw) = kernel.dims4()?;
    let x = pad_zeros(x, kh, kw, stride, padding)?;
    let y = x.conv2d(kernel, 0, stride, 1, 1)?;
    Ok(match bias {
        Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?)?,
        None => y,
    })
}

fn subsample(x: &Tensor, dim: usize, stride: usize, count: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let idx: Vec<u32> = (0..count as u32).map(|i| i * stride as u32).collect();
    let idx = Tensor::from_vec(idx, count, x.device())?;
    Ok(x.contiguous()?.index_select(&idx, dim)?)
}

/// Every `k×k` window position as a strided view, one tensor per offset.
fn windows(x: &Tensor, k: usize, stride: usize) -> Result<Vec<Tensor>> {
    let (_, _, h, w) = x.dims4()?;
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(k * k);
    for di in 0..k {
        for dj in 0..k {
            let t = x
                .narrow(2, di, (oh - 1) * stride + 1)?
                .narrow(3, dj, (ow - 1) * stride + 1)?;
            let t = subsample(&t, 2, stride, oh)?;
            out.push(subsample(&t, 3, stride, ow)?);
        }
    }
    Ok(out)
}

/// Max pooling. With `differentiable` the result supports backward for any
/// window and stride; otherwise candle's kernel is used, which only
/// differentiates when window equals stride.
pub fn max_pool(x: &Tensor, k: usize, stride: usize, padding: Padding, differentiable: bool) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (_, top, bottom) = pad_amounts(h, k, stride, padding);
    let (_, left, right) = pad_amounts(w, k, stride, padding);
    // edge replication never changes a window maximum: each padded cell
    // copies a real cell that lies in every window containing it
    let mut x = x.clone();
    if top + bottom > 0 {
        x = x.pad_with_same(2, top, bottom)?;
    }
    if left + right > 0 {
        x = x.pad_with_same(3, left, right)?;
    }
    if !differentiable || k == stride {
        return Ok(x.max_pool2d_with_stride(k, stride)?);
    }
    let mut it = windows(&x, k, stride)?.into_iter();
    let mut acc = it.next().expect("window is non-empty");
    for t in it {
        acc = acc.maximum(&t)?;
    }
    Ok(acc)
}

/// Number of real (unpadded) cells in each output window, shape `(1,1,oh,ow)`.
fn window_counts(h: usize, w: usize, k: usize, stride: usize, padding: Padding, device: &Device) -> Result<Tensor> {
    let (oh, top, _) = pad_amounts(h, k, stride, padding);
    let (ow, left, _) = pad_amounts(w, k, stride, padding);
    let span = |o: usize, before: usize, n: usize| {
        let start = (o * stride) as isize - before as isize;
        let end = start + k as isize;
        (end.min(n as isize) - start.max(0)) as f32
    };
    let mut counts = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            counts.push(span(i, top, h) * span(j, left, w));
        }
    }
    Ok(Tensor::from_vec(counts, (1, 1, oh, ow), device)?)
}

/// Average pooling; "same" padding averages over real cells only.
pub fn avg_pool(x: &Tensor, k: usize, stride: usize, padding: Padding, differentiable: bool) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let padded = pad_zeros(x, k, k, stride, padding)?;
    let sum = if !differentiable || k == stride {
        (padded.avg_pool2d_with_stride(k, stride)? * (k * k) as f64)?
    } else {
        let mut it = windows(&padded, k, stride)?.into_iter();
        let mut acc = it.next().expect("window is non-empty");
        for t in it {
            acc = (acc + t)?;
        }
        acc
    };
    match padding {
        Padding::Valid => Ok((sum / (k * k) as f64)?),
        Padding::Same => Ok(sum.broadcast_div(&window_counts(h, w, k, stride, padding, x.device())?)?),
    }
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean((2, 3))?)
}

/// Inference-mode batch normalization from per-channel statistics.
pub fn batch_norm(
    x: &Tensor,
    gamma: Option<&Tensor>,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let inv = (var + eps)?.sqrt()?.recip()?;
    let scale = match gamma {
        Some(g) => (inv * g)?,
        None => inv,
    };
    let shift = (beta - (mean * &scale)?)?;
    Ok(x.broadcast_mul(&scale.reshape((1, (), 1, 1))?)?
        .broadcast_add(&shift.reshape((1, (), 1, 1))?)?)
}

/// Training-mode batch normalization. Returns the output and the detached
/// batch mean and (biased) variance for the moving-statistics update.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: Option<&Tensor>,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = x.dim(1)?;
    let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
    let mut y = centered.broadcast_div(&(&var + eps)?.sqrt()?)?;
    if let Some(g) = gamma {
        y = y.broadcast_mul(&g.reshape((1, c, 1, 1))?)?;
    }
    y = y.broadcast_add(&beta.reshape((1, c, 1, 1))?)?;
    Ok((y, mean.flatten_all()?.detach(), var.flatten_all()?.detach()))
}

/// Mean logistic loss from logits, `max(x,0) - x·t + ln(1 + e^-|x|)`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let relu = logits.relu()?;
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((relu - (logits * targets)?)? + softplus)?.mean_all()?)
}

/// Mean categorical cross-entropy of logits against class indices.
pub fn softmax_cross_entropy(logits: &Tensor, classes: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::loss::cross_entropy(logits, classes)?)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax_last_dim(logits)?)
}

/// Row-wise argmax as `u32` class indices.
pub fn argmax_rows(x: &Tensor) -> Result<Vec<u32>> {
    Ok(x.argmax(D::Minus1)?.to_dtype(DType::U32)?.to_vec1()?)
}
