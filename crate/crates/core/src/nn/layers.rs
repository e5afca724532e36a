//! Per-layer forward and backward passes.
//!
//! Convolution and pooling use "same" padding: the output length is
//! `ceil(in_len / stride)` and the input is padded symmetrically (extra
//! sample on the right when the total padding is odd). Padded positions
//! contribute nothing to sums and are skipped by max pooling.

use super::tensor::Tensor2D;
use super::{Layer, LayerGrads, LayerKind};

pub fn strided_out_len(in_len: usize, stride: usize) -> usize {
    in_len.div_ceil(stride)
}

pub fn same_pad_left(in_len: usize, kernel: usize, stride: usize) -> usize {
    let out = strided_out_len(in_len, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(in_len);
    total / 2
}

pub fn forward(layer: &Layer, input: &Tensor2D) -> Tensor2D {
    match layer.spec.kind {
        LayerKind::Dense => dense_forward(layer, input),
        LayerKind::Conv1d => conv_forward(layer, input),
        LayerKind::MaxPool1d => pool_forward(layer, input),
        LayerKind::Relu => relu_forward(input),
        LayerKind::Softmax => softmax_forward(input),
        LayerKind::Flatten => input.clone().flattened(),
    }
}

/// Propagate `grad_out` through `layer`, accumulating parameter gradients
/// into `grads` and returning the gradient with respect to the input.
pub fn backward(
    layer: &Layer,
    input: &Tensor2D,
    output: &Tensor2D,
    grad_out: &Tensor2D,
    grads: &mut LayerGrads,
) -> Tensor2D {
    match layer.spec.kind {
        LayerKind::Dense => dense_backward(layer, input, grad_out, grads),
        LayerKind::Conv1d => conv_backward(layer, input, grad_out, grads),
        LayerKind::MaxPool1d => pool_backward(layer, input, grad_out),
        LayerKind::Relu => relu_backward(input, grad_out),
        LayerKind::Softmax => softmax_backward(output, grad_out),
        LayerKind::Flatten => grad_out.clone().reshaped(input.rows(), input.cols()),
    }
}

fn dense_forward(layer: &Layer, input: &Tensor2D) -> Tensor2D {
    let x = input.values();
    let n_in = layer.spec.in_features;
    let n_out = layer.spec.out_features;
    let mut out = Tensor2D::zeros(1, n_out);
    for (o, y) in out.values_mut().iter_mut().enumerate() {
        let w = &layer.weights[o * n_in..(o + 1) * n_in];
        let mut acc = layer.bias[o];
        for (wi, xi) in w.iter().zip(x) {
            acc += wi * xi;
        }
        *y = acc;
    }
    out
}

fn dense_backward(
    layer: &Layer,
    input: &Tensor2D,
    grad_out: &Tensor2D,
    grads: &mut LayerGrads,
) -> Tensor2D {
    let x = input.values();
    let dy = grad_out.values();
    let n_in = layer.spec.in_features;
    let mut dx = Tensor2D::zeros(1, n_in);
    for (o, &g) in dy.iter().enumerate() {
        grads.bias[o] += g;
        let w = &layer.weights[o * n_in..(o + 1) * n_in];
        let dw = &mut grads.weights[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            dw[i] += g * x[i];
            dx.values_mut()[i] += g * w[i];
        }
    }
    dx
}

fn conv_forward(layer: &Layer, input: &Tensor2D) -> Tensor2D {
    let in_ch = layer.spec.in_features;
    let out_ch = layer.spec.out_features;
    let k = layer.spec.kernel_size;
    let stride = layer.spec.stride;
    let in_len = input.cols();
    let out_len = strided_out_len(in_len, stride);
    let pad_left = same_pad_left(in_len, k, stride);

    let mut out = Tensor2D::zeros(out_ch, out_len);
    for oc in 0..out_ch {
        for o in 0..out_len {
            let mut acc = layer.bias[oc];
            let window_start = (o * stride) as isize - pad_left as isize;
            for ic in 0..in_ch {
                let x = input.row(ic);
                let w = &layer.weights[((oc * in_ch) + ic) * k..((oc * in_ch) + ic + 1) * k];
                for (j, wj) in w.iter().enumerate() {
                    let idx = window_start + j as isize;
                    if idx >= 0 && (idx as usize) < in_len {
                        acc += wj * x[idx as usize];
                    }
                }
            }
            out.values_mut()[oc * out_len + o] = acc;
        }
    }
    out
}

fn conv_backward(
    layer: &Layer,
    input: &Tensor2D,
    grad_out: &Tensor2D,
    grads: &mut LayerGrads,
) -> Tensor2D {
    let in_ch = layer.spec.in_features;
    let out_ch = layer.spec.out_features;
    let k = layer.spec.kernel_size;
    let stride = layer.spec.stride;
    let in_len = input.cols();
    let pad_left = same_pad_left(in_len, k, stride);

    let mut dx = Tensor2D::zeros(in_ch, in_len);
    for oc in 0..out_ch {
        let dy = grad_out.row(oc);
        grads.bias[oc] += dy.iter().sum::<f64>();
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let window_start = (o * stride) as isize - pad_left as isize;
            for ic in 0..in_ch {
                let x = input.row(ic);
                let base = ((oc * in_ch) + ic) * k;
                for j in 0..k {
                    let idx = window_start + j as isize;
                    if idx >= 0 && (idx as usize) < in_len {
                        grads.weights[base + j] += g * x[idx as usize];
                        dx.values_mut()[ic * in_len + idx as usize] +=
                            g * layer.weights[base + j];
                    }
                }
            }
        }
    }
    dx
}

/// Max positions within each pooling window; ties go to the leftmost sample.
fn pool_row_argmax(x: &[f64], k: usize, stride: usize) -> Vec<usize> {
    let in_len = x.len();
    let out_len = strided_out_len(in_len, stride);
    let pad_left = same_pad_left(in_len, k, stride);
    let mut arg = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let window_start = (o * stride) as isize - pad_left as isize;
        let lo = window_start.max(0) as usize;
        let hi = ((window_start + k as isize) as usize).min(in_len);
        let mut best = lo;
        for idx in lo + 1..hi {
            if x[idx] > x[best] {
                best = idx;
            }
        }
        arg.push(best);
    }
    arg
}

fn pool_forward(layer: &Layer, input: &Tensor2D) -> Tensor2D {
    let k = layer.spec.kernel_size;
    let stride = layer.spec.stride;
    let out_len = strided_out_len(input.cols(), stride);
    let mut out = Tensor2D::zeros(input.rows(), out_len);
    for ch in 0..input.rows() {
        let x = input.row(ch);
        for (o, &idx) in pool_row_argmax(x, k, stride).iter().enumerate() {
            out.values_mut()[ch * out_len + o] = x[idx];
        }
    }
    out
}

fn pool_backward(layer: &Layer, input: &Tensor2D, grad_out: &Tensor2D) -> Tensor2D {
    let k = layer.spec.kernel_size;
    let stride = layer.spec.stride;
    let in_len = input.cols();
    let mut dx = Tensor2D::zeros(input.rows(), in_len);
    for ch in 0..input.rows() {
        let dy = grad_out.row(ch);
        for (o, &idx) in pool_row_argmax(input.row(ch), k, stride).iter().enumerate() {
            dx.values_mut()[ch * in_len + idx] += dy[o];
        }
    }
    dx
}

fn relu_forward(input: &Tensor2D) -> Tensor2D {
    let mut out = input.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn relu_backward(input: &Tensor2D, grad_out: &Tensor2D) -> Tensor2D {
    let mut dx = grad_out.clone();
    for (d, &x) in dx.values_mut().iter_mut().zip(input.values()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Numerically stable softmax over a flat vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax_forward(input: &Tensor2D) -> Tensor2D {
    Tensor2D::from_flat(softmax(input.values()))
}

fn softmax_backward(output: &Tensor2D, grad_out: &Tensor2D) -> Tensor2D {
    let p = output.values();
    let dy = grad_out.values();
    let dot: f64 = p.iter().zip(dy).map(|(pi, gi)| pi * gi).sum();
    let dx: Vec<f64> = p.iter().zip(dy).map(|(pi, gi)| pi * (gi - dot)).collect();
    Tensor2D::from_flat(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn conv_layer(in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Layer {
        Layer {
            spec: LayerSpec {
                kind: LayerKind::Conv1d,
                kernel_size: k,
                stride,
                in_features: in_ch,
                out_features: out_ch,
            },
            weights: vec![0.0; out_ch * in_ch * k],
            bias: vec![0.0; out_ch],
        }
    }

    #[test]
    fn same_padding_lengths() {
        assert_eq!(strided_out_len(2040, 2), 1020);
        assert_eq!(strided_out_len(1020, 2), 510);
        assert_eq!(strided_out_len(510, 2), 255);
        assert_eq!(strided_out_len(255, 2), 128);
        assert_eq!(strided_out_len(5, 2), 3);
        // out=3 -> covered span (3-1)*2+3 = 7 over 5 samples: pad 2, left gets 1
        assert_eq!(same_pad_left(5, 3, 2), 1);
        assert_eq!(same_pad_left(6, 4, 2), 1);
        assert_eq!(same_pad_left(2040, 10, 2), 4);
        // kernel covers the input exactly: no padding
        assert_eq!(same_pad_left(4, 2, 2), 0);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut layer = conv_layer(1, 1, 1, 1);
        layer.weights[0] = 1.0;
        let x = Tensor2D::from_flat(vec![3.0, -1.0, 2.0]);
        assert_eq!(forward(&layer, &x).values(), x.values());
    }

    #[test]
    fn conv_moving_sum_with_padding() {
        let mut layer = conv_layer(1, 1, 3, 1);
        layer.weights.copy_from_slice(&[1.0, 1.0, 1.0]);
        let x = Tensor2D::from_flat(vec![1.0, 2.0, 3.0, 4.0]);
        // pad_left = 1: windows [_,1,2] [1,2,3] [2,3,4] [3,4,_]
        assert_eq!(forward(&layer, &x).values(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn pool_takes_window_max() {
        let layer = Layer {
            spec: LayerSpec {
                kind: LayerKind::MaxPool1d,
                kernel_size: 2,
                stride: 2,
                in_features: 1,
                out_features: 1,
            },
            weights: vec![],
            bias: vec![],
        };
        let x = Tensor2D::from_flat(vec![1.0, 5.0, -2.0, -7.0, 4.0]);
        assert_eq!(forward(&layer, &x).values(), &[5.0, -2.0, 4.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
        // shift invariance
        let q = softmax(&[1001.0, 1002.0, 1003.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
