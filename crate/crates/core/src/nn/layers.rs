//! Layer primitives with hand-written backward passes. Everything is
//! batched with channels-last layout [B, H, W, C].

use super::tensor::Tensor;

pub const CONV_CHANNELS: usize = 4;
pub const KERNEL: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Same-padded 3x3 convolution, stride 1, single input channel.
/// Kernels are laid out [out_channel][ki][kj].
pub fn conv_forward(x: &Tensor, w: &[f64], b: &[f64]) -> Tensor {
    let (bs, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    assert_eq!(x.shape[3], 1, "conv expects a single input channel");
    assert!(h >= KERNEL && wd >= KERNEL, "spatial dims must fit the kernel");
    assert_eq!(w.len(), CONV_CHANNELS * KERNEL * KERNEL);
    assert_eq!(b.len(), CONV_CHANNELS);
    let mut y = Tensor::zeros(vec![bs, h, wd, CONV_CHANNELS]);
    for bi in 0..bs {
        for i in 0..h {
            for j in 0..wd {
                for oc in 0..CONV_CHANNELS {
                    let mut s = b[oc];
                    for ki in 0..KERNEL {
                        let ii = i + ki;
                        if ii < 1 || ii > h {
                            continue;
                        }
                        for kj in 0..KERNEL {
                            let jj = j + kj;
                            if jj < 1 || jj > wd {
                                continue;
                            }
                            s += x.data[x.idx4(bi, ii - 1, jj - 1, 0)]
                                * w[(oc * KERNEL + ki) * KERNEL + kj];
                        }
                    }
                    let o = y.idx4(bi, i, j, oc);
                    y.data[o] = s;
                }
            }
        }
    }
    y
}

/// Gradients for kernel and bias. The input gradient is never needed
/// (the convolution is the first layer).
pub fn conv_backward(x: &Tensor, g_y: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (bs, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut g_w = vec![0.0; CONV_CHANNELS * KERNEL * KERNEL];
    let mut g_b = vec![0.0; CONV_CHANNELS];
    for bi in 0..bs {
        for i in 0..h {
            for j in 0..wd {
                for oc in 0..CONV_CHANNELS {
                    let g = g_y.data[g_y.idx4(bi, i, j, oc)];
                    if g == 0.0 {
                        continue;
                    }
                    g_b[oc] += g;
                    for ki in 0..KERNEL {
                        let ii = i + ki;
                        if ii < 1 || ii > h {
                            continue;
                        }
                        for kj in 0..KERNEL {
                            let jj = j + kj;
                            if jj < 1 || jj > wd {
                                continue;
                            }
                            g_w[(oc * KERNEL + ki) * KERNEL + kj] +=
                                g * x.data[x.idx4(bi, ii - 1, jj - 1, 0)];
                        }
                    }
                }
            }
        }
    }
    (g_w, g_b)
}

#[derive(Clone, Debug)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Tensor,
}

/// Batch-statistics normalization over (batch, height, width) per channel,
/// then scale/shift. Returns the cache the backward pass and the running-
/// stat update need.
pub fn bn_forward_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache) {
    let c = *x.shape.last().unwrap();
    let n = x.numel() / c;
    let mut mean = vec![0.0; c];
    for (i, v) in x.data.iter().enumerate() {
        mean[i % c] += v;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; c];
    for (i, v) in x.data.iter().enumerate() {
        let d = v - mean[i % c];
        var[i % c] += d * d;
    }
    for v in &mut var {
        *v /= n as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape.clone());
    let mut y = Tensor::zeros(x.shape.clone());
    for (i, v) in x.data.iter().enumerate() {
        let ch = i % c;
        let xh = (v - mean[ch]) * inv_std[ch];
        xhat.data[i] = xh;
        y.data[i] = gamma[ch] * xh + beta[ch];
    }
    (
        y,
        BnCache {
            mean,
            var,
            inv_std,
            xhat,
        },
    )
}

/// Inference-mode normalization with frozen running statistics.
pub fn bn_forward_eval(x: &Tensor, gamma: &[f64], beta: &[f64], rm: &[f64], rv: &[f64]) -> Tensor {
    let c = *x.shape.last().unwrap();
    let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut y = Tensor::zeros(x.shape.clone());
    for (i, v) in x.data.iter().enumerate() {
        let ch = i % c;
        y.data[i] = gamma[ch] * (v - rm[ch]) * inv_std[ch] + beta[ch];
    }
    y
}

/// Backward through batch statistics.
pub fn bn_backward(cache: &BnCache, gamma: &[f64], g_y: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let n = (g_y.numel() / c) as f64;
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    let mut sum_gxhat = vec![0.0; c];
    for (i, g) in g_y.data.iter().enumerate() {
        let ch = i % c;
        g_gamma[ch] += g * cache.xhat.data[i];
        g_beta[ch] += g;
        sum_gxhat[ch] += g * cache.xhat.data[i];
    }
    let mut g_x = Tensor::zeros(g_y.shape.clone());
    for (i, g) in g_y.data.iter().enumerate() {
        let ch = i % c;
        g_x.data[i] = gamma[ch] * cache.inv_std[ch]
            * (g - g_beta[ch] / n - cache.xhat.data[i] * sum_gxhat[ch] / n);
    }
    (g_x, g_gamma, g_beta)
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect()
}

pub fn leaky_relu_backward(x_pre: &[f64], g_y: &[f64], slope: f64) -> Vec<f64> {
    x_pre
        .iter()
        .zip(g_y)
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect()
}

/// y = x W + b for a batch of row vectors; W is [in, out] row-major.
pub fn dense_forward(x: &[f64], bs: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out_dim = b.len();
    let in_dim = x.len() / bs;
    assert_eq!(w.len(), in_dim * out_dim, "dense weight shape");
    let mut y = vec![0.0; bs * out_dim];
    for bi in 0..bs {
        let xr = &x[bi * in_dim..(bi + 1) * in_dim];
        let yr = &mut y[bi * out_dim..(bi + 1) * out_dim];
        yr.copy_from_slice(b);
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[i * out_dim..(i + 1) * out_dim];
            for (yv, &wv) in yr.iter_mut().zip(wr) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Gradients of a dense layer: returns (g_x, g_w, g_b).
pub fn dense_backward(
    x: &[f64],
    bs: usize,
    w: &[f64],
    out_dim: usize,
    g_y: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = x.len() / bs;
    let mut g_x = vec![0.0; bs * in_dim];
    let mut g_w = vec![0.0; in_dim * out_dim];
    let mut g_b = vec![0.0; out_dim];
    for bi in 0..bs {
        let xr = &x[bi * in_dim..(bi + 1) * in_dim];
        let gr = &g_y[bi * out_dim..(bi + 1) * out_dim];
        for (o, &g) in gr.iter().enumerate() {
            g_b[o] += g;
        }
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &w[i * out_dim..(i + 1) * out_dim];
            let gwr = &mut g_w[i * out_dim..(i + 1) * out_dim];
            let mut acc = 0.0;
            for o in 0..out_dim {
                let g = gr[o];
                gwr[o] += g * xv;
                acc += g * wr[o];
            }
            g_x[bi * in_dim + i] = acc;
        }
    }
    (g_x, g_w, g_b)
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

pub fn sigmoid_backward(y: &[f64], g_y: &[f64]) -> Vec<f64> {
    y.iter().zip(g_y).map(|(&s, &g)| g * s * (1.0 - s)).collect()
}
