//! The convolutional beamforming network: one 3x3 convolution (4
//! kernels), batch normalization, leaky relu, one 32-unit dense layer,
//! and a linear head sized to the packed receiver state, gated by a
//! separate index network that maps stream counts to a soft output mask.
//! No pooling anywhere. Forward, reverse-mode gradients, Huber and
//! sum-rate losses, and the Adam optimizer all live here.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod model_io;
pub mod tensor;
pub mod unsup;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{packed_output_len, stream_mask, PackedInput};
use layers::*;
use tensor::Tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradReport, LossKind};
pub use unsup::unsupervised_loss;

pub const HIDDEN: usize = 32;
pub const INDEX_HIDDEN: usize = 32;
pub const HUBER_DELTA: f64 = 1.0;

/// Architecture, fully determined by the scenario dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetArch {
    pub n_users: usize,
    pub n_rx: usize,
}

impl NetArch {
    /// Side length of the square input image (KN_R).
    pub fn input_side(&self) -> usize {
        self.n_users * self.n_rx
    }

    pub fn flatten_dim(&self) -> usize {
        self.input_side() * self.input_side() * CONV_CHANNELS
    }

    pub fn out_dim(&self) -> usize {
        packed_output_len(self.n_users, self.n_rx)
    }
}

/// All network parameters plus the batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub arch: NetArch,
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    pub dense1_w: Vec<f64>,
    pub dense1_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub index_w1: Vec<f64>,
    pub index_b1: Vec<f64>,
    pub index_w2: Vec<f64>,
    pub index_b2: Vec<f64>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl NetParams {
    /// Uniform fan-in/fan-out init for weights, zeros for biases,
    /// gamma = 1, beta = 0, running stats at (0, 1).
    pub fn init(arch: NetArch, seed: u64) -> NetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = arch.flatten_dim();
        let out = arch.out_dim();
        let k = arch.n_users;
        NetParams {
            arch,
            conv_w: glorot(
                &mut rng,
                KERNEL * KERNEL,
                KERNEL * KERNEL * CONV_CHANNELS,
                CONV_CHANNELS * KERNEL * KERNEL,
            ),
            conv_b: vec![0.0; CONV_CHANNELS],
            bn_gamma: vec![1.0; CONV_CHANNELS],
            bn_beta: vec![0.0; CONV_CHANNELS],
            bn_running_mean: vec![0.0; CONV_CHANNELS],
            bn_running_var: vec![1.0; CONV_CHANNELS],
            dense1_w: glorot(&mut rng, flat, HIDDEN, flat * HIDDEN),
            dense1_b: vec![0.0; HIDDEN],
            out_w: glorot(&mut rng, HIDDEN, out, HIDDEN * out),
            out_b: vec![0.0; out],
            index_w1: glorot(&mut rng, k, INDEX_HIDDEN, k * INDEX_HIDDEN),
            index_b1: vec![0.0; INDEX_HIDDEN],
            index_w2: glorot(&mut rng, INDEX_HIDDEN, out, INDEX_HIDDEN * out),
            index_b2: vec![0.0; out],
        }
    }

    pub fn zeros_like(&self) -> NetParams {
        let mut z = self.clone();
        for (_, f) in z.fields_mut() {
            f.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// All parameter blobs in a fixed order (the model file order).
    pub fn fields(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("conv_w", &self.conv_w),
            ("conv_b", &self.conv_b),
            ("bn_gamma", &self.bn_gamma),
            ("bn_beta", &self.bn_beta),
            ("bn_running_mean", &self.bn_running_mean),
            ("bn_running_var", &self.bn_running_var),
            ("dense1_w", &self.dense1_w),
            ("dense1_b", &self.dense1_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
            ("index_w1", &self.index_w1),
            ("index_b1", &self.index_b1),
            ("index_w2", &self.index_w2),
            ("index_b2", &self.index_b2),
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("conv_w", &mut self.conv_w),
            ("conv_b", &mut self.conv_b),
            ("bn_gamma", &mut self.bn_gamma),
            ("bn_beta", &mut self.bn_beta),
            ("bn_running_mean", &mut self.bn_running_mean),
            ("bn_running_var", &mut self.bn_running_var),
            ("dense1_w", &mut self.dense1_w),
            ("dense1_b", &mut self.dense1_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
            ("index_w1", &mut self.index_w1),
            ("index_b1", &mut self.index_b1),
            ("index_w2", &mut self.index_w2),
            ("index_b2", &mut self.index_b2),
        ]
    }

    /// Fields the optimizer touches (running stats are data, not weights).
    pub fn is_trainable(name: &str) -> bool {
        !name.starts_with("bn_running")
    }

    pub fn is_index_field(name: &str) -> bool {
        name.starts_with("index_")
    }

    /// Fold freshly computed batch statistics into the running stats.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if let Some(bn) = &cache.bn {
            for c in 0..CONV_CHANNELS {
                self.bn_running_mean[c] =
                    BN_MOMENTUM * self.bn_running_mean[c] + (1.0 - BN_MOMENTUM) * bn.mean[c];
                self.bn_running_var[c] =
                    BN_MOMENTUM * self.bn_running_var[c] + (1.0 - BN_MOMENTUM) * bn.var[c];
            }
        }
    }
}

/// Train mode uses batch statistics and the soft mask only; eval mode
/// uses running statistics and additionally hard-zeros masked positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Every intermediate the backward pass needs, for one batch.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub batch: usize,
    pub x: Tensor,
    pub conv_pre: Tensor,
    pub bn: Option<BnCache>,
    pub bn_out: Tensor,
    pub act1: Tensor,
    pub h1_pre: Vec<f64>,
    pub h1: Vec<f64>,
    /// Head output before any masking.
    pub main_out: Vec<f64>,
    pub enc: Vec<f64>,
    pub i1_pre: Vec<f64>,
    pub i1: Vec<f64>,
    pub soft: Vec<f64>,
    pub hard: Option<Vec<f64>>,
}

/// Soft mask from stream counts: dense(K -> 32) -> leaky relu ->
/// dense(32 -> out_dim) -> sigmoid. Outputs are strictly inside (0, 1).
pub fn index_forward(d: &[usize], p: &NetParams) -> Vec<f64> {
    let enc: Vec<f64> = d.iter().map(|&dk| (dk - 1) as f64).collect();
    let i1_pre = dense_forward(&enc, 1, &p.index_w1, &p.index_b1);
    let i1 = leaky_relu(&i1_pre, LEAKY_SLOPE);
    let i2_pre = dense_forward(&i1, 1, &p.index_w2, &p.index_b2);
    sigmoid(&i2_pre)
}

/// Batched forward pass. `bn_batch` selects batch vs running statistics;
/// `hard` applies the exact stream mask after the soft mask.
pub fn forward_batch(
    p: &NetParams,
    inputs: &[PackedInput],
    d: &[&[usize]],
    bn_batch: bool,
    hard: bool,
) -> (Vec<Vec<f64>>, ForwardCache) {
    let bs = inputs.len();
    assert!(bs > 0 && d.len() == bs);
    let side = p.arch.input_side();
    let out_dim = p.arch.out_dim();
    let k = p.arch.n_users;

    let mut x = Tensor::zeros(vec![bs, side, side, 1]);
    for (bi, inp) in inputs.iter().enumerate() {
        assert_eq!(inp.n, side, "input side mismatch");
        x.data[bi * side * side..(bi + 1) * side * side].copy_from_slice(&inp.m);
    }
    let conv_pre = conv_forward(&x, &p.conv_w, &p.conv_b);
    let (bn_out, bn) = if bn_batch {
        let (y, c) = bn_forward_train(&conv_pre, &p.bn_gamma, &p.bn_beta);
        (y, Some(c))
    } else {
        (
            bn_forward_eval(
                &conv_pre,
                &p.bn_gamma,
                &p.bn_beta,
                &p.bn_running_mean,
                &p.bn_running_var,
            ),
            None,
        )
    };
    let act1 = Tensor::new(bn_out.shape.clone(), leaky_relu(&bn_out.data, LEAKY_SLOPE));
    // flatten: each sample's [H][W][C] block is already contiguous
    let flat = &act1.data;
    let h1_pre = dense_forward(flat, bs, &p.dense1_w, &p.dense1_b);
    let h1 = leaky_relu(&h1_pre, LEAKY_SLOPE);
    let main_out = dense_forward(&h1, bs, &p.out_w, &p.out_b);

    let mut enc = Vec::with_capacity(bs * k);
    for dk in d {
        assert_eq!(dk.len(), k);
        enc.extend(dk.iter().map(|&v| (v - 1) as f64));
    }
    let i1_pre = dense_forward(&enc, bs, &p.index_w1, &p.index_b1);
    let i1 = leaky_relu(&i1_pre, LEAKY_SLOPE);
    let i2_pre = dense_forward(&i1, bs, &p.index_w2, &p.index_b2);
    let soft = sigmoid(&i2_pre);

    let hard_mask = hard.then(|| {
        let mut m = Vec::with_capacity(bs * out_dim);
        for dk in d {
            m.extend(stream_mask(dk, p.arch.n_rx));
        }
        m
    });

    let mut outs = Vec::with_capacity(bs);
    for bi in 0..bs {
        let row = &main_out[bi * out_dim..(bi + 1) * out_dim];
        let srow = &soft[bi * out_dim..(bi + 1) * out_dim];
        let mut o: Vec<f64> = row.iter().zip(srow).map(|(m, s)| m * s).collect();
        if let Some(hm) = &hard_mask {
            for (v, m) in o.iter_mut().zip(&hm[bi * out_dim..(bi + 1) * out_dim]) {
                *v *= m;
            }
        }
        outs.push(o);
    }
    let cache = ForwardCache {
        batch: bs,
        x,
        conv_pre,
        bn,
        bn_out,
        act1,
        h1_pre,
        h1,
        main_out,
        enc,
        i1_pre,
        i1,
        soft,
        hard: hard_mask,
    };
    (outs, cache)
}

/// Single-sample forward in the spec'd two modes.
pub fn cmbnn_forward(
    p: &NetParams,
    input: &PackedInput,
    d: &[usize],
    mode: Mode,
) -> (Vec<f64>, ForwardCache) {
    let (mut outs, cache) = match mode {
        Mode::Train => forward_batch(p, std::slice::from_ref(input), &[d], true, false),
        Mode::Eval => forward_batch(p, std::slice::from_ref(input), &[d], false, true),
    };
    (outs.pop().unwrap(), cache)
}

/// Reverse pass for a batch. `g_out` is dL/d(final output) per sample;
/// `train_index` routes gradient into the index network (supervised
/// training) or treats its parameters as constants (sum-rate loss).
/// Returned grads leave the bn running-stat fields at zero.
pub fn backward_batch(
    p: &NetParams,
    cache: &ForwardCache,
    g_out: &[Vec<f64>],
    train_index: bool,
) -> NetParams {
    let bs = cache.batch;
    assert_eq!(g_out.len(), bs);
    let out_dim = p.arch.out_dim();
    let mut grads = p.zeros_like();

    // through the hard mask, then split into main / soft paths
    let mut g_main = vec![0.0; bs * out_dim];
    let mut g_soft = vec![0.0; bs * out_dim];
    for bi in 0..bs {
        for o in 0..out_dim {
            let idx = bi * out_dim + o;
            let mut g = g_out[bi][o];
            if let Some(hm) = &cache.hard {
                g *= hm[idx];
            }
            g_main[idx] = g * cache.soft[idx];
            g_soft[idx] = g * cache.main_out[idx];
        }
    }

    if train_index {
        let g_i2pre = sigmoid_backward(&cache.soft, &g_soft);
        let (g_i1, g_iw2, g_ib2) = dense_backward(&cache.i1, bs, &p.index_w2, out_dim, &g_i2pre);
        let g_i1pre = leaky_relu_backward(&cache.i1_pre, &g_i1, LEAKY_SLOPE);
        let (_, g_iw1, g_ib1) = dense_backward(&cache.enc, bs, &p.index_w1, INDEX_HIDDEN, &g_i1pre);
        grads.index_w1 = g_iw1;
        grads.index_b1 = g_ib1;
        grads.index_w2 = g_iw2;
        grads.index_b2 = g_ib2;
    }

    let (g_h1, g_w2, g_b2) = dense_backward(&cache.h1, bs, &p.out_w, out_dim, &g_main);
    grads.out_w = g_w2;
    grads.out_b = g_b2;
    let g_h1pre = leaky_relu_backward(&cache.h1_pre, &g_h1, LEAKY_SLOPE);
    let (g_flat, g_w1, g_b1) = dense_backward(&cache.act1.data, bs, &p.dense1_w, HIDDEN, &g_h1pre);
    grads.dense1_w = g_w1;
    grads.dense1_b = g_b1;
    let g_act1 = Tensor::new(cache.act1.shape.clone(), g_flat);
    let g_bnout = Tensor::new(
        cache.bn_out.shape.clone(),
        leaky_relu_backward(&cache.bn_out.data, &g_act1.data, LEAKY_SLOPE),
    );
    let bn = cache
        .bn
        .as_ref()
        .expect("backward requires batch-statistics forward");
    let (g_convpre, g_gamma, g_beta) = bn_backward(bn, &p.bn_gamma, &g_bnout);
    grads.bn_gamma = g_gamma;
    grads.bn_beta = g_beta;
    let (g_cw, g_cb) = conv_backward(&cache.x, &g_convpre);
    grads.conv_w = g_cw;
    grads.conv_b = g_cb;
    grads
}

/// Mean elementwise Huber loss and its gradient w.r.t. pred.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let e = p - t;
        if e.abs() <= delta {
            loss += 0.5 * e * e;
            grad.push(e / n);
        } else {
            loss += delta * (e.abs() - 0.5 * delta);
            grad.push(delta * e.signum() / n);
        }
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{normalize_sample, sample_channel, weighted_gram, ChannelConfig};
    use crate::codec::{pack_gram, unpack_uw};

    fn arch1() -> NetArch {
        NetArch { n_users: 2, n_rx: 2 }
    }

    fn case1_input(seed: u64) -> (PackedInput, Vec<usize>) {
        let s = normalize_sample(&sample_channel(&ChannelConfig::case(1, seed), seed));
        (pack_gram(&weighted_gram(&s)).unwrap(), s.d)
    }

    #[test]
    fn index_outputs_stay_in_unit_interval() {
        let p = NetParams::init(arch1(), 3);
        let soft = index_forward(&[1, 2], &p);
        assert_eq!(soft.len(), 24);
        assert!(soft.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn index_zero_params_give_half() {
        let p = NetParams::init(arch1(), 4).zeros_like();
        let soft = index_forward(&[2, 1], &p);
        assert!(soft.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_mode_zeroes_masked_positions() {
        let p = NetParams::init(arch1(), 5);
        let (input, _) = case1_input(5);
        let d = vec![1usize, 2usize];
        let (out, _) = cmbnn_forward(&p, &input, &d, Mode::Eval);
        let mask = stream_mask(&d, 2);
        for (o, m) in out.iter().zip(&mask) {
            if *m == 0.0 {
                assert_eq!(*o, 0.0);
            } else {
                assert_ne!(*o, 0.0);
            }
        }
        // unpacked U has exactly d_k columns by layout
        let (us, _) = unpack_uw(&out, &d, 2);
        assert_eq!(us[0].cols(), 1);
        assert_eq!(us[1].cols(), 2);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetParams::init(arch1(), 6).zeros_like();
        let (input, d) = case1_input(6);
        let (out, _) = cmbnn_forward(&p, &input, &d, Mode::Train);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_vs_eval_differ_only_at_masked_positions_when_stats_agree() {
        let mut p = NetParams::init(arch1(), 7);
        let (input, _) = case1_input(7);
        let d = vec![1usize, 1usize];
        // pin running stats to this input's batch statistics
        let (_, cache) = cmbnn_forward(&p, &input, &d, Mode::Train);
        let bn = cache.bn.as_ref().unwrap();
        p.bn_running_mean = bn.mean.clone();
        p.bn_running_var = bn.var.clone();
        let (train_out, _) = cmbnn_forward(&p, &input, &d, Mode::Train);
        let (eval_out, _) = cmbnn_forward(&p, &input, &d, Mode::Eval);
        let mask = stream_mask(&d, 2);
        for i in 0..train_out.len() {
            if mask[i] == 1.0 {
                assert!(
                    (train_out[i] - eval_out[i]).abs() < 1e-12,
                    "position {i} differs"
                );
            } else {
                assert_eq!(eval_out[i], 0.0);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = NetParams::init(arch1(), 8);
        let (input, d) = case1_input(8);
        let (a, _) = cmbnn_forward(&p, &input, &d, Mode::Eval);
        let (b, _) = cmbnn_forward(&p, &input, &d, Mode::Eval);
        assert_eq!(a, b);
    }

    #[test]
    fn doubling_head_weights_doubles_premask_output() {
        let p = NetParams::init(arch1(), 9);
        let (input, d) = case1_input(9);
        let (_, cache1) = cmbnn_forward(&p, &input, &d, Mode::Eval);
        let mut p2 = p.clone();
        p2.out_w.iter_mut().for_each(|v| *v *= 2.0);
        p2.out_b.iter_mut().for_each(|v| *v *= 2.0);
        let (_, cache2) = cmbnn_forward(&p2, &input, &d, Mode::Eval);
        for (a, b) in cache1.main_out.iter().zip(&cache2.main_out) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bn_inference_is_constant_after_freezing() {
        let mut p = NetParams::init(arch1(), 10);
        let (input, d) = case1_input(10);
        let (_, cache) = cmbnn_forward(&p, &input, &d, Mode::Train);
        p.update_running_stats(&cache);
        let (a, _) = cmbnn_forward(&p, &input, &d, Mode::Eval);
        for _ in 0..3 {
            let (b, _) = cmbnn_forward(&p, &input, &d, Mode::Eval);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn huber_reference_values() {
        let (l0, g0) = huber_loss(&[1.0, -2.0], &[1.0, -2.0], 1.0);
        assert_eq!(l0, 0.0);
        assert!(g0.iter().all(|&g| g == 0.0));

        let (l1, _) = huber_loss(&[0.5], &[0.0], 1.0);
        assert!((l1 - 0.125).abs() < 1e-15);

        let (l2, g2) = huber_loss(&[3.0], &[0.0], 1.0);
        assert!((l2 - 2.5).abs() < 1e-15);
        assert_eq!(g2, vec![1.0]);
    }
}
