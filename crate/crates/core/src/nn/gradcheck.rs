//! Central finite-difference verification of the analytic gradients.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{weighted_gram, ChannelSample};
use crate::codec::pack_gram;
use crate::error::Result;

use super::{
    backward_batch, forward_batch, huber_loss, unsupervised_loss, NetParams, HUBER_DELTA,
};

pub const FD_STEP: f64 = 1e-6;

/// Displace bias vectors by a small uniform amount. Freshly initialized
/// biases are exactly zero, which parks the index-network hidden layer
/// exactly on the leaky-relu kink whenever every user has a single
/// stream (the encoded input is all zeros); central differences are
/// meaningless there. Checking at a jittered point keeps the loss
/// differentiable without changing what is being verified.
pub fn jitter_biases(params: &mut NetParams, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, f) in params.fields_mut() {
        if name.ends_with("_b") || name.ends_with("_b1") || name.ends_with("_b2") || name == "bn_beta" {
            for v in f.iter_mut() {
                *v += rng.gen_range(-scale..scale);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Huber,
    Unsupervised,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub loss_kind: LossKind,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: Option<(String, usize)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Flat index space over a subset of parameter fields.
fn indexable_fields(p: &NetParams, include_index: bool) -> Vec<(&'static str, usize)> {
    p.fields()
        .iter()
        .filter(|(name, _)| {
            NetParams::is_trainable(name) && (include_index || !NetParams::is_index_field(name))
        })
        .map(|(name, f)| (*name, f.len()))
        .collect()
}

fn get_param(p: &NetParams, field: &str, i: usize) -> f64 {
    p.fields()
        .into_iter()
        .find(|(n, _)| *n == field)
        .map(|(_, f)| f[i])
        .unwrap()
}

fn set_param(p: &mut NetParams, field: &str, i: usize, v: f64) {
    for (n, f) in p.fields_mut() {
        if n == field {
            f[i] = v;
            return;
        }
    }
    unreachable!("unknown field {field}");
}

/// Compare analytic gradients against central differences at a random
/// subset of parameter coordinates. Exposed separately so a deliberately
/// corrupted gradient can be shown to fail.
pub fn compare_against_fd(
    loss_fn: &dyn Fn(&NetParams) -> Result<f64>,
    params: &NetParams,
    analytic: &NetParams,
    coords: &[(&'static str, usize)],
) -> Result<GradReport> {
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &(field, i) in coords {
        let base = get_param(params, field, i);
        let mut p_hi = params.clone();
        set_param(&mut p_hi, field, i, base + FD_STEP);
        let mut p_lo = params.clone();
        set_param(&mut p_lo, field, i, base - FD_STEP);
        let fd = (loss_fn(&p_hi)? - loss_fn(&p_lo)?) / (2.0 * FD_STEP);
        let ga = get_param(analytic, field, i);
        let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
            worst = Some((field.to_string(), i));
        }
    }
    Ok(GradReport {
        loss_kind: LossKind::Huber, // caller overwrites
        checked: coords.len(),
        max_rel_err: max_rel,
        worst_param: worst,
    })
}

/// Draw `count` random parameter coordinates (at least 50 recommended)
/// across the eligible fields.
pub fn sample_coords(
    p: &NetParams,
    include_index: bool,
    count: usize,
    seed: u64,
) -> Vec<(&'static str, usize)> {
    let fields = indexable_fields(p, include_index);
    let total: usize = fields.iter().map(|(_, l)| l).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<usize> = (0..total).collect();
    flat.shuffle(&mut rng);
    flat.truncate(count.min(total));
    flat.sort_unstable();
    let mut coords = Vec::with_capacity(flat.len());
    for idx in flat {
        let mut off = idx;
        for &(name, len) in &fields {
            if off < len {
                coords.push((name, off));
                break;
            }
            off -= len;
        }
    }
    let _ = rng.gen::<u64>();
    coords
}

/// Verify both analytic gradient paths on one sample. The Huber path
/// checks every trainable field; the sum-rate path checks main-network
/// fields only (index parameters are constants there by contract).
pub fn grad_check(
    params: &NetParams,
    sample: &ChannelSample,
    target: &[f64],
    kind: LossKind,
    count: usize,
    seed: u64,
) -> Result<GradReport> {
    debug_assert!(sample.is_normalized());
    let input = pack_gram(&weighted_gram(sample))?;
    let d: &[usize] = &sample.d;
    let mut report = match kind {
        LossKind::Huber => {
            let loss_fn = |p: &NetParams| -> Result<f64> {
                let (outs, _) = forward_batch(p, std::slice::from_ref(&input), &[d], true, false);
                Ok(huber_loss(&outs[0], target, HUBER_DELTA).0)
            };
            let (outs, cache) =
                forward_batch(params, std::slice::from_ref(&input), &[d], true, false);
            let (_, g_out) = huber_loss(&outs[0], target, HUBER_DELTA);
            let analytic = backward_batch(params, &cache, &[g_out], true);
            let coords = sample_coords(params, true, count, seed);
            compare_against_fd(&loss_fn, params, &analytic, &coords)?
        }
        LossKind::Unsupervised => {
            let loss_fn = |p: &NetParams| -> Result<f64> {
                Ok(unsupervised_loss(p, sample)?.0)
            };
            let (_, analytic) = unsupervised_loss(params, sample)?;
            let coords = sample_coords(params, false, count, seed);
            compare_against_fd(&loss_fn, params, &analytic, &coords)?
        }
    };
    report.loss_kind = kind;
    Ok(report)
}
