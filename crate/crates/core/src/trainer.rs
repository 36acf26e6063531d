//! Label generation and the two-phase training scheme: supervised
//! pre-training on packed solver state under the Huber loss, then a short
//! sum-rate refinement pass with the index network frozen.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{normalize_sample, weighted_gram, ChannelSample, Dataset};
use crate::codec::{pack_gram, pack_uw, unpack_uw, PackedInput};
use crate::error::Result;
use crate::nn::model_io::save_model;
use crate::nn::{
    adam_step, backward_batch, forward_batch, huber_loss, unsup, AdamState, NetArch, NetParams,
    HUBER_DELTA,
};
use crate::solvers::{reconstruct_v, rwmmse_solve, weighted_sum_rate, SolveOptions};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub supervised_epochs: usize,
    pub unsupervised_epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Forces single-threaded evaluation paths. Results are identical
    /// either way (all reductions are order-fixed); this only pins the
    /// execution schedule.
    pub determinism: bool,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            supervised_epochs: 50,
            unsupervised_epochs: 1,
            lr: 1e-3,
            seed: 0,
            early_stop_patience: 5,
            determinism: false,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    /// Mean training Huber loss per supervised epoch.
    pub train_loss: Vec<f64>,
    /// Validation Huber loss per supervised epoch (inference mode).
    pub val_huber: Vec<f64>,
    /// Mean validation performance ratio per epoch (supervised phase) or
    /// before/after pair (refinement phase).
    pub val_ratio: Vec<f64>,
    pub epochs_run: usize,
    pub wall_time: f64,
    pub checkpoints: Vec<PathBuf>,
    /// [start, end) sample indices held out for validation.
    pub val_range: (usize, usize),
    /// Samples skipped because a solve inside the loss failed.
    pub skipped_samples: usize,
}

/// Label every sample with the packed converged receiver state of the
/// reduced WMMSE solver. Failed solves drop the sample; the count comes
/// back alongside the labeled dataset.
pub fn generate_labels(ds: &Dataset, opts: &SolveOptions) -> (Dataset, usize) {
    let solve_one = |s: &ChannelSample| -> Option<(ChannelSample, Vec<f64>)> {
        let n = normalize_sample(s);
        let (state, _, _) = rwmmse_solve(&n, opts).ok()?;
        let label = pack_uw(&state.u, &state.w, &n.d).ok()?;
        Some((s.clone(), label))
    };
    let results: Vec<Option<(ChannelSample, Vec<f64>)>> =
        ds.samples.par_iter().map(solve_one).collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    let (samples, labels) = results.into_iter().flatten().unzip();
    (
        Dataset {
            config: ds.config.clone(),
            samples,
            labels: Some(labels),
        },
        dropped,
    )
}

/// Everything derived from the dataset that training touches repeatedly.
struct Prepared {
    normalized: Vec<ChannelSample>,
    inputs: Vec<PackedInput>,
    arch: NetArch,
}

fn prepare(ds: &Dataset) -> Result<Prepared> {
    let normalized: Vec<ChannelSample> = ds.samples.iter().map(normalize_sample).collect();
    let inputs = normalized
        .iter()
        .map(|s| pack_gram(&weighted_gram(s)))
        .collect::<Result<Vec<_>>>()?;
    let arch = NetArch {
        n_users: ds.config.n_users,
        n_rx: ds.config.n_rx,
    };
    Ok(Prepared {
        normalized,
        inputs,
        arch,
    })
}

fn val_split(n: usize) -> (usize, usize) {
    let val_len = (n / 10).max(usize::from(n >= 2));
    (n - val_len, n)
}

/// Reference weighted sum-rates for the validation slice.
fn reference_rates(prep: &Prepared, range: (usize, usize), sequential: bool) -> Vec<f64> {
    let opts = SolveOptions {
        trace: false,
        ..SolveOptions::default()
    };
    let solve = |s: &ChannelSample| {
        rwmmse_solve(s, &opts)
            .and_then(|(_, v, _)| weighted_sum_rate(s, &v))
            .unwrap_or(0.0)
    };
    let slice = &prep.normalized[range.0..range.1];
    if sequential {
        slice.iter().map(solve).collect()
    } else {
        slice.par_iter().map(solve).collect()
    }
}

/// Mean performance ratio of the current model on the validation slice
/// (inference mode, hard mask, full reconstruction).
fn validation_ratio(
    p: &NetParams,
    prep: &Prepared,
    range: (usize, usize),
    refs: &[f64],
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut failures = 0usize;
    let count = range.1 - range.0;
    if count == 0 {
        return (0.0, 0);
    }
    for (offset, idx) in (range.0..range.1).enumerate() {
        let s = &prep.normalized[idx];
        let d: &[usize] = &s.d;
        let (outs, _) = forward_batch(p, std::slice::from_ref(&prep.inputs[idx]), &[d], false, true);
        let (u, w) = unpack_uw(&outs[0], &s.d, s.n_rx());
        let ratio = match reconstruct_v(s, &u, &w) {
            Ok(v) => match weighted_sum_rate(s, &v) {
                Ok(wsr) if refs[offset] > 1e-12 => wsr / refs[offset],
                _ => 0.0,
            },
            Err(_) => {
                failures += 1;
                0.0
            }
        };
        sum += ratio;
    }
    (sum / count as f64, failures)
}

fn validation_huber(p: &NetParams, prep: &Prepared, range: (usize, usize), labels: &[Vec<f64>]) -> f64 {
    let count = range.1 - range.0;
    if count == 0 {
        return 0.0;
    }
    let inputs = &prep.inputs[range.0..range.1];
    let d: Vec<&[usize]> = prep.normalized[range.0..range.1]
        .iter()
        .map(|s| s.d.as_slice())
        .collect();
    let (outs, _) = forward_batch(p, inputs, &d, false, false);
    let mut total = 0.0;
    for (bi, out) in outs.iter().enumerate() {
        total += huber_loss(out, &labels[range.0 + bi], HUBER_DELTA).0;
    }
    total / count as f64
}

fn checkpoint(p: &NetParams, cfg: &TrainConfig, name: &str, report: &mut TrainReport) {
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join(format!("{name}.bfnn"));
        if save_model(p, &path).is_ok() {
            report.checkpoints.push(path);
        }
    }
}

/// Supervised pre-training: Adam on the mean Huber loss between the
/// soft-masked forward pass and the packed solver labels. The index
/// network trains here. Early-stops on validation Huber loss and returns
/// the best-validation parameters.
pub fn train_supervised(ds: &Dataset, cfg: &TrainConfig) -> Result<(NetParams, TrainReport)> {
    assert!(cfg.batch_size >= 2, "batch normalization needs batch_size >= 2");
    let labels = ds.labels.as_ref().expect("supervised training needs labels");
    let start = Instant::now();
    let prep = prepare(ds)?;
    let n = ds.len();
    let (val_start, val_end) = val_split(n);
    let mut report = TrainReport {
        val_range: (val_start, val_end),
        ..TrainReport::default()
    };

    let mut params = NetParams::init(prep.arch, cfg.seed);
    if cfg.supervised_epochs == 0 {
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok((params, report));
    }
    let refs = reference_rates(&prep, (val_start, val_end), cfg.determinism);
    let mut opt = AdamState::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, NetParams)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.supervised_epochs {
        let mut order: Vec<usize> = (0..val_start).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // batch statistics need at least two samples
            }
            let inputs: Vec<PackedInput> =
                chunk.iter().map(|&i| prep.inputs[i].clone()).collect();
            let d: Vec<&[usize]> = chunk
                .iter()
                .map(|&i| prep.normalized[i].d.as_slice())
                .collect();
            let (outs, cache) = forward_batch(&params, &inputs, &d, true, false);
            let mut g_out = Vec::with_capacity(chunk.len());
            let mut batch_loss = 0.0;
            let scale = 1.0 / chunk.len() as f64;
            for (bi, &i) in chunk.iter().enumerate() {
                let (loss, mut g) = huber_loss(&outs[bi], &labels[i], HUBER_DELTA);
                batch_loss += loss * scale;
                g.iter_mut().for_each(|v| *v *= scale);
                g_out.push(g);
            }
            let grads = backward_batch(&params, &cache, &g_out, true);
            adam_step(&mut params, &grads, &mut opt);
            params.update_running_stats(&cache);
            epoch_loss += batch_loss;
            batches += 1;
        }
        report.train_loss.push(epoch_loss / batches.max(1) as f64);
        let vh = validation_huber(&params, &prep, (val_start, val_end), labels);
        let (vr, _) = validation_ratio(&params, &prep, (val_start, val_end), &refs);
        report.val_huber.push(vh);
        report.val_ratio.push(vr);
        report.epochs_run = epoch + 1;
        checkpoint(&params, cfg, &format!("epoch_{:03}", epoch + 1), &mut report);

        match &best {
            Some((best_vh, _)) if vh >= *best_vh => {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    break;
                }
            }
            _ => {
                best = Some((vh, params.clone()));
                since_best = 0;
            }
        }
    }
    if let Some((_, best_params)) = best {
        params = best_params;
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Sum-rate refinement: a few Adam epochs on the mean negative weighted
/// sum-rate with the index network frozen and hard stream masks applied.
/// Samples whose reconstruction degenerates are skipped and counted.
pub fn finetune_unsupervised(
    params: &NetParams,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(NetParams, TrainReport)> {
    assert!(cfg.batch_size >= 2);
    let start = Instant::now();
    let prep = prepare(ds)?;
    let n = ds.len();
    let (val_start, val_end) = val_split(n);
    let mut report = TrainReport {
        val_range: (val_start, val_end),
        ..TrainReport::default()
    };
    let mut params = params.clone();
    if cfg.unsupervised_epochs == 0 {
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok((params, report));
    }
    let refs = reference_rates(&prep, (val_start, val_end), cfg.determinism);
    let (before, _) = validation_ratio(&params, &prep, (val_start, val_end), &refs);
    report.val_ratio.push(before);

    let mut opt = AdamState::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x756e_7375_7065_7276);
    for epoch in 0..cfg.unsupervised_epochs {
        let mut order: Vec<usize> = (0..val_start).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let inputs: Vec<PackedInput> =
                chunk.iter().map(|&i| prep.inputs[i].clone()).collect();
            let d: Vec<&[usize]> = chunk
                .iter()
                .map(|&i| prep.normalized[i].d.as_slice())
                .collect();
            let (outs, cache) = forward_batch(&params, &inputs, &d, true, true);
            let mut g_out = vec![vec![0.0; params.arch.out_dim()]; chunk.len()];
            let mut ok = 0usize;
            for (bi, &i) in chunk.iter().enumerate() {
                match unsup::rate_loss_and_slot_grad(&prep.normalized[i], &outs[bi]) {
                    Ok((_, g)) => {
                        g_out[bi] = g;
                        ok += 1;
                    }
                    Err(_) => report.skipped_samples += 1,
                }
            }
            if ok == 0 {
                continue;
            }
            let scale = 1.0 / ok as f64;
            for g in &mut g_out {
                g.iter_mut().for_each(|v| *v *= scale);
            }
            let grads = backward_batch(&params, &cache, &g_out, false);
            adam_step(&mut params, &grads, &mut opt);
            params.update_running_stats(&cache);
        }
        report.epochs_run = epoch + 1;
        checkpoint(&params, cfg, &format!("finetune_{:03}", epoch + 1), &mut report);
    }
    let (after, _) = validation_ratio(&params, &prep, (val_start, val_end), &refs);
    report.val_ratio.push(after);
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((params, report))
}
