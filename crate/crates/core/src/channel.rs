//! Channel and problem-instance generation.
//!
//! Per-user channels are i.i.d. circular complex Gaussian with a
//! distance-dependent pathloss variance, stacked vertically into one
//! KN_R x N_T matrix. Every instance also carries user priorities, stream
//! counts, the common noise power, and the transmit power budget, plus
//! the normalization that folds noise and budget into the channel so
//! solvers and the network always see a unit-power, unit-noise problem.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gram, CMat};

const DATASET_MAGIC: &[u8; 8] = b"BFLAB001";

/// Scenario parameters for instance generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub n_tx: usize,
    pub n_users: usize,
    pub n_rx: usize,
    pub snr_db: f64,
    pub p_max: f64,
    pub dist_min_km: f64,
    pub dist_max_km: f64,
    pub seed: u64,
}

impl ChannelConfig {
    /// The three standard test cases (N_R = 2 throughout).
    pub fn case(case: u32, seed: u64) -> ChannelConfig {
        let (n_tx, n_users) = match case {
            1 => (8, 2),
            2 => (8, 4),
            3 => (32, 12),
            other => panic!("unknown case {other}, expected 1, 2 or 3"),
        };
        ChannelConfig {
            n_tx,
            n_users,
            n_rx: 2,
            snr_db: 20.0,
            p_max: 1.0,
            dist_min_km: 0.1,
            dist_max_km: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx < self.n_users * self.n_rx {
            return Err(Error::ShapeMismatch(format!(
                "n_tx = {} < n_users * n_rx = {}",
                self.n_tx,
                self.n_users * self.n_rx
            )));
        }
        if self.dist_min_km <= 0.0 {
            return Err(Error::NonPositiveDistance(self.dist_min_km));
        }
        if self.dist_min_km > self.dist_max_km {
            return Err(Error::ShapeMismatch(format!(
                "dist_min_km {} > dist_max_km {}",
                self.dist_min_km, self.dist_max_km
            )));
        }
        Ok(())
    }
}

/// One problem instance. `h` stacks the per-user N_R x N_T channels
/// vertically; `d` holds physical stream counts in {1, 2}.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub h: CMat,
    pub alpha: Vec<f64>,
    pub d: Vec<usize>,
    pub sigma2: f64,
    pub p_max: f64,
}

impl ChannelSample {
    pub fn n_users(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_rx(&self) -> usize {
        self.h.rows() / self.n_users()
    }

    pub fn n_tx(&self) -> usize {
        self.h.cols()
    }

    /// Rows of `h` belonging to user k.
    pub fn user_channel(&self, k: usize) -> CMat {
        let nr = self.n_rx();
        self.h.row_block(k * nr, (k + 1) * nr)
    }

    pub fn is_normalized(&self) -> bool {
        self.sigma2 == 1.0 && self.p_max == 1.0
    }
}

/// Pathloss in dB at distance `omega_km` kilometers.
pub fn pathloss_db(omega_km: f64) -> Result<f64> {
    if omega_km <= 0.0 {
        return Err(Error::NonPositiveDistance(omega_km));
    }
    Ok(128.1 + 37.6 * omega_km.log10())
}

/// Common noise power from the stacked channel and the target SNR:
/// 10 raised to the per-user average of log10(|H_k|_F^2 / N_R), times
/// 10^(-SNR/10).
pub fn noise_power(h: &CMat, n_rx: usize, snr_db: f64) -> Result<f64> {
    assert!(n_rx > 0 && h.rows() % n_rx == 0, "rows must split into users");
    let k = h.rows() / n_rx;
    let mut log_sum = 0.0;
    for u in 0..k {
        let hk = h.row_block(u * n_rx, (u + 1) * n_rx);
        let mean_sq = hk.frob_norm_sq() / n_rx as f64;
        if mean_sq == 0.0 {
            return Err(Error::ZeroChannel(u));
        }
        log_sum += mean_sq.log10();
    }
    Ok(10f64.powf(log_sum / k as f64) * 10f64.powf(-snr_db / 10.0))
}

/// K random priorities, uniform then rescaled so they sum to K exactly.
pub fn sample_weights(k: usize, seed: u64) -> Vec<f64> {
    assert!(k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..k)
        .map(|_| loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        })
        .collect();
    let sum: f64 = w.iter().sum();
    let scale = k as f64 / sum;
    for v in &mut w {
        *v *= scale;
    }
    w
}

/// K stream counts, each 1 or 2 with probability 1/2.
pub fn sample_streams(k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| if rng.gen::<bool>() { 2 } else { 1 }).collect()
}

/// Draw one instance. Fully determined by (cfg, seed).
pub fn sample_channel(cfg: &ChannelConfig, seed: u64) -> ChannelSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.n_users;
    let (nr, nt) = (cfg.n_rx, cfg.n_tx);
    let mut h = CMat::zeros(k * nr, nt);
    for u in 0..k {
        let omega = rng.gen_range(cfg.dist_min_km..=cfg.dist_max_km);
        let gain = 10f64.powf(-pathloss_db(omega).expect("positive distance") / 10.0);
        // i.i.d. CN(0, gain): each real component has variance gain/2
        let comp_std = (gain / 2.0).sqrt();
        for i in 0..nr {
            for j in 0..nt {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                h[(u * nr + i, j)] = Complex64::new(re * comp_std, im * comp_std);
            }
        }
    }
    let sigma2 = noise_power(&h, nr, cfg.snr_db).expect("nonzero channel");
    let alpha = sample_weights(k, rng.gen());
    let d = sample_streams(k, rng.gen());
    ChannelSample {
        h,
        alpha,
        d,
        sigma2,
        p_max: cfg.p_max,
    }
}

/// Fold noise power and power budget into the channel: H_k scaled by
/// sqrt(p_max / sigma2), then sigma2 = p_max = 1. Idempotent.
pub fn normalize_sample(s: &ChannelSample) -> ChannelSample {
    assert!(s.sigma2 > 0.0 && s.p_max > 0.0);
    let scale = (s.p_max / s.sigma2).sqrt();
    ChannelSample {
        h: s.h.scale(scale),
        alpha: s.alpha.clone(),
        d: s.d.clone(),
        sigma2: 1.0,
        p_max: 1.0,
    }
}

/// Gram matrix of the priority-scaled stack: rows of user k multiplied by
/// sqrt(alpha_k) before forming H H^H. This is the sole channel-plus-
/// priority information the network sees.
pub fn weighted_gram(s: &ChannelSample) -> CMat {
    let nr = s.n_rx();
    let mut scaled = s.h.clone();
    for (k, &a) in s.alpha.iter().enumerate() {
        let root = a.sqrt();
        for i in k * nr..(k + 1) * nr {
            for j in 0..scaled.cols() {
                scaled[(i, j)] *= root;
            }
        }
    }
    gram(&scaled)
}

/// A set of instances plus optional packed solver labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: ChannelConfig,
    pub samples: Vec<ChannelSample>,
    pub labels: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    config: ChannelConfig,
    count: usize,
    has_labels: bool,
    label_len: usize,
}

impl Dataset {
    /// Generate `count` samples; sample i uses seed `config.seed + i` so
    /// generation can fan out across workers deterministically.
    pub fn generate(config: ChannelConfig, count: usize) -> Result<Dataset> {
        config.validate()?;
        let samples: Vec<ChannelSample> = (0..count)
            .into_par_iter()
            .map(|i| sample_channel(&config, config.seed.wrapping_add(i as u64)))
            .collect();
        Ok(Dataset {
            config,
            samples,
            labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let label_len = self
            .labels
            .as_ref()
            .and_then(|l| l.first())
            .map_or(0, Vec::len);
        let header = DatasetHeader {
            config: self.config.clone(),
            count: self.samples.len(),
            has_labels: self.labels.is_some(),
            label_len,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (i, s) in self.samples.iter().enumerate() {
            for z in s.h.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
            for &a in &s.alpha {
                w.write_all(&a.to_le_bytes())?;
            }
            for &d in &s.d {
                w.write_all(&[d as u8])?;
            }
            w.write_all(&s.sigma2.to_le_bytes())?;
            w.write_all(&s.p_max.to_le_bytes())?;
            if let Some(labels) = &self.labels {
                for &v in &labels[i] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::BadFormat(format!(
                "bad dataset magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut len_buf = [0u8; 4];
        r.read_exact(&mut len_buf)?;
        let json_len = u32::from_le_bytes(len_buf) as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let header: DatasetHeader = serde_json::from_slice(&json)?;
        let k = header.config.n_users;
        let rows = k * header.config.n_rx;
        let cols = header.config.n_tx;

        let read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };

        let mut samples = Vec::with_capacity(header.count);
        let mut labels = header.has_labels.then(|| Vec::with_capacity(header.count));
        for _ in 0..header.count {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(Complex64::new(re, im));
            }
            let mut alpha = Vec::with_capacity(k);
            for _ in 0..k {
                alpha.push(read_f64(&mut r)?);
            }
            let mut d = vec![0u8; k];
            r.read_exact(&mut d)?;
            let sigma2 = read_f64(&mut r)?;
            let p_max = read_f64(&mut r)?;
            samples.push(ChannelSample {
                h: CMat::new(rows, cols, data),
                alpha,
                d: d.into_iter().map(usize::from).collect(),
                sigma2,
                p_max,
            });
            if let Some(labels) = &mut labels {
                let mut lab = Vec::with_capacity(header.label_len);
                for _ in 0..header.label_len {
                    lab.push(read_f64(&mut r)?);
                }
                labels.push(lab);
            }
        }
        Ok(Dataset {
            config: header.config,
            samples,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case1(seed: u64) -> ChannelConfig {
        ChannelConfig::case(1, seed)
    }

    #[test]
    fn pathloss_reference_points() {
        assert!((pathloss_db(0.1).unwrap() - 90.5).abs() < 1e-12);
        assert!((pathloss_db(1.0).unwrap() - 128.1).abs() < 1e-12);
        assert!((pathloss_db(0.2).unwrap() - 101.8187).abs() < 1e-3);
        assert!(matches!(
            pathloss_db(0.0),
            Err(Error::NonPositiveDistance(_))
        ));
    }

    #[test]
    fn sample_dimensions_match_case1() {
        let s = sample_channel(&case1(7), 7);
        assert_eq!(s.h.rows(), 4);
        assert_eq!(s.h.cols(), 8);
        assert_eq!(s.alpha.len(), 2);
        assert_eq!(s.d.len(), 2);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = case1(11);
        let a = sample_channel(&cfg, 42);
        let b = sample_channel(&cfg, 42);
        assert_eq!(a, b);
        let c = sample_channel(&cfg, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn per_entry_variance_tracks_pathloss() {
        // pin omega = 0.1 by collapsing the distance range
        let cfg = ChannelConfig {
            dist_max_km: 0.1,
            ..case1(0)
        };
        let expected = 10f64.powf(-9.05);
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for i in 0..1250 {
            let s = sample_channel(&cfg, i);
            sum_sq += s.h.frob_norm_sq();
            n += s.h.rows() * s.h.cols();
        }
        let var = sum_sq / n as f64; // 40k entries total
        assert!(
            (var - expected).abs() / expected < 0.05,
            "empirical {var:e} vs {expected:e}"
        );
    }

    #[test]
    fn noise_power_at_20db() {
        // K=1, |H|_F^2 / N_R = 1
        let h = CMat::eye(2);
        let s2 = noise_power(&h, 2, 20.0).unwrap();
        assert!((s2 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn noise_power_at_0db_is_geometric_mean() {
        let s = sample_channel(&case1(3), 3);
        let s2 = noise_power(&s.h, 2, 0.0).unwrap();
        let mut prod = 1.0;
        for k in 0..2 {
            prod *= s.user_channel(k).frob_norm_sq() / 2.0;
        }
        assert!((s2 - prod.sqrt()).abs() / s2 < 1e-12);
    }

    #[test]
    fn noise_power_scales_quadratically() {
        let s = sample_channel(&case1(5), 5);
        let base = noise_power(&s.h, 2, 20.0).unwrap();
        let scaled = noise_power(&s.h.scale(3.0), 2, 20.0).unwrap();
        assert!((scaled - 9.0 * base).abs() / base < 1e-12);
    }

    #[test]
    fn noise_power_rejects_zero_channel() {
        let h = CMat::zeros(2, 4);
        assert!(matches!(noise_power(&h, 2, 20.0), Err(Error::ZeroChannel(0))));
    }

    #[test]
    fn weights_sum_to_k() {
        assert!((sample_weights(1, 9)[0] - 1.0).abs() < 1e-12);
        let w = sample_weights(4, 10);
        assert!((w.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn weights_are_symmetric_on_average() {
        let mut means = [0.0; 4];
        let n = 10_000;
        for s in 0..n {
            for (m, w) in means.iter_mut().zip(sample_weights(4, s)) {
                *m += w;
            }
        }
        for m in means {
            let mean = m / n as f64;
            assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        }
    }

    #[test]
    fn streams_are_one_or_two_and_balanced() {
        let d = sample_streams(2, 77);
        assert_eq!(d, sample_streams(2, 77));
        let mut twos = 0usize;
        let mut total = 0usize;
        for s in 0..5000 {
            for v in sample_streams(2, s) {
                assert!(v == 1 || v == 2);
                twos += usize::from(v == 2);
                total += 1;
            }
        }
        let frac = twos as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "fraction of 2s {frac}");
    }

    #[test]
    fn normalize_identity_and_scaling() {
        let mut s = sample_channel(&case1(21), 21);
        s.sigma2 = 1.0;
        s.p_max = 1.0;
        assert_eq!(normalize_sample(&s), s);

        s.sigma2 = 0.01;
        let n = normalize_sample(&s);
        assert!(n.h.approx_eq(&s.h.scale(10.0), 1e-12));
        assert_eq!(n.sigma2, 1.0);
        assert_eq!(n.p_max, 1.0);
    }

    #[test]
    fn normalize_is_idempotent() {
        let s = sample_channel(&case1(22), 22);
        let once = normalize_sample(&s);
        assert_eq!(normalize_sample(&once), once);
    }

    #[test]
    fn weighted_gram_trivial_cases() {
        let mut s = normalize_sample(&sample_channel(&case1(30), 30));
        s.alpha = vec![1.0, 1.0];
        assert!(weighted_gram(&s).approx_eq(&gram(&s.h), 1e-12));

        s.alpha = vec![2.0, 0.0];
        let g = weighted_gram(&s);
        for i in 2..4 {
            for j in 0..4 {
                assert_eq!(g[(i, j)], Complex64::new(0.0, 0.0));
                assert_eq!(g[(j, i)], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn weighted_gram_blockwise_definition() {
        let s = normalize_sample(&sample_channel(&case1(31), 31));
        let g = weighted_gram(&s);
        assert!(g.is_hermitian(1e-12));
        assert_eq!(g.rows(), 4);
        for k in 0..2 {
            for j in 0..2 {
                let expect = s
                    .user_channel(k)
                    .mul_adjoint(&s.user_channel(j))
                    .scale((s.alpha[k] * s.alpha[j]).sqrt());
                for a in 0..2 {
                    for b in 0..2 {
                        let got = g[(2 * k + a, 2 * j + b)];
                        assert!((got - expect[(a, b)]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let cfg = case1(50);
        let mut ds = Dataset::generate(cfg, 5).unwrap();
        ds.labels = Some((0..5).map(|i| vec![i as f64 * 0.25, -1.5, 3.75]).collect());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back.config, ds.config);
        assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a, b);
        }
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn config_validation() {
        let mut cfg = case1(0);
        cfg.n_tx = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = case1(0);
        cfg.dist_min_km = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = case1(0);
        cfg.dist_min_km = 0.4;
        assert!(cfg.validate().is_err());
        assert!(case1(0).validate().is_ok());
    }
}
