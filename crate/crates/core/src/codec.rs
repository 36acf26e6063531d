//! Packing between complex solver objects and the real-valued,
//! fixed-dimension network input/output.
//!
//! A Hermitian Gram matrix folds into one real KN_R x KN_R channel:
//! diagonal and real parts of the upper triangle in place, imaginary
//! parts of the strict lower triangle in place. Per-user receiver state
//! {U_k, W_k} folds into a fixed 12-real slot (N_R = 2, d_max = 2); for
//! single-stream users only 5 of those positions are valid and the rest
//! stay zero. The exact layout is part of the dataset/model file contract
//! and is documented in docs/FORMATS.md.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::CMat;

/// Streams per user never exceed 2 in this lab (N_R = 2 throughout).
pub const D_MAX: usize = 2;

/// Reals per user slot: 2 * N_R * D_MAX for U plus D_MAX^2 for W.
pub fn slot_len(n_rx: usize) -> usize {
    2 * n_rx * D_MAX + D_MAX * D_MAX
}

/// Total packed output length for K users.
pub fn packed_output_len(n_users: usize, n_rx: usize) -> usize {
    n_users * slot_len(n_rx)
}

/// Real single-channel image holding a folded Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedInput {
    pub n: usize,
    pub m: Vec<f64>, // row-major n x n
}

/// Fold a Hermitian matrix: m[i][j] = Re g[i][j] for i <= j,
/// m[i][j] = Im g[i][j] for i > j.
pub fn pack_gram(g: &CMat) -> Result<PackedInput> {
    if !g.is_square() {
        return Err(Error::NotSquare {
            rows: g.rows(),
            cols: g.cols(),
        });
    }
    let dev = g.hermitian_deviation();
    if dev > 1e-9 * (1.0 + g.max_abs()) {
        return Err(Error::NotHermitian { max_dev: dev });
    }
    let n = g.rows();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if i <= j { g[(i, j)].re } else { g[(i, j)].im };
        }
    }
    Ok(PackedInput { n, m })
}

/// Inverse of [`pack_gram`].
pub fn unpack_gram(p: &PackedInput) -> CMat {
    let n = p.n;
    CMat::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(p.m[i * n + i], 0.0)
        } else if i < j {
            Complex64::new(p.m[i * n + j], -p.m[j * n + i])
        } else {
            Complex64::new(p.m[j * n + i], p.m[i * n + j])
        }
    })
}

/// Pack per-user receiver state into one flat real vector.
///
/// Per-user slot, N_R = 2: positions 0-7 hold Re/Im of U's entries in
/// column-major order (first column first), positions 8-11 hold
/// [W00, Re W01, Im W01, W11]. Single-stream users write only positions
/// {0,1,2,3,8}; everything else stays zero.
pub fn pack_uw(u: &[CMat], w: &[CMat], d: &[usize]) -> Result<Vec<f64>> {
    let k = d.len();
    if u.len() != k || w.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "pack_uw: {} users but {} U and {} W",
            k,
            u.len(),
            w.len()
        )));
    }
    let n_rx = u.first().map_or(0, CMat::rows);
    let slot = slot_len(n_rx);
    let mut out = vec![0.0; k * slot];
    for kk in 0..k {
        let dk = d[kk];
        if dk == 0 || dk > D_MAX {
            return Err(Error::ShapeMismatch(format!("d[{kk}] = {dk}")));
        }
        if u[kk].rows() != n_rx || u[kk].cols() != dk {
            return Err(Error::ShapeMismatch(format!(
                "U[{kk}] is {}x{}, want {}x{}",
                u[kk].rows(),
                u[kk].cols(),
                n_rx,
                dk
            )));
        }
        if w[kk].rows() != dk || w[kk].cols() != dk {
            return Err(Error::ShapeMismatch(format!(
                "W[{kk}] is {}x{}, want {}x{}",
                w[kk].rows(),
                w[kk].cols(),
                dk,
                dk
            )));
        }
        let base = kk * slot;
        for c in 0..dk {
            for r in 0..n_rx {
                let z = u[kk][(r, c)];
                out[base + 2 * (c * n_rx + r)] = z.re;
                out[base + 2 * (c * n_rx + r) + 1] = z.im;
            }
        }
        let wbase = base + 2 * n_rx * D_MAX;
        out[wbase] = w[kk][(0, 0)].re;
        if dk == 2 {
            out[wbase + 1] = w[kk][(0, 1)].re;
            out[wbase + 2] = w[kk][(0, 1)].im;
            out[wbase + 3] = w[kk][(1, 1)].re;
        }
    }
    Ok(out)
}

/// Inverse of [`pack_uw`]; W comes back Hermitian by construction and
/// masked positions are ignored regardless of their values.
pub fn unpack_uw(p: &[f64], d: &[usize], n_rx: usize) -> (Vec<CMat>, Vec<CMat>) {
    let slot = slot_len(n_rx);
    assert_eq!(p.len(), d.len() * slot, "unpack_uw: packed length");
    let mut us = Vec::with_capacity(d.len());
    let mut ws = Vec::with_capacity(d.len());
    for (kk, &dk) in d.iter().enumerate() {
        assert!(dk >= 1 && dk <= D_MAX);
        let base = kk * slot;
        let u = CMat::from_fn(n_rx, dk, |r, c| {
            Complex64::new(
                p[base + 2 * (c * n_rx + r)],
                p[base + 2 * (c * n_rx + r) + 1],
            )
        });
        let wbase = base + 2 * n_rx * D_MAX;
        let w = if dk == 1 {
            CMat::new(1, 1, vec![Complex64::new(p[wbase], 0.0)])
        } else {
            let off = Complex64::new(p[wbase + 1], p[wbase + 2]);
            CMat::new(
                2,
                2,
                vec![
                    Complex64::new(p[wbase], 0.0),
                    off,
                    off.conj(),
                    Complex64::new(p[wbase + 3], 0.0),
                ],
            )
        };
        us.push(u);
        ws.push(w);
    }
    (us, ws)
}

/// 1.0 at valid positions for the given stream counts, 0.0 elsewhere.
pub fn stream_mask(d: &[usize], n_rx: usize) -> Vec<f64> {
    let slot = slot_len(n_rx);
    let mut mask = vec![0.0; d.len() * slot];
    for (kk, &dk) in d.iter().enumerate() {
        assert!(dk >= 1 && dk <= D_MAX);
        let base = kk * slot;
        for c in 0..dk {
            for r in 0..n_rx {
                mask[base + 2 * (c * n_rx + r)] = 1.0;
                mask[base + 2 * (c * n_rx + r) + 1] = 1.0;
            }
        }
        let wbase = base + 2 * n_rx * D_MAX;
        mask[wbase] = 1.0;
        if dk == 2 {
            mask[wbase + 1] = 1.0;
            mask[wbase + 2] = 1.0;
            mask[wbase + 3] = 1.0;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gram;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMat {
        let g = CMat::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
        });
        g.add(&g.adjoint()).scale(0.5)
    }

    #[test]
    fn pack_gram_real_symmetric() {
        let g = CMat::new(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(3.0, 0.0),
            ],
        );
        let p = pack_gram(&g).unwrap();
        assert_eq!(p.m, vec![1.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn pack_gram_reference_placement() {
        // g = [[1, i], [-i, 1]] -> m = [[1, 0], [-1, 1]]
        let g = CMat::new(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        let p = pack_gram(&g).unwrap();
        assert_eq!(p.m, vec![1.0, 0.0, -1.0, 1.0]);
        assert!(unpack_gram(&p).approx_eq(&g, 0.0));
    }

    #[test]
    fn pack_gram_rejects_non_hermitian() {
        let g = CMat::new(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        assert!(matches!(pack_gram(&g), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn gram_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_hermitian(&mut rng, 4);
            let back = unpack_gram(&pack_gram(&g).unwrap());
            assert!(back.approx_eq(&g, 1e-15));
        }
    }

    fn random_uw(rng: &mut impl Rng, d: &[usize]) -> (Vec<CMat>, Vec<CMat>) {
        let us = d
            .iter()
            .map(|&dk| {
                CMat::from_fn(2, dk, |_, _| {
                    Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                })
            })
            .collect();
        let ws = d.iter().map(|&dk| random_hermitian(rng, dk)).collect();
        (us, ws)
    }

    #[test]
    fn uw_slot_accounting() {
        assert_eq!(slot_len(2), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (us, ws) = random_uw(&mut rng, &[2]);
        let packed = pack_uw(&us, &ws, &[2]).unwrap();
        assert_eq!(packed.iter().filter(|v| **v != 0.0).count(), 12);

        let (us, ws) = random_uw(&mut rng, &[1]);
        let packed = pack_uw(&us, &ws, &[1]).unwrap();
        assert_eq!(packed.len(), 12);
        let nonzero: Vec<usize> = (0..12).filter(|&i| packed[i] != 0.0).collect();
        assert_eq!(nonzero, vec![0, 1, 2, 3, 8]);
    }

    #[test]
    fn uw_zero_u_identity_w() {
        let us = vec![CMat::zeros(2, 2)];
        let ws = vec![CMat::eye(2)];
        let packed = pack_uw(&us, &ws, &[2]).unwrap();
        let mut expect = vec![0.0; 12];
        expect[8] = 1.0;
        expect[11] = 1.0;
        assert_eq!(packed, expect);
    }

    #[test]
    fn uw_roundtrip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [vec![1, 2], vec![2, 2], vec![1, 1], vec![2, 1, 1, 2]] {
            let (us, ws) = random_uw(&mut rng, &d);
            let packed = pack_uw(&us, &ws, &d).unwrap();
            let (us2, ws2) = unpack_uw(&packed, &d, 2);
            for k in 0..d.len() {
                assert!(us2[k].approx_eq(&us[k], 0.0));
                assert!(ws2[k].approx_eq(&ws[k], 0.0));
            }
        }
    }

    #[test]
    fn unpack_ignores_masked_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (us, ws) = random_uw(&mut rng, &[1]);
        let mut packed = pack_uw(&us, &ws, &[1]).unwrap();
        // garbage in masked positions must not leak through
        for i in [4, 5, 6, 7, 9, 10, 11] {
            packed[i] = 99.0;
        }
        let (us2, ws2) = unpack_uw(&packed, &[1], 2);
        assert!(us2[0].approx_eq(&us[0], 0.0));
        assert!(ws2[0].approx_eq(&ws[0], 0.0));
    }

    #[test]
    fn mask_counts_and_fixed_point() {
        assert!(stream_mask(&[2, 2], 2).iter().all(|&v| v == 1.0));
        let m = stream_mask(&[1], 2);
        assert_eq!(m.iter().filter(|v| **v == 1.0).count(), 5);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = vec![1, 2];
        let (us, ws) = random_uw(&mut rng, &d);
        let packed = pack_uw(&us, &ws, &d).unwrap();
        let mask = stream_mask(&d, 2);
        let masked: Vec<f64> = packed.iter().zip(&mask).map(|(p, m)| p * m).collect();
        assert_eq!(masked, packed);
        // idempotent under elementwise self-multiplication
        let sq: Vec<f64> = mask.iter().map(|m| m * m).collect();
        assert_eq!(sq, mask);
    }

    proptest! {
        #[test]
        fn prop_gram_roundtrip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed % 5) as usize;
            let g = random_hermitian(&mut rng, n);
            let back = unpack_gram(&pack_gram(&g).unwrap());
            prop_assert!(back.approx_eq(&g, 1e-15));
        }

        #[test]
        fn prop_uw_roundtrip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d: Vec<usize> = (0..2 + seed % 3).map(|_| 1 + rng.gen_range(0..2)).collect();
            let (us, ws) = random_uw(&mut rng, &d);
            let packed = pack_uw(&us, &ws, &d).unwrap();
            let (us2, ws2) = unpack_uw(&packed, &d, 2);
            for k in 0..d.len() {
                prop_assert!(us2[k].approx_eq(&us[k], 0.0));
                prop_assert!(ws2[k].approx_eq(&ws[k], 0.0));
            }
        }
    }
}
