//! Negative weighted sum-rate as a training loss, differentiated end to
//! end: network output slots -> unpacked (U, W) -> X-step linear solve ->
//! V = H^H X -> power normalization -> per-user log-det rates.
//!
//! Gradients for complex intermediates use the convention
//! g = dL/dRe + i dL/dIm, so dL = Re tr(G^H dZ) and the product rules are
//! G_A = G_C B^H and G_B = A^H G_C for C = A B. The index network and the
//! hard stream mask are constants here; only main-network parameters
//! receive gradient.

use num_complex::Complex64;

use crate::channel::{weighted_gram, ChannelSample};
use crate::codec::{pack_gram, slot_len, unpack_uw, D_MAX};
use crate::error::{Error, Result};
use crate::numerics::{gram, herm_solve, CMat, Cholesky};

use super::{backward_batch, forward_batch, NetParams};

/// Re <a, b> over entries, i.e. Re tr(a^H b).
fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.conj() * y).re)
        .sum()
}

/// Loss and slot gradient for one sample given the hard-masked network
/// output. Fails with NotPositiveDefinite when the predicted receiver
/// state yields a degenerate X-step system (callers skip such samples).
pub fn rate_loss_and_slot_grad(s: &ChannelSample, slots: &[f64]) -> Result<(f64, Vec<f64>)> {
    debug_assert!(s.is_normalized());
    let nr = s.n_rx();
    let k = s.n_users();
    let (u, w_pred) = unpack_uw(slots, &s.d, nr);
    let w: Vec<CMat> = w_pred.iter().map(CMat::symmetrize).collect();

    // forward: receiver state -> X-step system
    let hbar = gram(&s.h);
    let hb: Vec<CMat> = (0..k).map(|i| hbar.row_block(i * nr, (i + 1) * nr)).collect();
    let uw: Vec<CMat> = (0..k).map(|i| u[i].mul(&w[i])).collect();
    let m: Vec<CMat> = (0..k).map(|i| uw[i].mul_adjoint(&u[i])).collect();
    let mut c_tr = 0.0;
    let mut a_raw = CMat::zeros(hbar.rows(), hbar.cols());
    for i in 0..k {
        let mut tr = 0.0;
        for t in 0..m[i].rows() {
            tr += m[i][(t, t)].re;
        }
        c_tr += s.alpha[i] * tr;
        a_raw = a_raw.add(&hb[i].adjoint_mul(&m[i].mul(&hb[i])).scale(s.alpha[i]));
    }
    a_raw = a_raw.add(&hbar.scale(c_tr));
    let chol = Cholesky::new(&a_raw)?;
    let r: Vec<CMat> = (0..k)
        .map(|i| hb[i].adjoint_mul(&uw[i]).scale(s.alpha[i]))
        .collect();
    let x: Vec<CMat> = r.iter().map(|ri| chol.solve(ri)).collect();

    // X -> beamformers, unit total power
    let vt: Vec<CMat> = x.iter().map(|xi| s.h.adjoint_mul(xi)).collect();
    let total: f64 = vt.iter().map(CMat::frob_norm_sq).sum();
    if total <= 0.0 {
        return Err(Error::AllZeroOutput);
    }
    let sqrt_t = total.sqrt();
    let v: Vec<CMat> = vt.iter().map(|m| m.scale(1.0 / sqrt_t)).collect();

    // rates
    let hk: Vec<CMat> = (0..k).map(|i| s.user_channel(i)).collect();
    let mut y = vec![Vec::with_capacity(k); k]; // y[k][j] = H_k V_j
    let mut b_mat = Vec::with_capacity(k);
    let mut c_mat = Vec::with_capacity(k);
    let mut loss = 0.0;
    for i in 0..k {
        let mut b = CMat::eye(nr);
        for j in 0..k {
            let yij = hk[i].mul(&v[j]);
            if j != i {
                b = b.add(&yij.mul_adjoint(&yij));
            }
            y[i].push(yij);
        }
        let c = b.add(&y[i][i].mul_adjoint(&y[i][i]));
        let rate = Cholesky::new(&c)?.logdet() - Cholesky::new(&b)?.logdet();
        loss -= s.alpha[i] * rate;
        b_mat.push(b);
        c_mat.push(c);
    }

    // ---- adjoint ----
    let mut g_v: Vec<CMat> = v.iter().map(|vi| CMat::zeros(vi.rows(), vi.cols())).collect();
    for i in 0..k {
        let eye = CMat::eye(nr);
        let g_c = herm_solve(&c_mat[i], &eye)?.scale(-s.alpha[i]);
        let g_b = herm_solve(&b_mat[i], &eye)?.scale(s.alpha[i]);
        for j in 0..k {
            let mut g_f = g_c.clone();
            if j != i {
                g_f = g_f.add(&g_b);
            }
            let g_y = g_f.mul(&y[i][j]).scale(2.0);
            g_v[j] = g_v[j].add(&hk[i].adjoint_mul(&g_y));
        }
    }

    // power normalization: V_j = Vt_j / sqrt(T)
    let c_dot: f64 = (0..k).map(|j| re_inner(&g_v[j], &vt[j])).sum();
    let g_vt: Vec<CMat> = (0..k)
        .map(|j| {
            g_v[j]
                .scale(1.0 / sqrt_t)
                .sub(&vt[j].scale(c_dot / (total * sqrt_t)))
        })
        .collect();

    // Vt_j = H^H X_j
    let g_x: Vec<CMat> = (0..k).map(|j| s.h.mul(&g_vt[j])).collect();

    // X_j = A^{-1} R_j with A Hermitian
    let g_r: Vec<CMat> = g_x.iter().map(|gi| chol.solve(gi)).collect();
    let mut g_a = CMat::zeros(hbar.rows(), hbar.cols());
    for j in 0..k {
        g_a = g_a.sub(&g_r[j].mul_adjoint(&x[j]));
    }
    let g_a = g_a.symmetrize();

    // A = sum alpha_i ReTr(M_i) Hbar + sum alpha_i Hb_i^H M_i Hb_i
    let t_coef = re_inner(&g_a, &hbar);
    let mut g_slots = vec![0.0; s.d.len() * slot_len(nr)];
    for i in 0..k {
        let mut g_m = hb[i].mul(&g_a).mul_adjoint(&hb[i]).scale(s.alpha[i]);
        let di = m[i].rows();
        for t in 0..di {
            g_m[(t, t)] += Complex64::new(s.alpha[i] * t_coef, 0.0);
        }
        // R_i = alpha_i Hb_i^H (U W)_i
        let mut g_uw = hb[i].mul(&g_r[i]).scale(s.alpha[i]);
        // M_i = (U W)_i U_i^H
        g_uw = g_uw.add(&g_m.mul(&u[i]));
        let mut g_u = g_m.adjoint_mul(&uw[i]);
        // (U W)_i = U_i W_i
        g_u = g_u.add(&g_uw.mul_adjoint(&w[i]));
        let g_w = u[i].adjoint_mul(&g_uw).symmetrize();

        // back to real slots
        let base = i * slot_len(nr);
        let dk = s.d[i];
        for col in 0..dk {
            for row in 0..nr {
                let g = g_u[(row, col)];
                g_slots[base + 2 * (col * nr + row)] = g.re;
                g_slots[base + 2 * (col * nr + row) + 1] = g.im;
            }
        }
        let wbase = base + 2 * nr * D_MAX;
        g_slots[wbase] = g_w[(0, 0)].re;
        if dk == 2 {
            g_slots[wbase + 1] = g_w[(0, 1)].re + g_w[(1, 0)].re;
            g_slots[wbase + 2] = g_w[(0, 1)].im - g_w[(1, 0)].im;
            g_slots[wbase + 3] = g_w[(1, 1)].re;
        }
    }
    Ok((loss, g_slots))
}

/// Negative weighted sum-rate of the reconstructed beamformers, plus
/// gradients for the main-network parameters. Runs the network with
/// batch statistics and the hard stream mask; index-network gradients
/// are exactly zero by contract.
pub fn unsupervised_loss(p: &NetParams, s: &ChannelSample) -> Result<(f64, NetParams)> {
    let input = pack_gram(&weighted_gram(s))?;
    let d: &[usize] = &s.d;
    let (outs, cache) = forward_batch(p, std::slice::from_ref(&input), &[d], true, true);
    let (loss, g_slots) = rate_loss_and_slot_grad(s, &outs[0])?;
    let grads = backward_batch(p, &cache, &[g_slots], false);
    Ok((loss, grads))
}
