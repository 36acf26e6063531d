//! Rate evaluation and beamforming solvers.
//!
//! The reduced WMMSE iteration restricts every transmit beamformer to the
//! range space of the stacked channel, V_k = H^H X_k, which shrinks all
//! linear systems from N_T x N_T to KN_R x KN_R. Alongside it live the
//! classical full-space WMMSE (kept as a small-scale cross-check), the
//! zero-forcing baseline, and the map from predicted receiver state
//! {U_k, W_k} back to transmit beamformers.
//!
//! All solvers consume normalized samples (unit noise, unit power budget)
//! and return beamformer sets whose total power is exactly 1.

use std::time::Instant;

use crate::channel::ChannelSample;
use crate::error::{Error, Result};
use crate::numerics::{gram, herm_solve, logdet_hpd, trace_real, CMat, Cholesky};

/// Transmit beamformers, one N_T x d_k matrix per user.
#[derive(Clone, Debug)]
pub struct BeamformerSet {
    pub v: Vec<CMat>,
}

impl BeamformerSet {
    pub fn total_power(&self) -> f64 {
        self.v.iter().map(CMat::frob_norm_sq).sum()
    }

    pub fn zeros(s: &ChannelSample) -> BeamformerSet {
        BeamformerSet {
            v: s.d.iter().map(|&dk| CMat::zeros(s.n_tx(), dk)).collect(),
        }
    }
}

/// Iterate triple of the reduced WMMSE algorithm.
#[derive(Clone, Debug)]
pub struct WmmseState {
    /// X_k: KN_R x d_k
    pub x: Vec<CMat>,
    /// U_k: N_R x d_k
    pub u: Vec<CMat>,
    /// W_k: d_k x d_k, Hermitian PD
    pub w: Vec<CMat>,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 500,
            tol: 1e-6,
            trace: true,
        }
    }
}

/// Objective history of one solve. The per-iteration weighted sum-rate is
/// non-decreasing (block-coordinate ascent) up to 1e-8 slack.
#[derive(Clone, Debug, Default)]
pub struct SolveTrace {
    pub objective_per_iter: Vec<f64>,
    pub iterations: usize,
    pub wall_time: f64,
}

/// Rate of user k in nats under the normalized problem:
/// log det(I + H_k V_k V_k^H H_k^H (sum_{j!=k} H_k V_j V_j^H H_k^H + I)^{-1}).
pub fn user_rate(s: &ChannelSample, v: &BeamformerSet, k: usize) -> Result<f64> {
    debug_assert!(s.is_normalized(), "solvers consume normalized samples");
    let hk = s.user_channel(k);
    let nr = hk.rows();
    let mut b = CMat::eye(nr);
    for (j, vj) in v.v.iter().enumerate() {
        if j == k {
            continue;
        }
        let y = hk.mul(vj);
        b = b.add(&gram(&y));
    }
    let g = hk.mul(&v.v[k]);
    // det(I + G G^H B^{-1}) = det(I + G^H B^{-1} G), Hermitian PD either way
    let z = herm_solve(&b, &g)?;
    let m = CMat::eye(g.cols()).add(&g.adjoint_mul(&z));
    logdet_hpd(&m)
}

/// Weighted sum-rate sum_k alpha_k R_k in nats.
pub fn weighted_sum_rate(s: &ChannelSample, v: &BeamformerSet) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..s.n_users() {
        total += s.alpha[k] * user_rate(s, v, k)?;
    }
    Ok(total)
}

/// MSE matrix E_k for receiver u under beamformers v, with the power
/// budget absorbed into the noise term (normalized problem).
pub fn mse_matrix(s: &ChannelSample, v: &BeamformerSet, u: &CMat, k: usize) -> CMat {
    debug_assert!(s.is_normalized());
    let hk = s.user_channel(k);
    let dk = v.v[k].cols();
    let t0 = CMat::eye(dk).sub(&u.adjoint_mul(&hk.mul(&v.v[k])));
    let mut e = t0.mul_adjoint(&t0);
    for (m, vm) in v.v.iter().enumerate() {
        if m == k {
            continue;
        }
        let q = u.adjoint_mul(&hk.mul(vm));
        e = e.add(&q.mul_adjoint(&q));
    }
    let total_power: f64 = v.v.iter().map(CMat::frob_norm_sq).sum();
    e.add(&u.adjoint_mul(u).scale(total_power))
}

fn hbar_block(hbar: &CMat, k: usize, nr: usize) -> CMat {
    hbar.row_block(k * nr, (k + 1) * nr)
}

/// Re tr(A B) without forming the product.
fn trace_mul_real(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.cols(), b.rows());
    debug_assert_eq!(a.rows(), b.cols());
    let n = a.rows();
    let m = a.cols();
    let mut t = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = a[(i, j)] * b[(j, i)];
            t += p.re;
        }
    }
    t
}

fn x_update_with(s: &ChannelSample, state: &WmmseState, hbar: &CMat) -> Result<Vec<CMat>> {
    let nr = s.n_rx();
    let n = hbar.rows();
    let mut m_trace = 0.0;
    let mut interference = CMat::zeros(n, n);
    let mut uw = Vec::with_capacity(s.n_users());
    for k in 0..s.n_users() {
        let p = state.u[k].mul(&state.w[k]);
        let m = p.mul_adjoint(&state.u[k]);
        m_trace += s.alpha[k] * trace_real(&m).expect("square");
        let hb = hbar_block(hbar, k, nr);
        interference = interference.add(&hb.adjoint_mul(&m.mul(&hb)).scale(s.alpha[k]));
        uw.push(p);
    }
    let a = hbar.scale(m_trace).add(&interference);
    let chol = Cholesky::new(&a)?;
    let mut x = Vec::with_capacity(s.n_users());
    for k in 0..s.n_users() {
        let rhs = hbar_block(hbar, k, nr).adjoint_mul(&uw[k]).scale(s.alpha[k]);
        x.push(chol.solve(&rhs));
    }
    Ok(x)
}

fn u_update_with(s: &ChannelSample, state: &WmmseState, hbar: &CMat) -> Result<Vec<CMat>> {
    let nr = s.n_rx();
    let n = hbar.rows();
    let mut xx = CMat::zeros(n, n);
    for xk in &state.x {
        xx = xx.add(&xk.mul_adjoint(xk));
    }
    let noise = trace_mul_real(hbar, &xx);
    let mut u = Vec::with_capacity(s.n_users());
    for k in 0..s.n_users() {
        let hb = hbar_block(hbar, k, nr);
        let j = hb.mul(&xx).mul_adjoint(&hb).add(&CMat::eye(nr).scale(noise));
        let rhs = hb.mul(&state.x[k]);
        u.push(herm_solve(&j, &rhs)?);
    }
    Ok(u)
}

fn w_update_with(s: &ChannelSample, state: &WmmseState, hbar: &CMat) -> Result<Vec<CMat>> {
    let nr = s.n_rx();
    let mut w = Vec::with_capacity(s.n_users());
    for k in 0..s.n_users() {
        let hb = hbar_block(hbar, k, nr);
        let e = CMat::eye(state.x[k].cols()).sub(&state.u[k].adjoint_mul(&hb.mul(&state.x[k])));
        let inv = herm_solve(&e.symmetrize(), &CMat::eye(e.rows()))
            .map_err(|_| Error::SingularMse(k))?;
        w.push(inv.symmetrize());
    }
    Ok(w)
}

/// One X step of the reduced WMMSE iteration (shared system matrix,
/// factorized once, solved for all K right-hand sides).
pub fn x_update(s: &ChannelSample, state: &WmmseState) -> Result<Vec<CMat>> {
    x_update_with(s, state, &gram(&s.h))
}

/// One U step (per-user N_R x N_R solves).
pub fn u_update(s: &ChannelSample, state: &WmmseState) -> Result<Vec<CMat>> {
    u_update_with(s, state, &gram(&s.h))
}

/// One W step: W_k = (I - U_k^H Hbar_k X_k)^{-1}, symmetrized.
pub fn w_update(s: &ChannelSample, state: &WmmseState) -> Result<Vec<CMat>> {
    w_update_with(s, state, &gram(&s.h))
}

/// Map X to transmit beamformers: V_k = H^H X_k, then rescale so the
/// total power is exactly 1.
fn beamformers_from_x(s: &ChannelSample, x: &[CMat]) -> Result<BeamformerSet> {
    let v: Vec<CMat> = x.iter().map(|xk| s.h.adjoint_mul(xk)).collect();
    normalize_power(v)
}

fn normalize_power(v: Vec<CMat>) -> Result<BeamformerSet> {
    let total: f64 = v.iter().map(CMat::frob_norm_sq).sum();
    if total <= 0.0 {
        return Err(Error::AllZeroOutput);
    }
    let scale = 1.0 / total.sqrt();
    Ok(BeamformerSet {
        v: v.into_iter().map(|vk| vk.scale(scale)).collect(),
    })
}

/// Deterministic feasible start: V_k = the d_k leading columns of H_k^H
/// scaled to power 1/K per user, X recovered by a least-squares fit of
/// H^H X = V.
fn init_state(s: &ChannelSample, hbar: &CMat) -> Result<WmmseState> {
    let k = s.n_users();
    let mut x = Vec::with_capacity(k);
    let chol = Cholesky::new(hbar)?;
    for kk in 0..k {
        let dk = s.d[kk];
        let cols = s.user_channel(kk).adjoint().col_block(0, dk);
        let norm_sq = cols.frob_norm_sq();
        assert!(norm_sq > 0.0, "init on a zero channel");
        let v0 = cols.scale((1.0 / (k as f64 * norm_sq)).sqrt());
        // least squares: (H H^H) X = H V
        x.push(chol.solve(&s.h.mul(&v0)));
    }
    let mut state = WmmseState {
        x,
        u: Vec::new(),
        w: Vec::new(),
    };
    state.u = u_update_with(s, &state, hbar)?;
    state.w = w_update_with(s, &state, hbar)?;
    Ok(state)
}

/// Reduced WMMSE: iterate U -> W -> X until the objective change drops
/// below tol or max_iter is reached. Returns the final state, the
/// power-normalized beamformers, and the (monotone) objective trace.
pub fn rwmmse_solve(
    s: &ChannelSample,
    opts: &SolveOptions,
) -> Result<(WmmseState, BeamformerSet, SolveTrace)> {
    debug_assert!(s.is_normalized());
    assert!(opts.max_iter >= 1 && opts.tol > 0.0);
    let start = Instant::now();
    if s.h.frob_norm_sq() == 0.0 {
        let state = WmmseState {
            x: s.d.iter().map(|&dk| CMat::zeros(s.h.rows(), dk)).collect(),
            u: s.d.iter().map(|&dk| CMat::zeros(s.n_rx(), dk)).collect(),
            w: s.d.iter().map(|&dk| CMat::eye(dk)).collect(),
        };
        let trace = SolveTrace {
            objective_per_iter: vec![0.0],
            iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
        };
        return Ok((state, BeamformerSet::zeros(s), trace));
    }

    let hbar = gram(&s.h);
    let mut state = init_state(s, &hbar)?;
    let mut trace = SolveTrace::default();
    let mut prev = weighted_sum_rate(s, &beamformers_from_x(s, &state.x)?)?;
    if opts.trace {
        trace.objective_per_iter.push(prev);
    }
    for it in 1..=opts.max_iter {
        state.u = u_update_with(s, &state, &hbar).map_err(|e| e.at_iteration(it))?;
        state.w = w_update_with(s, &state, &hbar).map_err(|e| e.at_iteration(it))?;
        state.x = x_update_with(s, &state, &hbar).map_err(|e| e.at_iteration(it))?;
        let obj = weighted_sum_rate(s, &beamformers_from_x(s, &state.x)?)?;
        if opts.trace {
            trace.objective_per_iter.push(obj);
        }
        trace.iterations = it;
        if (obj - prev).abs() < opts.tol {
            prev = obj;
            break;
        }
        prev = obj;
    }
    let _ = prev;
    let v = beamformers_from_x(s, &state.x)?;
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((state, v, trace))
}

/// Classical WMMSE over unrestricted V_k (N_T x N_T systems). Small-dim
/// cross-check for the reduced iteration.
pub fn full_wmmse_solve(
    s: &ChannelSample,
    opts: &SolveOptions,
) -> Result<(BeamformerSet, SolveTrace)> {
    debug_assert!(s.is_normalized());
    let start = Instant::now();
    if s.h.frob_norm_sq() == 0.0 {
        let trace = SolveTrace {
            objective_per_iter: vec![0.0],
            iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
        };
        return Ok((BeamformerSet::zeros(s), trace));
    }

    let k = s.n_users();
    let nt = s.n_tx();
    let nr = s.n_rx();
    // MRT start, power 1/K per user
    let mut v: Vec<CMat> = (0..k)
        .map(|kk| {
            let cols = s.user_channel(kk).adjoint().col_block(0, s.d[kk]);
            let norm_sq = cols.frob_norm_sq();
            cols.scale((1.0 / (k as f64 * norm_sq)).sqrt())
        })
        .collect();

    let mut trace = SolveTrace::default();
    let mut prev = weighted_sum_rate(s, &normalize_power(v.clone())?)?;
    if opts.trace {
        trace.objective_per_iter.push(prev);
    }
    for it in 1..=opts.max_iter {
        let total: f64 = v.iter().map(CMat::frob_norm_sq).sum();
        let mut u = Vec::with_capacity(k);
        let mut w = Vec::with_capacity(k);
        for kk in 0..k {
            let hk = s.user_channel(kk);
            let mut j = CMat::eye(nr).scale(total);
            for vi in &v {
                let y = hk.mul(vi);
                j = j.add(&gram(&y));
            }
            let uk = herm_solve(&j, &hk.mul(&v[kk])).map_err(|e| e.at_iteration(it))?;
            let e = CMat::eye(s.d[kk]).sub(&uk.adjoint_mul(&hk.mul(&v[kk])));
            let wk = herm_solve(&e.symmetrize(), &CMat::eye(s.d[kk]))
                .map_err(|_| Error::SingularMse(kk).at_iteration(it))?
                .symmetrize();
            u.push(uk);
            w.push(wk);
        }
        let mut m_trace = 0.0;
        let mut a = CMat::zeros(nt, nt);
        for kk in 0..k {
            let m = u[kk].mul(&w[kk]).mul_adjoint(&u[kk]);
            m_trace += s.alpha[kk] * trace_real(&m).expect("square");
            let hk = s.user_channel(kk);
            a = a.add(&hk.adjoint_mul(&m.mul(&hk)).scale(s.alpha[kk]));
        }
        a = a.add(&CMat::eye(nt).scale(m_trace));
        let chol = Cholesky::new(&a).map_err(|e| e.at_iteration(it))?;
        for kk in 0..k {
            let rhs = s
                .user_channel(kk)
                .adjoint_mul(&u[kk].mul(&w[kk]))
                .scale(s.alpha[kk]);
            v[kk] = chol.solve(&rhs);
        }
        let obj = weighted_sum_rate(s, &normalize_power(v.clone())?)?;
        if opts.trace {
            trace.objective_per_iter.push(obj);
        }
        trace.iterations = it;
        if (obj - prev).abs() < opts.tol {
            break;
        }
        prev = obj;
    }
    let out = normalize_power(v)?;
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((out, trace))
}

/// Zero-forcing baseline along the channel pseudo-inverse. Single-stream
/// users keep whichever of their two pseudo-inverse columns yields the
/// larger post-ZF rate; power splits equally over retained streams. Does
/// not look at the priorities at all.
pub fn zf_solve(s: &ChannelSample) -> Result<BeamformerSet> {
    debug_assert!(s.is_normalized());
    let nr = s.n_rx();
    let hbar = gram(&s.h);
    let z = match herm_solve(&hbar, &s.h) {
        Ok(z) => z,
        Err(Error::NotPositiveDefinite { .. }) => return Err(Error::SingularChannel),
        Err(e) => return Err(e),
    };
    // pinv = H^H (H H^H)^{-1} = z^H; column i satisfies H * col = e_i
    let pinv = z.adjoint();
    let total_streams: usize = s.d.iter().sum();
    let per_stream = 1.0 / total_streams as f64;
    let mut v = Vec::with_capacity(s.n_users());
    for (kk, &dk) in s.d.iter().enumerate() {
        let cols: Vec<CMat> = (0..nr).map(|i| pinv.column(kk * nr + i)).collect();
        let keep: Vec<usize> = if dk == nr {
            (0..nr).collect()
        } else {
            // post-ZF rate of column c at power p is ln(1 + p/|c|^2);
            // ties break toward the lower index
            let mut best = 0;
            let mut best_rate = f64::NEG_INFINITY;
            for (i, c) in cols.iter().enumerate() {
                let n2 = c.frob_norm_sq();
                if n2 == 0.0 {
                    return Err(Error::SingularChannel);
                }
                let rate = (1.0 + per_stream / n2).ln();
                if rate > best_rate {
                    best_rate = rate;
                    best = i;
                }
            }
            vec![best]
        };
        let mut vk = CMat::zeros(s.n_tx(), dk);
        for (slot, &i) in keep.iter().enumerate() {
            let c = &cols[i];
            let scale = (per_stream / c.frob_norm_sq()).sqrt();
            for r in 0..s.n_tx() {
                vk[(r, slot)] = c[(r, 0)] * scale;
            }
        }
        v.push(vk);
    }
    Ok(BeamformerSet { v })
}

/// Rebuild transmit beamformers from receiver state: form M_k from
/// (U_k, W_k), assemble the X-step system, solve, map V_k = H^H X_k, and
/// rescale to unit total power.
pub fn reconstruct_v(s: &ChannelSample, u: &[CMat], w: &[CMat]) -> Result<BeamformerSet> {
    debug_assert!(s.is_normalized());
    if u.iter().zip(w).all(|(uk, wk)| uk.mul(wk).frob_norm_sq() == 0.0) {
        return Err(Error::AllZeroOutput);
    }
    let state = WmmseState {
        x: Vec::new(),
        u: u.to_vec(),
        w: w.iter().map(CMat::symmetrize).collect(),
    };
    let hbar = gram(&s.h);
    let state = WmmseState {
        x: x_update_with(s, &state, &hbar)?,
        ..state
    };
    beamformers_from_x(s, &state.x)
}
