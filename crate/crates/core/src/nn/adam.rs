//! Standard bias-corrected Adam over the trainable parameter fields.

use super::NetParams;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: NetParams,
    pub second_moment: NetParams,
    pub step_count: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &NetParams, lr: f64) -> AdamState {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One optimizer step in place. Running-statistic fields are untouched;
/// a parameter whose gradient stays identically zero never moves.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.epsilon);

    let mut m_fields = state.first_moment.fields_mut();
    let mut v_fields = state.second_moment.fields_mut();
    let g_fields = grads.fields();
    for (fi, (name, p)) in params.fields_mut().into_iter().enumerate() {
        if !NetParams::is_trainable(name) {
            continue;
        }
        let m = &mut m_fields[fi].1;
        let v = &mut v_fields[fi].1;
        let g = g_fields[fi].1;
        assert_eq!(p.len(), g.len(), "grad shape for {name}");
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetArch;

    fn small_params() -> NetParams {
        NetParams::init(NetArch { n_users: 2, n_rx: 2 }, 42)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = small_params();
        let before = p.clone();
        let grads = p.zeros_like();
        let mut state = AdamState::new(&p, 1e-3);
        for _ in 0..5 {
            adam_step(&mut p, &grads, &mut state);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut p = small_params();
        let before = p.clone();
        let mut grads = p.zeros_like();
        grads.out_b.iter_mut().for_each(|g| *g = 0.37);
        let lr = 1e-3;
        let mut state = AdamState::new(&p, lr);
        adam_step(&mut p, &grads, &mut state);
        for (a, b) in p.out_b.iter().zip(&before.out_b) {
            let step = b - a;
            assert!((step - lr).abs() < 1e-6, "step {step}");
        }
    }

    #[test]
    fn quadratic_bowl_descends() {
        // minimize 0.5 * sum(out_b^2): gradient = out_b. Start far enough
        // out that 100 steps stay in the descent phase.
        let mut p = small_params();
        p.out_b.iter_mut().enumerate().for_each(|(i, v)| *v = 5.0 + i as f64 * 0.1);
        let mut state = AdamState::new(&p, 1e-2);
        let first: f64 = p.out_b.iter().map(|v| 0.5 * v * v).sum();
        let mut last = f64::INFINITY;
        let mut decreasing_after_warmup = true;
        for step in 0..100 {
            let loss: f64 = p.out_b.iter().map(|v| 0.5 * v * v).sum();
            if step >= 10 && loss > last {
                decreasing_after_warmup = false;
            }
            last = loss;
            let mut grads = p.zeros_like();
            grads.out_b.copy_from_slice(&p.out_b);
            adam_step(&mut p, &grads, &mut state);
        }
        assert!(decreasing_after_warmup);
        assert!(last < 0.8 * first, "loss {first} -> {last}");
    }
}
