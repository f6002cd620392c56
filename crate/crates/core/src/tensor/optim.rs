use super::ParamStore;

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// AdamW with decoupled weight decay.
///
/// Decay is applied to tensors with two or more dimensions (weights and
/// embeddings); biases, gains and vectors are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    state: Vec<Vec<AdamWState>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, state: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every store, in the order given. The order must be
    /// the same on every call.
    pub fn step(&mut self, stores: &mut [&mut ParamStore], lr: f64) {
        self.step += 1;
        if self.state.len() < stores.len() {
            self.state.resize_with(stores.len(), Vec::new);
        }
        for (store, states) in stores.iter_mut().zip(&mut self.state) {
            if store.is_frozen() {
                continue;
            }
            if states.len() < store.len() {
                states.resize_with(store.len(), AdamWState::default);
            }
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                let grad = store.grad(id).to_vec();
                let decay = if store.value(id).shape().len() >= 2 { self.weight_decay } else { 0.0 };
                let st = &mut states[id.index()];
                adamw_step(
                    store.value_mut(id).data_mut(),
                    &grad,
                    st,
                    self.step,
                    lr,
                    decay,
                    (self.beta1, self.beta2, self.eps),
                );
            }
        }
    }
}

/// A single AdamW update of `params` in place. `t` is the 1-based step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    t: u64,
    lr: f64,
    weight_decay: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) {
    if state.m.len() != params.len() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    }
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * params[i]);
    }
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(stores: &mut [&mut ParamStore], max_norm: f64) -> f64 {
    let norm = stores.iter().map(|s| s.grad_norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for s in stores.iter_mut() {
            let ids: Vec<_> = s.ids().collect();
            for id in ids {
                s.grad_mut(id).iter_mut().for_each(|g| *g *= f);
            }
        }
    }
    norm
}

/// Linear warmup to the peak rate, then linear decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let rest = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let done = (step - self.warmup_steps) as f64 / rest as f64;
        self.peak * (1.0 - done).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn adamw_scalar_matches_hand_derivation() {
        // state after some earlier steps: m = 0.2, v = 0.05, now at t = 3
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (p0, g, lr, wd) = (1.5, -0.4, 1e-2, 0.01);
        let mut st = AdamWState { m: vec![0.2], v: vec![0.05] };
        let mut p = [p0];
        adamw_step(&mut p, &[g], &mut st, 3, lr, wd, (b1, b2, eps));

        let m = 0.9 * 0.2 + 0.1 * -0.4; // 0.14
        let v = 0.999 * 0.05 + 0.001 * 0.16; // 0.05011
        let mhat = m / (1.0 - 0.9f64.powi(3));
        let vhat = v / (1.0 - 0.999f64.powi(3));
        let want = p0 - lr * (mhat / (vhat.sqrt() + eps) + wd * p0);
        assert!((p[0] - want).abs() < 1e-15);
        assert!((st.m[0] - 0.14).abs() < 1e-15);
        assert!((st.v[0] - 0.05011).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::vector(vec![0.0, 0.0]));
        s.grad_mut(id).copy_from_slice(&[3.0, 4.0]);
        let before = clip_grad_norm(&mut [&mut s], 1.0);
        assert_eq!(before, 5.0);
        assert!((s.grad(id)[0] - 0.6).abs() < 1e-12);
        assert!((s.grad(id)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LinearSchedule { peak: 1.0, warmup_steps: 4, total_steps: 12 };
        assert_eq!(s.lr(0), 0.25);
        assert_eq!(s.lr(3), 1.0);
        assert_eq!(s.lr(4), 1.0);
        assert_eq!(s.lr(8), 0.5);
        assert_eq!(s.lr(12), 0.0);
    }

    #[test]
    fn frozen_stores_are_not_updated() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::matrix(1, 1, vec![1.0]).unwrap());
        s.grad_mut(id)[0] = 1.0;
        s.freeze();
        let mut opt = AdamW::new(0.01);
        opt.step(&mut [&mut s], 0.1);
        assert_eq!(s.value(id).data(), &[1.0]);
    }
}
