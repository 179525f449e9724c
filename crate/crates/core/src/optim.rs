//! Adam with decoupled weight decay, keyed by parameter-block name.

use std::collections::HashMap;

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    state: HashMap<String, Moments>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, state: HashMap::new() }
    }

    /// Advances the shared step counter; call once before the updates of a step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates one parameter block. Blocks that first appear mid-run start
    /// from zero moments.
    pub fn update(&mut self, name: &str, params: &mut [f64], grads: &[f64], decay: bool) {
        debug_assert_eq!(params.len(), grads.len());
        let st = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| Moments { m: vec![0.0; params.len()], v: vec![0.0; params.len()] });
        let t = self.t.max(1);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
            st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
            if decay {
                params[i] -= self.lr * self.weight_decay * params[i];
            }
            let mhat = st.m[i] / c1;
            let vhat = st.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
